"""Achievable rates and the binary-relaxation penalty, plus feasibility checks.

Array conventions: ``G`` is ``(K, M)`` user-by-UAV gains, ``P`` is ``(M, N)``
powers and ``C`` is ``(K, M, N)`` association weights. Rates are in
bits/s/Hz.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SolutionState",
    "RateBreakdown",
    "sinr",
    "rates",
    "penalty",
    "objective_Z",
    "max_violation",
    "constraint_violations",
    "rate_grad_X",
]

C_ZERO = 1e-12


@dataclass(frozen=True)
class SolutionState:
    X: np.ndarray
    P: np.ndarray
    C: np.ndarray
    Lambda: np.ndarray
    outer: int = 0
    inner: int = 0

    def __post_init__(self):
        for name in ("X", "P", "C", "Lambda"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.C.shape

    def with_(self, **changes) -> "SolutionState":
        return replace(self, **changes)


@dataclass(frozen=True)
class RateBreakdown:
    sinr: np.ndarray
    rate_kmn: np.ndarray
    rate_user: np.ndarray
    min_rate: float
    bottleneck_user: int
    penalty: float = 0.0
    Z: float = field(default=float("nan"))


def sinr(P, G, noise_power: float) -> np.ndarray:
    """SINR_{k,m,n} = p_mn g_km / (sum_{j != m} p_jn g_kj + sigma^2)."""
    P = np.asarray(P, dtype=float)
    G = np.asarray(G, dtype=float)
    recv = G[:, :, None] * P[None, :, :]  # (K, M, N)
    total = recv.sum(axis=1, keepdims=True)
    return recv / (total - recv + noise_power)


def rates(P, C, G, noise_power: float) -> RateBreakdown:
    gamma = sinr(P, G, noise_power)
    C = np.asarray(C, dtype=float)
    c = np.where(C < C_ZERO, 0.0, C)
    r = c * np.log2(1.0 + gamma)
    ru = r.sum(axis=(1, 2))
    k = int(np.argmin(ru))
    return RateBreakdown(gamma, r, ru, float(ru[k]), k)


def penalty(C, Lambda) -> float:
    """-sum lambda * c * (1 - c); never positive for lambda >= 0."""
    C = np.asarray(C, dtype=float)
    return -float(np.sum(np.asarray(Lambda) * C * (1.0 - C)))


def objective_Z(P, C, Lambda, G, noise_power: float) -> RateBreakdown:
    """min_k R_k + penalty, returned inside the full rate breakdown."""
    rb = rates(P, C, G, noise_power)
    rho = penalty(C, Lambda)
    return replace(rb, penalty=rho, Z=rb.min_rate + rho)


def max_violation(C) -> float:
    C = np.asarray(C, dtype=float)
    return float(np.max(C * (1.0 - C))) if C.size else 0.0


def constraint_violations(state: SolutionState, p_max: float, area, h_min: float,
                          d_min: float, binary: bool = False) -> dict[str, float]:
    """Largest violation of each constraint group (0 when satisfied).

    ``area`` is ``(x_D, y_D)``. Keys name the constraint groups: ``orthogonal``
    (one user per UAV subcarrier), ``one_to_one`` (each user served once),
    ``power_nonneg``, ``power_max``, ``region``, ``separation``, ``c_box`` and,
    when ``binary`` is set, ``binary``.
    """
    X, P, C = state.X, state.P, state.C
    out = {
        "orthogonal": max(0.0, float(np.max(C.sum(axis=0) - 1.0))),
        "one_to_one": float(np.max(np.abs(C.sum(axis=(1, 2)) - 1.0))),
        "power_nonneg": max(0.0, float(np.max(-P))),
        "power_max": max(0.0, float(np.max(P.sum(axis=1) - p_max))),
        "c_box": max(0.0, float(np.max(-C)), float(np.max(C - 1.0))),
    }
    lo = np.array([0.0, 0.0, h_min])
    hi = np.array([area[0], area[1], np.inf])
    out["region"] = max(0.0, float(np.max(lo - X)), float(np.max(X - hi)))
    sep = 0.0
    M = len(X)
    for m in range(M):
        for j in range(m + 1, M):
            sep = max(sep, d_min - float(np.linalg.norm(X[m] - X[j])))
    out["separation"] = sep
    if binary:
        out["binary"] = float(np.max(np.minimum(np.abs(C), np.abs(C - 1.0))))
    return out


def rate_grad_X(k: int, P, C, G, dG, noise_power: float) -> np.ndarray:
    """Gradient of R_k with respect to the UAV positions, shape ``(M, 3)``.

    Direct chain rule through the SINR; used as an independent check of the
    surrogate-based directional derivatives.
    """
    P = np.asarray(P, dtype=float)
    C = np.asarray(C, dtype=float)
    g = G[k]  # (M,)
    recv = g[:, None] * P  # (M, N)
    total = recv.sum(axis=0) + noise_power  # (N,)
    inter = total[None, :] - recv  # (M, N)
    ln2 = np.log(2.0)
    M = len(g)
    out = np.zeros((M, 3))
    # R_kmn = c (log2(total_n) - log2(inter_mn))
    for m in range(M):
        for n in range(P.shape[1]):
            c = C[k, m, n]
            if c < C_ZERO:
                continue
            # d total_n / d x_j = p_jn dg_kj ; d inter_mn / d x_j = same for j != m
            for j in range(M):
                d = P[j, n] * dG[k, j]
                out[j] += c / ln2 * d / total[n]
                if j != m:
                    out[j] -= c / ln2 * d / inter[m, n]
    return out
