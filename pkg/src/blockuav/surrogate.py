"""Concave surrogates of the penalised max-min objective.

Two surrogates are built at the current iterate:

* positioning (variables X, with P and C fixed): the gain of each link is
  replaced by a concave quadratic in the UAV position plus a linear
  correction so that value and gradient match at the expansion point; the
  rate terms are linearised in the gains.
* resource allocation (variables P and C, with X fixed): the interference
  log-term is upper-bounded by its tangent while the binary penalty is
  lower-bounded by its tangent. The rate itself is linear in C.

Rates use log base 2, so every first-order term of ``log2(1 + y)`` carries a
``1 / ln 2`` factor. The ``B`` coefficients are stored without it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .netmodel import C_ZERO, penalty
from .subsolver import MaximinProblem

__all__ = [
    "PositioningSurrogate",
    "RaSurrogate",
    "build_positioning_surrogate",
    "build_ra_surrogate",
    "linearize_separation",
    "separation_lhs",
    "SurrogateError",
]

LN2 = np.log(2.0)


class SurrogateError(ValueError):
    pass


def _ro(*arrays):
    for a in arrays:
        a.setflags(write=False)


def linearize_separation(X_l, d_min: float):
    """Linear inner approximation of the pairwise separation constraints.

    For each pair m < j the constraint
    ``2 (x_m^l - x_j^l).(x_m - x_j) - |x_m^l - x_j^l|^2 >= d_min^2``
    is returned as a row of ``A x <= b`` over the flattened ``(M, 3)``
    positions. Also returns the list of pairs.
    """
    X_l = np.asarray(X_l, dtype=float).reshape(-1, 3)
    M = len(X_l)
    pairs = [(m, j) for m in range(M) for j in range(m + 1, M)]
    A = np.zeros((len(pairs), 3 * M))
    b = np.zeros(len(pairs))
    for r, (m, j) in enumerate(pairs):
        delta = X_l[m] - X_l[j]
        nrm2 = float(delta @ delta)
        if nrm2 == 0.0:
            raise SurrogateError(f"UAVs {m} and {j} coincide")
        A[r, 3 * m:3 * m + 3] = -2.0 * delta
        A[r, 3 * j:3 * j + 3] = 2.0 * delta
        b[r] = -d_min**2 - nrm2
    return A, b, pairs


def separation_lhs(X, X_l) -> np.ndarray:
    """Left-hand sides of the linearised separation constraints at ``X``."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    X_l = np.asarray(X_l, dtype=float).reshape(-1, 3)
    M = len(X)
    out = []
    for m in range(M):
        for j in range(m + 1, M):
            d_l = X_l[m] - X_l[j]
            out.append(2.0 * d_l @ (X[m] - X[j]) - d_l @ d_l)
    return np.array(out)


@dataclass(frozen=True)
class PositioningSurrogate:
    """Per-user concave surrogate of R_k in the UAV positions.

    Coefficient arrays (read-only):
      ``B_hat[k,m,n]``  c / (1 + sum_j p_jn g_kj / sigma^2)
      ``B_bar[k,m,n]``  c / (1 + sum_{j != m} p_jn g_kj / sigma^2)
      ``A[k,m]``        alpha beta / (2 |x_m - u_k|^(2 + alpha))
      ``delta[k,m]``    grad g - grad g_tilde at the expansion point
      ``grad_g[k,m]``   exact gain gradient at the expansion point
      ``R_hat0``, ``R_bar0``  the two log terms of the rate at the expansion point
    The surrogate of user k is

      f_k(X) = sum (R_hat0 - R_bar0)[k]
               + sum_j [ -quad[k,j] |x_j - u_k|^2 + lin[k,j].x_j ] + const[k]

    with ``quad >= 0``, so every piece is concave.
    """

    X_l: np.ndarray
    users: np.ndarray
    B_hat: np.ndarray
    B_bar: np.ndarray
    A: np.ndarray
    delta: np.ndarray
    grad_g: np.ndarray
    gains: np.ndarray
    R_hat0: np.ndarray
    R_bar0: np.ndarray
    quad: np.ndarray
    lin: np.ndarray
    const: np.ndarray
    rho: float
    sep_A: np.ndarray
    sep_b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def K(self) -> int:
        return self.quad.shape[0]

    @property
    def M(self) -> int:
        return self.quad.shape[1]

    def pieces(self, x):
        """Values ``(K,)`` and Jacobian ``(K, 3M)`` at flattened positions."""
        X = np.asarray(x, dtype=float).reshape(-1, 3)
        diff = X[None, :, :] - self.users[:, None, :]  # (K, M, 3)
        sq = np.einsum("kmi,kmi->km", diff, diff)
        lin_t = np.einsum("kmi,mi->km", self.lin, X)
        vals = self.const + np.sum(-self.quad * sq + lin_t, axis=1)
        jac = (-2.0 * self.quad[:, :, None] * diff + self.lin).reshape(self.K, -1)
        return vals, jac

    def piece_hess(self, x, w) -> np.ndarray:
        """sum_k w_k * Hessian of piece k (diagonal, constant in x)."""
        d = -2.0 * (np.asarray(w) @ self.quad)  # (M,)
        return np.diag(np.repeat(d, 3))

    def rate_surrogates(self, X) -> np.ndarray:
        return self.pieces(np.ravel(X))[0]

    def value(self, X) -> float:
        """Z^Pos(X) = min_k f_k(X) + rho (rho is the penalty at the expansion point)."""
        return float(np.min(self.rate_surrogates(X))) + self.rho

    def gradient(self, X, k: Optional[int] = None) -> np.ndarray:
        """Gradient ``(M, 3)`` of user k's piece (default: the minimising user)."""
        vals, jac = self.pieces(np.ravel(X))
        if k is None:
            k = int(np.argmin(vals))
        return jac[k].reshape(-1, 3)

    def problem(self, x0=None, z_cap: Optional[float] = None) -> MaximinProblem:
        x0 = self.X_l.ravel() if x0 is None else np.ravel(x0)
        ub = self.ub.copy()
        if z_cap is not None:
            ub[2::3] = np.minimum(ub[2::3], z_cap)
        scale = np.full(x0.size, 100.0)
        return MaximinProblem(self.pieces, x0, A_ub=self.sep_A, b_ub=self.sep_b,
                              lb=self.lb, ub=ub, scale=scale, piece_hess=self.piece_hess)


def build_positioning_surrogate(X_l, P, C, Lambda, users, links, noise_power: float,
                                area, h_min: float, d_min: float) -> PositioningSurrogate:
    """Assemble the positioning surrogate at ``X_l``.

    ``links`` is the :class:`~blockuav.channel.LinkEval` at ``X_l`` (gains,
    gradients and the channel parameters alpha, beta).
    """
    X_l = np.asarray(X_l, dtype=float).reshape(-1, 3)
    users = np.asarray(users, dtype=float).reshape(-1, 3)
    P = np.asarray(P, dtype=float)
    C = np.asarray(C, dtype=float)
    K, M, N = C.shape
    G, dG, alpha, beta = links.G, links.dG, links.alpha, links.beta

    diff = X_l[None, :, :] - users[:, None, :]
    dist2 = np.einsum("kmi,kmi->km", diff, diff)
    dist = np.sqrt(dist2)
    if np.any(dist < 1.0):
        raise SurrogateError("a UAV-user distance is below the 1 m reference distance")

    A = alpha * beta / (2.0 * dist ** (2.0 + alpha))
    grad_gt = -(G * alpha / dist2)[:, :, None] * diff
    delta = dG - grad_gt

    snr = G[:, :, None] * P[None, :, :] / noise_power  # (K, M, N): p_jn g_kj / s2
    total = snr.sum(axis=1)  # (K, N)
    inter = total[:, None, :] - snr  # (K, M, N)
    B_hat = C / (1.0 + total[:, None, :])
    B_bar = C / (1.0 + inter)
    R_hat0 = C * np.log2(1.0 + total[:, None, :])
    R_bar0 = C * np.log2(1.0 + inter)
    R_hat0 = np.where(C < C_ZERO, 0.0, R_hat0)
    R_bar0 = np.where(C < C_ZERO, 0.0, R_bar0)

    w = P / noise_power  # (M, N): p_jn / sigma^2
    # W[k, j] = sum_{m,n} B_hat[k,m,n] p_jn / s2
    W = np.einsum("kmn,jn->kj", B_hat, w)
    # V[k, j] = sum_n p_jn / s2 * (sum_m B_bar[k,m,n] - B_bar[k,j,n])
    V = np.einsum("kn,jn->kj", B_bar.sum(axis=1), w) - np.einsum("kjn,jn->kj", B_bar, w)

    quad = W * A / LN2
    lin = (W[:, :, None] * delta - V[:, :, None] * dG) / LN2  # (K, M, 3)
    # f_k = sum(R_hat0 - R_bar0) + sum_j [quad (|x_j^l - u|^2 - |x_j - u|^2)
    #       + lin.(x_j - x_j^l)], with the X-independent parts folded into const
    const = ((R_hat0 - R_bar0).sum(axis=(1, 2))
             + np.sum(quad * dist2, axis=1)
             - np.einsum("kmi,mi->k", lin, X_l))

    sep_A, sep_b, _ = linearize_separation(X_l, d_min)
    lb = np.tile([0.0, 0.0, h_min], M)
    ub = np.tile([float(area[0]), float(area[1]), np.inf], M)
    rho = penalty(C, Lambda)
    out = PositioningSurrogate(X_l.copy(), users.copy(), B_hat, B_bar, A, delta, dG.copy(),
                               G.copy(), R_hat0, R_bar0, quad, lin, const, rho, sep_A,
                               sep_b, lb, ub)
    _ro(out.X_l, out.users, B_hat, B_bar, A, delta, out.grad_g, out.gains, R_hat0, R_bar0,
        quad, lin, const, sep_A, sep_b, lb, ub)
    return out


@dataclass(frozen=True)
class RaSurrogate:
    """Concave surrogate of the penalised objective in (P, C) at fixed X.

    Coefficient arrays (read-only):
      ``Bp_hat[k,m,n]``  c / (1 + sum_j p_jn g_kj / sigma^2)
      ``Bp_bar[k,m,n]``  c / (1 + sum_{j != m} p_jn g_kj / sigma^2)
      ``log_rate[k,m,n]`` log2(1 + SINR) at the expansion point (rate per unit c)
      ``pen_lin[k,m,n]``  lambda (2 c^l - 1), ``pen_const`` = -sum lambda (c^l)^2
      ``R_bar0``, ``R0``  interference log term and rate at the expansion point
    """

    P_l: np.ndarray
    C_l: np.ndarray
    Lambda: np.ndarray
    gains: np.ndarray
    noise_power: float
    p_max: float
    Bp_hat: np.ndarray
    Bp_bar: np.ndarray
    log_rate: np.ndarray
    R_bar0: np.ndarray
    R0: np.ndarray
    pen_lin: np.ndarray
    pen_const: float
    fix_association: bool = False

    @property
    def shape(self):
        return self.C_l.shape

    # -- exact pieces of the surrogate, useful for checks ----------------
    def r_hat(self, P) -> np.ndarray:
        """c^l log2(1 + sum_j p_jn g_kj / sigma^2), shape ``(K, M, N)``."""
        total = np.einsum("km,mn->kn", self.gains, P) / self.noise_power
        out = self.C_l * np.log2(1.0 + total)[:, None, :]
        return np.where(self.C_l < C_ZERO, 0.0, out)

    def r_bar(self, P) -> np.ndarray:
        """Exact interference term c^l log2(1 + sum_{j != m} p_jn g_kj / sigma^2)."""
        snr = self.gains[:, :, None] * P[None, :, :] / self.noise_power
        inter = snr.sum(axis=1, keepdims=True) - snr
        out = self.C_l * np.log2(1.0 + inter)
        return np.where(self.C_l < C_ZERO, 0.0, out)

    def r_bar_ub(self, P) -> np.ndarray:
        """Tangent upper bound of :meth:`r_bar` at ``P_l``."""
        dsnr = self.gains[:, :, None] * (P - self.P_l)[None, :, :] / self.noise_power
        dint = dsnr.sum(axis=1, keepdims=True) - dsnr
        return self.R_bar0 + self.Bp_bar / LN2 * dint

    def rho_lb(self, C) -> float:
        return float(np.sum(self.pen_lin * C)) + self.pen_const

    def rate_surrogates(self, P, C) -> np.ndarray:
        """Per-user surrogate rates ``(K,)``."""
        C = self.C_l if self.fix_association else C
        terms = self.r_hat(P) - self.r_bar_ub(P) + C * self.log_rate - self.R0
        return terms.sum(axis=(1, 2))

    def value(self, P, C) -> float:
        C = self.C_l if self.fix_association else C
        return float(np.min(self.rate_surrogates(P, C))) + self.rho_lb(C)

    # -- flattened solver interface ---------------------------------------
    def split(self, x):
        K, M, N = self.shape
        P = x[:M * N].reshape(M, N)
        C = self.C_l if self.fix_association else x[M * N:].reshape(K, M, N)
        return P, C

    def pieces(self, x):
        K, M, N = self.shape
        P, C = self.split(x)
        s2 = self.noise_power
        a = self.gains / s2  # (K, M)
        total = a @ P  # (K, N)
        weight = self.C_l.sum(axis=1)  # (K, N): sum_m c^l_kmn
        vals = self.rate_surrogates(P, C)
        # d/dp_jn of sum_n weight log2(1 + a_k . p_n)
        jp = (weight / (1.0 + total))[:, None, :] * a[:, :, None] / LN2  # (K, M, N)
        # minus d/dp_jn of the tangent bound: sum_m Bp_bar[k,m,n] * (j != m) a_kj / ln2
        bsum = self.Bp_bar.sum(axis=1)  # (K, N)
        jp -= (bsum[:, None, :] - self.Bp_bar) * a[:, :, None] / LN2
        jac_p = jp.reshape(K, M * N)
        if self.fix_association:
            return vals, jac_p
        jac_c = np.zeros((K, K, M, N))
        jac_c[np.arange(K), np.arange(K)] = self.log_rate
        return vals, np.hstack([jac_p, jac_c.reshape(K, K * M * N)])

    def piece_hess(self, x, w) -> np.ndarray:
        """sum_k w_k * Hessian of piece k; only the power block is nonzero."""
        K, M, N = self.shape
        P, _ = self.split(x)
        a = self.gains / self.noise_power  # (K, M)
        total = a @ P  # (K, N)
        weight = self.C_l.sum(axis=1)
        coef = np.asarray(w)[:, None] * weight / (LN2 * (1.0 + total) ** 2)  # (K, N)
        blocks = -np.einsum("kn,km,kj->nmj", coef, a, a)  # (N, M, M)
        nP = M * N
        n = nP if self.fix_association else nP + K * M * N
        H = np.zeros((n, n))
        for nn in range(N):
            idx = np.arange(M) * N + nn
            H[np.ix_(idx, idx)] = blocks[nn]
        return H

    def outer(self, x):
        if self.fix_association:
            return 0.0, np.zeros_like(x)
        K, M, N = self.shape
        _, C = self.split(x)
        grad = np.concatenate([np.zeros(M * N), self.pen_lin.ravel()])
        return self.rho_lb(C), grad

    def x0(self) -> np.ndarray:
        if self.fix_association:
            return self.P_l.ravel().copy()
        return np.concatenate([self.P_l.ravel(), self.C_l.ravel()])

    def problem(self) -> MaximinProblem:
        K, M, N = self.shape
        nP = M * N
        nC = 0 if self.fix_association else K * M * N
        n = nP + nC
        rows, rhs = [], []
        # per-UAV power budget
        for m in range(M):
            r = np.zeros(n)
            r[m * N:(m + 1) * N] = 1.0
            rows.append(r)
            rhs.append(self.p_max)
        A_eq = b_eq = None
        if nC:
            # each (m, n) serves at most one user
            for m in range(M):
                for nn in range(N):
                    r = np.zeros(n)
                    r[nP + np.arange(K) * M * N + m * N + nn] = 1.0
                    rows.append(r)
                    rhs.append(1.0)
            A_eq = np.zeros((K, n))
            for k in range(K):
                A_eq[k, nP + k * M * N:nP + (k + 1) * M * N] = 1.0
            b_eq = np.ones(K)
        lb = np.zeros(n)
        ub = np.concatenate([np.full(nP, self.p_max), np.ones(nC)])
        scale = np.concatenate([np.full(nP, self.p_max), np.ones(nC)])
        return MaximinProblem(self.pieces, self.x0(), A_ub=np.array(rows), b_ub=np.array(rhs),
                              A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub,
                              outer=None if self.fix_association else self.outer,
                              scale=scale, piece_hess=self.piece_hess)


def build_ra_surrogate(P_l, C_l, Lambda, gains, noise_power: float, p_max: float,
                       fix_association: bool = False) -> RaSurrogate:
    """Assemble the resource-allocation surrogate at ``(P_l, C_l)``.

    ``gains`` are the ``(K, M)`` channel gains at the already updated positions.
    """
    P_l = np.array(P_l, dtype=float)
    C_l = np.array(C_l, dtype=float)
    Lambda = np.array(Lambda, dtype=float)
    G = np.array(gains, dtype=float)
    snr = G[:, :, None] * P_l[None, :, :] / noise_power
    total = snr.sum(axis=1, keepdims=True)
    inter = total - snr
    Bp_hat = C_l / (1.0 + total)
    Bp_bar = C_l / (1.0 + inter)
    log_rate = np.log2(1.0 + snr / (1.0 + inter))
    R_bar0 = np.where(C_l < C_ZERO, 0.0, C_l * np.log2(1.0 + inter))
    R0 = np.where(C_l < C_ZERO, 0.0, C_l * log_rate)
    pen_lin = Lambda * (2.0 * C_l - 1.0)
    pen_const = -float(np.sum(Lambda * C_l**2))
    out = RaSurrogate(P_l, C_l, Lambda, G, float(noise_power), float(p_max), Bp_hat, Bp_bar,
                      log_rate, R_bar0, R0, pen_lin, pen_const, fix_association)
    _ro(P_l, C_l, Lambda, G, Bp_hat, Bp_bar, log_rate, R_bar0, R0, pen_lin)
    return out
