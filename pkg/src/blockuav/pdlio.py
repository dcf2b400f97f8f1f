"""Penalty-based double-loop optimisation of positions and resources.

The inner loop alternates a positioning step and a resource-allocation step,
each of which solves a concave surrogate and then backtracks along the
direction to the surrogate optimum (Armijo rule on the true objective Z).
The outer loop raises the penalty multipliers on the relaxed binary
association until every ``c (1 - c)`` falls below ``eps_outer``; the
association is then rounded to exactly binary.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import ChannelParams, LinkEval, evaluate_links
from .netmodel import (RateBreakdown, SolutionState, constraint_violations,
                       max_violation, objective_Z, rates)
from .subsolver import SolverError, solve_maximin
from .surrogate import LN2, build_positioning_surrogate, build_ra_surrogate

__all__ = [
    "AlgoParams",
    "Network",
    "IterationTrace",
    "InnerResult",
    "RunReport",
    "positioning_step",
    "ra_step",
    "inner_loop",
    "update_multipliers",
    "round_association",
    "optimize",
    "run",
    "StepError",
]

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    """A surrogate or subproblem failure, with the loop indices attached."""


@dataclass(frozen=True)
class AlgoParams:
    zeta: float = 0.9
    tau: float = 0.01
    eps_inner: float = 1e-3
    eps_outer: float = 1e-4
    lambda0: Optional[float] = None  # None -> 0.2 K / (M N)
    mu0: float = 2.0
    gamma_floor: float = 0.9**60
    max_inner: int = 40
    max_outer: int = 50
    # subproblem tolerances
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-9
    max_sub_iter: int = 200
    # extra inner loop with the rounded association frozen
    polish: bool = True

    def __post_init__(self):
        if not (0 < self.zeta < 1 and 0 < self.tau < 1):
            raise ValueError("zeta and tau must lie in (0, 1)")
        if self.eps_inner <= 0 or self.eps_outer <= 0 or self.gamma_floor <= 0:
            raise ValueError("thresholds must be positive")
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.lambda0 is not None and self.lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be at least 1")

    def initial_lambda(self, K: int, M: int, N: int) -> float:
        return 0.2 * K / (M * N) if self.lambda0 is None else float(self.lambda0)


@dataclass
class Network:
    """Everything the optimiser needs to evaluate channels and constraints."""

    users: np.ndarray
    shadows: list
    channel: ChannelParams
    p_max: float
    area: tuple
    h_min: float
    d_min: float

    def links(self, X) -> LinkEval:
        return evaluate_links(X, self.users, self.shadows, self.channel)

    def gains(self, X) -> np.ndarray:
        return self.links(X).G

    @property
    def noise(self) -> float:
        return self.channel.noise_power

    def z_cap(self, X) -> float:
        """Altitude ceiling for the positioning subproblem (keeps it bounded)."""
        return max(self.h_min + self.area[0] + self.area[1], float(np.max(X[:, 2])))

    def separation_ok(self, X, tol: float = 1e-9) -> bool:
        X = np.asarray(X)
        M = len(X)
        for m in range(M):
            for j in range(m + 1, M):
                if np.linalg.norm(X[m] - X[j]) < self.d_min - tol:
                    return False
        return True


# rates below this (bits/s/Hz) are treated as zero when forming ratios
RATE_FLOOR = 1e-6


@dataclass
class IterationTrace:
    outer: int
    inner: int
    Z: float
    min_rate: float
    max_violation: float
    gamma_pos: float
    gamma_ra: float
    bottleneck: int
    wall_time: float
    dd_pos: float = 0.0
    dd_ra: float = 0.0
    pos_status: str = "skipped"
    ra_status: str = ""

    def as_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


@dataclass
class InnerResult:
    state: SolutionState
    traces: list
    status: str  # converged | stalled | iteration-limit
    Z_start: float
    Z_end: float


@dataclass
class RunReport:
    status: str  # converged | not-converged
    scheme: str
    state: SolutionState
    breakdown: RateBreakdown
    initial_min_rate: float
    Z_relaxed: float
    Z_rounded: float
    violation_history: list = field(default_factory=list)
    inner_status: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def min_rate(self) -> float:
        return self.breakdown.min_rate

    @property
    def outer_iterations(self) -> int:
        return len(self.violation_history)

    @property
    def rounding_change(self) -> float:
        """Relative change of Z caused by rounding the association.

        The denominator is floored at ``RATE_FLOOR`` so a relaxed Z that is
        zero up to round-off does not turn noise into a large ratio.
        """
        return abs(self.Z_rounded - self.Z_relaxed) / max(abs(self.Z_relaxed), RATE_FLOOR)


# ---------------------------------------------------------------------------
# directional derivatives (bottleneck user only)
# ---------------------------------------------------------------------------

def _log_coeffs(P, C, G, noise):
    """B_hat, B_bar (K, M, N) without the 1/ln2 factor."""
    snr = G[:, :, None] * P[None, :, :] / noise
    total = snr.sum(axis=1, keepdims=True)
    return C / (1.0 + total), C / (1.0 + total - snr)


def position_gradient(k: int, P, C, G, dG, noise) -> np.ndarray:
    """d R_k / d X as ``(M, 3)`` via the B coefficients."""
    B_hat, B_bar = _log_coeffs(P, C, G, noise)
    w = P / noise  # (M, N)
    # coefficient of p_jn dg_kj: sum_m B_hat[k,m,n] - sum_{m != j} B_bar[k,m,n]
    coef = B_hat[k].sum(axis=0)[None, :] - (B_bar[k].sum(axis=0)[None, :] - B_bar[k])
    return np.einsum("jn,jn,ji->ji", coef, w, dG[k]) / LN2


def ra_directional_derivative(k: int, P, C, Lambda, G, noise, dP, dC) -> float:
    B_hat, B_bar = _log_coeffs(P, C, G, noise)
    a = G[k] / noise  # (M,)
    coef = B_hat[k].sum(axis=0)[None, :] - (B_bar[k].sum(axis=0)[None, :] - B_bar[k])
    dd = float(np.sum(coef * a[:, None] * dP)) / LN2
    if dC is not None:
        snr = G[:, :, None] * P[None, :, :] / noise
        log_rate = np.log2(1.0 + snr / (1.0 + snr.sum(axis=1, keepdims=True) - snr))
        dd += float(np.sum(dC[k] * log_rate[k]))
        dd -= float(np.sum(Lambda * (1.0 - 2.0 * C) * dC))
    return dd


def _backtrack(trial, dd, algo: AlgoParams):
    """Smallest t with trial(zeta^t) accepted; returns (gamma, result)."""
    if not dd > 0.0:
        return 0.0, None
    gamma = 1.0
    while gamma >= algo.gamma_floor:
        res = trial(gamma)
        if res is not None:
            return gamma, res
        gamma *= algo.zeta
    return 0.0, None


# ---------------------------------------------------------------------------
# the two block updates
# ---------------------------------------------------------------------------

def positioning_step(net: Network, state: SolutionState, algo: AlgoParams,
                     hook: Optional[Callable] = None):
    """One positioning update. Returns ``(state, info)``."""
    X, P, C, Lam = state.X, state.P, state.C, state.Lambda
    links = net.links(X)
    base = objective_Z(P, C, Lam, links.G, net.noise)
    try:
        sur = build_positioning_surrogate(X, P, C, Lam, net.users, links, net.noise,
                                          net.area, net.h_min, net.d_min)
        rep = solve_maximin(sur.problem(z_cap=net.z_cap(X)), algo.tol_kkt, algo.tol_feas,
                            algo.max_sub_iter)
    except (SolverError, ValueError) as exc:
        raise StepError(f"positioning step failed at (L={state.outer}, l={state.inner}): "
                        f"{exc}") from exc
    if hook is not None:
        hook("position", sur, state, net, links)
    D = rep.x.reshape(-1, 3) - X
    k = base.bottleneck_user
    dd = float(np.sum(position_gradient(k, P, C, links.G, links.dG, net.noise) * D))

    def trial(gamma):
        Xn = X + gamma * D
        if not net.separation_ok(Xn):
            return None
        z = objective_Z(P, C, Lam, net.gains(Xn), net.noise)
        if z.Z - base.Z >= algo.tau * gamma * dd:
            return Xn, z
        return None

    gamma, res = _backtrack(trial, dd, algo)
    new = state if res is None else state.with_(X=res[0])
    Z_new = base.Z if res is None else res[1].Z
    return new, {"gamma": gamma, "dd": dd, "status": rep.status, "Z_before": base.Z,
                 "Z_after": Z_new}


def ra_step(net: Network, state: SolutionState, algo: AlgoParams,
            fix_association: bool = False, hook: Optional[Callable] = None):
    """One joint power/association update at fixed positions."""
    X, P, C, Lam = state.X, state.P, state.C, state.Lambda
    G = net.gains(X)
    base = objective_Z(P, C, Lam, G, net.noise)
    try:
        sur = build_ra_surrogate(P, C, Lam, G, net.noise, net.p_max, fix_association)
        rep = solve_maximin(sur.problem(), algo.tol_kkt, algo.tol_feas, algo.max_sub_iter)
    except (SolverError, ValueError) as exc:
        raise StepError(f"resource step failed at (L={state.outer}, l={state.inner}): "
                        f"{exc}") from exc
    if hook is not None:
        hook("ra", sur, state, net, G)
    P_t, C_t = sur.split(rep.x)
    dP = P_t - P
    dC = None if fix_association else C_t - C
    k = base.bottleneck_user
    dd = ra_directional_derivative(k, P, C, Lam, G, net.noise, dP, dC)

    def trial(gamma):
        Pn = P + gamma * dP
        Cn = C if dC is None else C + gamma * dC
        z = objective_Z(Pn, Cn, Lam, G, net.noise)
        if z.Z - base.Z >= algo.tau * gamma * dd:
            return Pn, Cn, z
        return None

    gamma, res = _backtrack(trial, dd, algo)
    if res is None:
        new, z = state, base
    else:
        Pn, Cn, z = res
        new = state.with_(P=_clean_power(Pn, net.p_max), C=_clean_assoc(Cn))
        z = objective_Z(new.P, new.C, Lam, G, net.noise)
    return new, {"gamma": gamma, "dd": dd, "status": rep.status, "Z_before": base.Z,
                 "Z_after": z.Z, "breakdown": z}


def _clean_power(P, p_max):
    # remove round-off outside the box/budget left by the line search
    P = np.clip(P, 0.0, p_max)
    tot = P.sum(axis=1, keepdims=True)
    return np.where(tot > p_max, P * (p_max / np.maximum(tot, 1e-300)), P)


def _clean_assoc(C):
    C = np.clip(C, 0.0, 1.0)
    tot = C.sum(axis=(1, 2), keepdims=True)
    return np.where(tot > 0.0, C / np.maximum(tot, 1e-300), C)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def inner_loop(net: Network, state: SolutionState, algo: AlgoParams, *,
               optimize_positions: bool = True, fix_association: bool = False,
               hook: Optional[Callable] = None, t0: Optional[float] = None,
               relative: bool = False) -> InnerResult:
    """Alternate positioning and resource steps until the gain in Z drops
    below ``eps_inner`` (times ``|Z|`` when ``relative``)."""
    t0 = time.perf_counter() if t0 is None else t0
    Lam = state.Lambda
    z0 = objective_Z(state.P, state.C, Lam, net.gains(state.X), net.noise).Z
    Z_prev = z0
    traces = []
    status = "iteration-limit"
    for l in range(algo.max_inner):
        state = state.with_(inner=l)
        g1, dd1, s1 = 0.0, 0.0, "skipped"
        if optimize_positions:
            state, info = positioning_step(net, state, algo, hook)
            g1, dd1, s1 = info["gamma"], info["dd"], info["status"]
        state, info = ra_step(net, state, algo, fix_association, hook)
        bd = info["breakdown"]
        traces.append(IterationTrace(state.outer, l, bd.Z, bd.min_rate, max_violation(state.C),
                                     g1, info["gamma"], bd.bottleneck_user,
                                     time.perf_counter() - t0, dd1, info["dd"], s1,
                                     info["status"]))
        gain = bd.Z - Z_prev
        Z_prev = bd.Z
        if gain < algo.eps_inner * (abs(traces[-2].Z if len(traces) > 1 else z0)
                                    if relative else 1.0):
            status = "converged"
            break
        if g1 == 0.0 and info["gamma"] == 0.0:
            status = "stalled"
            break
    return InnerResult(state, traces, status, z0, Z_prev)


def update_multipliers(Lambda, C_bar, mu: float, prev_violation: Optional[float]):
    """Returns ``(Lambda_new, mu_new, gamma, done)``.

    ``mu`` is doubled first when the maximum violation did not strictly
    decrease relative to ``prev_violation`` (None on the first update).
    """
    Lambda = np.asarray(Lambda, dtype=float)
    v = np.asarray(C_bar, dtype=float) * (1.0 - np.asarray(C_bar, dtype=float))
    if prev_violation is not None and not float(np.max(v)) < prev_violation:
        mu = 2.0 * mu
    denom = float(np.sum(v * v))
    if denom == 0.0:
        return Lambda.copy(), mu, 0.0, True
    gamma = mu / denom
    return Lambda + gamma * v, mu, gamma, False


def round_association(C, log_rate=None) -> np.ndarray:
    """Round to the nearest binary matrix, greedily repairing the one-slot-per-user
    and one-user-per-slot constraints if needed."""
    C = np.asarray(C, dtype=float)
    K, M, N = C.shape
    R = (C > 0.5).astype(float)
    ok = (np.all(R.sum(axis=0) <= 1.0) and np.all(R.sum(axis=(1, 2)) == 1.0)
          and not np.any(C == 0.5))
    if ok:
        return R
    lr = np.zeros_like(C) if log_rate is None else np.asarray(log_rate, dtype=float)
    order = np.lexsort((-lr.ravel(), -C.ravel()))
    R = np.zeros_like(C)
    user_done = np.zeros(K, bool)
    slot_used = np.zeros((M, N), bool)
    for idx in order:
        k, m, n = np.unravel_index(idx, C.shape)
        if not user_done[k] and not slot_used[m, n]:
            R[k, m, n] = 1.0
            user_done[k] = True
            slot_used[m, n] = True
    return R


def _rounded(net: Network, state: SolutionState):
    """``state`` with C rounded, and the min-rate it achieves."""
    G = net.gains(state.X)
    gamma = rates(state.P, state.C, G, net.noise).sinr
    st = state.with_(C=round_association(state.C, np.log2(1.0 + gamma)))
    return st, rates(st.P, st.C, G, net.noise).min_rate


def optimize(net: Network, state: SolutionState, algo: AlgoParams, *,
             optimize_positions: bool = True, outer_loop: bool = True,
             hook: Optional[Callable] = None):
    """Run the double loop from ``state``.

    Returns ``(state, status, traces, violation_history, inner_status, Z_relaxed,
    Z_rounded)`` where ``state`` carries the rounded association and ``Z_rounded``
    is measured right after rounding, before the polishing pass.

    With ``algo.polish`` the rounded result gets one more inner loop with C
    frozen. If it still trails the best rounded iterate seen (the incumbent,
    starting with ``state`` itself), the incumbent is polished as well and
    the better of the two is returned.
    """
    t0 = time.perf_counter()
    traces, history, inner_status = [], [], []
    mu = algo.mu0
    prev = None
    status = "not-converged"
    incumbent, inc_rate = _rounded(net, state)
    for L in range(algo.max_outer if outer_loop else 1):
        state = state.with_(outer=L)
        res = inner_loop(net, state, algo, optimize_positions=optimize_positions,
                         fix_association=not outer_loop, hook=hook, t0=t0)
        state = res.state
        traces.extend(res.traces)
        inner_status.append(res.status)
        viol = max_violation(state.C)
        history.append(viol)
        if viol <= algo.eps_outer or not outer_loop:
            status = "converged"
            break
        cand, r = _rounded(net, state)
        if r > inc_rate:
            incumbent, inc_rate = cand, r
        Lam, mu, _, done = update_multipliers(state.Lambda, state.C, mu, prev)
        prev = viol
        state = state.with_(Lambda=Lam)
        if done:
            status = "converged"
            break
    G = net.gains(state.X)
    Z_relaxed = objective_Z(state.P, state.C, state.Lambda, G, net.noise).Z
    state, _ = _rounded(net, state)
    Z_rounded = objective_Z(state.P, state.C, state.Lambda, G, net.noise).Z
    if outer_loop and algo.polish:
        # a late snap of C can leave the bottleneck user on a starved slot
        # with a near-zero rate; an inner loop with C frozen, stopped on
        # relative gain, lets P and X catch up
        def polish(st):
            return inner_loop(net, st.with_(outer=state.outer + 1), algo,
                              optimize_positions=optimize_positions, fix_association=True,
                              hook=hook, t0=t0, relative=True)

        best = polish(state)
        if best.Z_end < inc_rate:
            alt = polish(incumbent.with_(Lambda=state.Lambda))
            if alt.Z_end > best.Z_end:
                best = alt
        state = best.state
        traces.extend(best.traces)
        inner_status.append(best.status)
    return state, status, traces, history, inner_status, Z_relaxed, Z_rounded


def run(scenario, scheme: str = "proposed", hook: Optional[Callable] = None) -> tuple:
    """Full pipeline for ``scenario``: blocked regions, initial state, double loop,
    rounding. Returns ``(state, report)``."""
    from .scenario import run_scheme  # scenario depends on this module

    report = run_scheme(scenario, scheme, hook=hook)
    return report.state, report


def check_state(net: Network, state: SolutionState, binary: bool = False) -> dict:
    """Constraint violations of ``state`` for the network ``net``."""
    return constraint_violations(state, net.p_max, net.area, net.h_min, net.d_min, binary)

