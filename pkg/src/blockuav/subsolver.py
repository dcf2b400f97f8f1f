"""Maximise a minimum of smooth concave pieces over a polyhedron.

The nonsmooth ``min`` is handled through the epigraph form

    maximise  t + h(x)   s.t.  t <= f_k(x) for all k,  A_ub x <= b_ub,
                               A_eq x = b_eq,  lb <= x <= ub,

which is solved by a log-barrier interior-point method when the pieces
supply Hessians, and by sequential quadratic programming (scipy's SLSQP)
otherwise. The returned point is checked independently. Feasibility is
measured directly and the value is never below the warm start's; a
first-order stationarity residual comes from a linear model of the pieces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, minimize

__all__ = ["MaximinProblem", "SolveReport", "SolverError", "solve_maximin",
           "stationarity_residual"]

log = logging.getLogger(__name__)

PieceFn = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


class SolverError(ValueError):
    pass


@dataclass
class MaximinProblem:
    """``pieces(x)`` returns the piece values ``(K,)`` and Jacobian ``(K, n)``.

    ``outer(x)``, if given, returns the value and gradient of a linear term
    added outside the minimum. ``scale`` gives a typical magnitude per
    variable and only affects conditioning.
    """

    pieces: PieceFn
    x0: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    outer: Optional[Callable[[np.ndarray], "tuple[float, np.ndarray]"]] = None
    scale: Optional[np.ndarray] = None
    # piece_hess(x, w) -> sum_k w_k * Hessian of f_k at x, shape (n, n)
    piece_hess: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    # optional cheaper value-only evaluator of the pieces
    piece_values: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        n = self.x0.size
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if self.A_ub is None:
            self.A_ub, self.b_ub = np.zeros((0, n)), np.zeros(0)
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        self.A_ub = np.atleast_2d(np.asarray(self.A_ub, float)).reshape(-1, n)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, float)).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, float).ravel()
        self.b_eq = np.asarray(self.b_eq, float).ravel()
        self.scale = np.ones(n) if self.scale is None else np.asarray(self.scale, float)

    @property
    def dim(self) -> int:
        return self.x0.size

    def value(self, x) -> float:
        f, _ = self.pieces(x)
        v = float(np.min(f))
        if self.outer is not None:
            v += float(self.outer(x)[0])
        return v

    def violation(self, x) -> float:
        """Largest violation of the linear constraints and bounds."""
        x = np.asarray(x, dtype=float)
        v = 0.0
        if self.A_ub.size:
            v = max(v, float(np.max(self.A_ub @ x - self.b_ub)))
        if self.A_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        v = max(v, float(np.max(self.lb - x)), float(np.max(x - self.ub)))
        return max(v, 0.0)


@dataclass
class SolveReport:
    x: np.ndarray
    value: float
    violation: float
    residual: float
    iterations: int
    status: str  # converged | iteration-limit | numerical-failure
    start_value: float = float("nan")
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def stationarity_residual(problem: MaximinProblem, x) -> float:
    """Best first-order model gain within a unit (scaled) box around ``x``.

    Solves  max_{d, s} s + grad h.d  s.t.  s <= f_k(x) - min f + grad f_k.d,
    x + d feasible, |d_i| <= scale_i.  Zero exactly at first-order stationary
    points of the maximin problem; positive otherwise.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    f, J = problem.pieces(x)
    gap = f - f.min()
    gh = np.zeros(n) if problem.outer is None else np.asarray(problem.outer(x)[1], float)
    sc = problem.scale
    # variables: e = d / scale (n), s
    cost = -np.concatenate([gh * sc, [1.0]])
    rows = [np.hstack([-J * sc, np.ones((len(f), 1))])]
    rhs = [gap]
    if problem.A_ub.size:
        rows.append(np.hstack([problem.A_ub * sc, np.zeros((len(problem.b_ub), 1))]))
        rhs.append(problem.b_ub - problem.A_ub @ x)
    A_eq = b_eq = None
    if problem.A_eq.size:
        A_eq = np.hstack([problem.A_eq * sc, np.zeros((len(problem.b_eq), 1))])
        b_eq = np.zeros(len(problem.b_eq))
    lo = np.maximum(-1.0, (problem.lb - x) / sc)
    hi = np.minimum(1.0, (problem.ub - x) / sc)
    lo = np.minimum(lo, 0.0)
    hi = np.maximum(hi, 0.0)
    bounds = list(zip(lo, hi)) + [(None, None)]
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=A_eq,
                  b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return float("inf")
    return max(0.0, -float(res.fun))


def _repair(problem: MaximinProblem, x, tol_feas: float):
    """Project onto the equalities, then pull ``x`` back toward the feasible
    start until it is feasible."""
    if problem.A_eq.size:
        r = problem.A_eq @ x - problem.b_eq
        x = x - np.linalg.lstsq(problem.A_eq, r, rcond=None)[0]
    x = np.clip(x, problem.lb, problem.ub)
    x0 = problem.x0
    # the start may itself carry round-off up to tol_feas; the violation is
    # convex, so the segment never does worse than its worse end
    target = max(tol_feas, problem.violation(x0))
    if problem.violation(x) <= target:
        return x
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if problem.violation(x0 + mid * (x - x0)) <= target:
            lo = mid
        else:
            hi = mid
    return x0 + lo * (x - x0)


def _interior_point(problem: MaximinProblem, theta: float = 0.01):
    """A point strictly inside the inequalities near the start (None if there is none).

    Maximises the slack of every scaled inequality (capped at 1) by LP and
    moves a fraction ``theta`` from the start toward that point.
    """
    x0, sc = problem.x0, problem.scale
    n = x0.size
    rows, rhs = [], []
    if problem.A_ub.size:
        Au = problem.A_ub * sc
        nrm = np.maximum(np.linalg.norm(Au, axis=1), 1e-300)
        rows.append(np.hstack([Au, nrm[:, None]]))
        rhs.append(problem.b_ub)
    fin_lo = np.isfinite(problem.lb)
    fin_hi = np.isfinite(problem.ub)
    eye = np.eye(n) * sc
    if fin_lo.any():
        rows.append(np.hstack([-eye[fin_lo], sc[fin_lo, None]]))
        rhs.append(-problem.lb[fin_lo])
    if fin_hi.any():
        rows.append(np.hstack([eye[fin_hi], sc[fin_hi, None]]))
        rhs.append(problem.ub[fin_hi])
    A_eq = b_eq = None
    if problem.A_eq.size:
        A_eq = np.hstack([problem.A_eq * sc, np.zeros((len(problem.b_eq), 1))])
        b_eq = problem.b_eq
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(cost, A_ub=np.vstack(rows) if rows else None,
                  b_ub=np.concatenate(rhs) if rhs else None, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status != 0 or -res.fun < 1e-7:
        return None
    x_int = res.x[:n] * sc
    return x0 + theta * (x_int - x0)


def _solve_barrier(problem: MaximinProblem, x_start, tol: float, max_newton: int,
                   mu: float = 50.0):
    """Log-barrier method on the scaled epigraph problem.

    Variables ``y = [x / scale, t]``; minimise ``-tau (t + h) - sum log(-g_i)``
    over the inequalities ``t - f_k <= 0``, the linear rows and the bounds,
    by equality-constrained Newton steps from a strictly feasible start, then
    raise ``tau`` until the duality gap ``m / tau`` is below
    ``tol * max(1, |t|)``. Returns ``(x, newton_steps, ok)``.
    """
    sc = problem.scale
    n = sc.size
    Au = problem.A_ub * sc
    bu = problem.b_ub
    fl = np.flatnonzero(np.isfinite(problem.lb))
    fh = np.flatnonzero(np.isfinite(problem.ub))
    lo = problem.lb[fl] / sc[fl]
    hi = problem.ub[fh] / sc[fh]
    p = len(problem.b_eq)
    Ae = np.hstack([problem.A_eq * sc, np.zeros((p, 1))])
    f0 = problem.pieces(x_start)[0]
    n_u = len(bu)
    m = len(f0) + n_u + len(fl) + len(fh)
    ss = np.outer(sc, sc)

    def parts(y):
        x = y[:n] * sc
        f, J = problem.pieces(x)
        return x, J * sc, y[n] - f, Au @ y[:n] - bu, lo - y[fl], y[fh] - hi

    def outer_val(x):
        return 0.0 if problem.outer is None else float(problem.outer(x)[0])

    values = problem.piece_values or (lambda x: problem.pieces(x)[0])

    def phi(y, tau):
        x = y[:n] * sc
        g = np.concatenate([y[n] - values(x), Au @ y[:n] - bu, lo - y[fl], y[fh] - hi])
        if not (np.all(g < 0) and np.all(np.isfinite(g))):
            return np.inf
        return -tau * (y[n] + outer_val(x)) - np.sum(np.log(-g))

    def linear_step_cap(gu, gl, gh, dy):
        """Largest step keeping the linear rows strictly feasible (x 0.99)."""
        dg = np.concatenate([Au @ dy[:n] if n_u else np.zeros(0), -dy[fl], dy[fh]])
        g = np.concatenate([gu, gl, gh])
        up = dg > 0
        return min(1.0, 0.99 * float(np.min(-g[up] / dg[up]))) if up.any() else 1.0

    y = np.concatenate([x_start / sc, [f0.min() - 0.1 * max(1.0, abs(f0.min()))]])
    if p:
        Zb = null_space(Ae)
        y_proj = y - np.linalg.lstsq(Ae, Ae @ y - problem.b_eq, rcond=None)[0]
        if np.isfinite(phi(y_proj, 1.0)):
            y = y_proj
    else:
        Zb = np.eye(n + 1)
    if not np.isfinite(phi(y, 1.0)):
        return x_start, 0, False
    tau, steps = 1.0, 0
    while True:
        for _ in range(max_newton):
            x, J, gk, gu, gl, gh = parts(y)
            ik, iu, il, ih = -1.0 / gk, -1.0 / gu, -1.0 / gl, -1.0 / gh
            grad = np.zeros(n + 1)
            grad[n] = -tau + ik.sum()
            if problem.outer is not None:
                grad[:n] = -tau * np.asarray(problem.outer(x)[1], float) * sc
            grad[:n] -= J.T @ ik
            if n_u:
                grad[:n] += Au.T @ iu
            grad[fl] -= il
            grad[fh] += ih
            H = np.zeros((n + 1, n + 1))
            if problem.piece_hess is not None:
                H[:n, :n] = -problem.piece_hess(x, ik) * ss
            d2 = ik * ik
            H[:n, :n] += (J.T * d2) @ J
            H[:n, n] = H[n, :n] = -J.T @ d2
            H[n, n] = d2.sum()
            if n_u:
                H[:n, :n] += (Au.T * (iu * iu)) @ Au
            H[fl, fl] += il * il
            H[fh, fh] += ih * ih
            # Newton step restricted to the null space of the equalities; a KKT
            # solve drifts off them once 1/g^2 gets large
            Hr = Zb.T @ H @ Zb
            gr = Zb.T @ grad
            try:
                dy = Zb @ np.linalg.solve(Hr, -gr)
            except np.linalg.LinAlgError:
                dy = Zb @ np.linalg.lstsq(Hr, -gr, rcond=None)[0]
            steps += 1
            slope = float(grad @ dy)
            if -slope / 2.0 <= 1e-7:
                break
            s, ph0 = linear_step_cap(gu, gl, gh, dy), phi(y, tau)
            while phi(y + s * dy, tau) > ph0 + 0.25 * s * slope:
                s *= 0.5
                if s < 1e-8:
                    break
            if s < 1e-8:
                # round-off in phi at large tau; accept if nearly centred
                if -slope / 2.0 <= 1e-5:
                    break
                return y[:n] * sc, steps, False
            y = y + s * dy
            if steps >= max_newton:
                return y[:n] * sc, steps, False
        if m / tau <= tol * max(1.0, abs(y[n])):
            return y[:n] * sc, steps, True
        tau *= mu


def solve_maximin(problem: MaximinProblem, tol_kkt: float = 1e-6, tol_feas: float = 1e-9,
                  max_iter: int = 200, method: str = "auto") -> SolveReport:
    """Solve ``problem`` from its (feasible) warm start.

    ``method`` is ``"barrier"``, ``"slsqp"`` or ``"auto"`` (barrier when
    piece Hessians are available and the inequalities have an interior,
    SLSQP otherwise).
    """
    x0 = problem.x0
    if problem.violation(x0) > tol_feas:
        raise SolverError(f"infeasible start (violation {problem.violation(x0):.3e})")
    f0, _ = problem.pieces(x0)
    if not np.all(np.isfinite(f0)):
        raise SolverError("pieces are not finite at the start point")
    start_value = problem.value(x0)
    if method not in ("auto", "barrier", "slsqp"):
        raise ValueError(f"unknown method {method!r}")

    if method in ("auto", "barrier") and (problem.piece_hess is not None or method == "barrier"):
        x_int = _interior_point(problem)
        if x_int is not None:
            try:
                with np.errstate(all="ignore"):
                    x, iters, ok = _solve_barrier(problem, x_int, 1e-7, max_iter)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                log.debug("barrier failed: %s", exc)
                ok = False
            if ok:
                return _finish(problem, _repair(problem, x, tol_feas), "converged", iters,
                               start_value, "barrier", tol_kkt, tol_feas)
            if method == "barrier":
                return _finish(problem, _repair(problem, x, tol_feas), "iteration-limit",
                               iters, start_value, "barrier stalled", tol_kkt,
                               tol_feas)
    return _solve_slsqp(problem, start_value, tol_kkt, tol_feas, max_iter)


def _finish(problem, x, status, iterations, start_value, message, tol_kkt, tol_feas):
    x0 = problem.x0
    fx, _ = problem.pieces(x)
    if not np.all(np.isfinite(fx)):
        status, x = "numerical-failure", x0.copy()
    value = problem.value(x)
    if not value >= start_value - 1e-12:
        log.debug("solver result %.6g below warm start %.6g; keeping start", value, start_value)
        x, value = x0.copy(), start_value
    violation = problem.violation(x)
    residual = stationarity_residual(problem, x)
    if status == "converged" and (residual > tol_kkt
                                  or violation > max(tol_feas, problem.violation(x0))):
        status = "iteration-limit"
    return SolveReport(x, value, violation, residual, iterations, status, start_value, message)


def _solve_slsqp(problem, start_value, tol_kkt, tol_feas, max_iter):
    x0 = problem.x0
    n = problem.dim
    sc = problem.scale
    f0, _ = problem.pieces(x0)

    def unpack(y):
        return y[:n] * sc, y[n]

    def objective(y):
        x, t = unpack(y)
        grad = np.zeros(n + 1)
        grad[n] = -1.0
        val = -t
        if problem.outer is not None:
            hv, hg = problem.outer(x)
            val -= hv
            grad[:n] = -np.asarray(hg) * sc
        return val, grad

    def epi(y):
        x, t = unpack(y)
        f, _ = problem.pieces(x)
        return f - t

    def epi_jac(y):
        x, _ = unpack(y)
        _, J = problem.pieces(x)
        return np.hstack([J * sc, -np.ones((J.shape[0], 1))])

    cons = [{"type": "ineq", "fun": epi, "jac": epi_jac}]
    if problem.A_ub.size:
        Au = np.hstack([problem.A_ub * sc, np.zeros((len(problem.b_ub), 1))])
        cons.append({"type": "ineq", "fun": lambda y: problem.b_ub - Au @ y,
                     "jac": lambda y: -Au})
    if problem.A_eq.size:
        Ae = np.hstack([problem.A_eq * sc, np.zeros((len(problem.b_eq), 1))])
        cons.append({"type": "eq", "fun": lambda y: Ae @ y - problem.b_eq,
                     "jac": lambda y: Ae})
    bounds = [(lo / s if np.isfinite(lo) else None, hi / s if np.isfinite(hi) else None)
              for lo, hi, s in zip(problem.lb, problem.ub, sc)] + [(None, None)]
    y0 = np.concatenate([x0 / sc, [float(np.min(f0))]])

    status = "converged"
    message = ""
    iterations = 0
    x = x0.copy()
    try:
        with np.errstate(all="ignore"):
            res = minimize(objective, y0, jac=True, method="SLSQP", bounds=bounds,
                           constraints=cons,
                           options={"maxiter": max_iter, "ftol": 1e-12})
        iterations = int(res.nit)
        message = str(res.message)
        cand = res.x[:n] * sc
        if np.all(np.isfinite(cand)):
            x = _repair(problem, cand, tol_feas)
        else:
            status = "numerical-failure"
        if res.status == 9:
            status = "iteration-limit"
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status, message = "numerical-failure", str(exc)

    return _finish(problem, x, status, iterations, start_value, message, tol_kkt, tol_feas)
