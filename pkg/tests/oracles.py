"""Independent reference computations used by the tests."""
import itertools

import numpy as np

from blockuav.subsolver import MaximinProblem


def random_quadratic_maximin(rng, dim, n_pieces=3, with_linear=True):
    """Concave-quadratic pieces on the box [-1, 1]^dim, optionally cut by sum(x) <= s.

    Returns ``(problem, evaluate)`` where ``evaluate(Xs)`` gives the maximin
    value at each row of ``Xs`` (``-inf`` where infeasible).
    """
    Q = []
    for _ in range(n_pieces):
        B = rng.normal(size=(dim, dim))
        Q.append(B @ B.T + 0.1 * np.eye(dim))
    Q = np.array(Q)
    g = rng.normal(0, 2, (n_pieces, dim))
    c = rng.normal(0, 1, n_pieces)
    cut = rng.uniform(-0.5, 1.0) if with_linear else None

    def pieces(x):
        v = c + g @ x - 0.5 * np.einsum("i,kij,j->k", x, Q, x)
        J = g - np.einsum("kij,j->ki", Q, x)
        return v, J

    def hess(x, w):
        return -np.einsum("k,kij->ij", w, Q)

    A_ub = b_ub = None
    x0 = np.zeros(dim)
    if cut is not None:
        A_ub, b_ub = np.ones((1, dim)), np.array([cut])
        x0 = np.full(dim, min(0.0, cut / dim) - 0.01)
    problem = MaximinProblem(pieces, x0, A_ub=A_ub, b_ub=b_ub, lb=-np.ones(dim),
                             ub=np.ones(dim), piece_hess=hess)

    def evaluate(Xs):
        v = (c[None] + Xs @ g.T - 0.5 * np.einsum("ni,kij,nj->nk", Xs, Q, Xs)).min(axis=1)
        if cut is not None:
            v = np.where(Xs.sum(axis=1) <= cut, v, -np.inf)
        return v

    evaluate.data = (c, g, Q, cut)
    return problem, evaluate


def grid_maximum(evaluate, dim, points=None, levels=80, lo=-1.0, hi=1.0, shrink=0.75,
                 beam=6):
    """Zooming grid search for the maximum of a concave function on a box.

    Each level lays a grid around every one of the ``beam`` best points so
    far and keeps the best ``beam`` grid points, then shrinks the window.
    Several centres let the search follow ridges along kinks and cuts that
    are not axis aligned.
    """
    points = points or {1: 41, 2: 15, 3: 9, 4: 7}.get(dim, 5)
    centres = np.full((1, dim), 0.5 * (lo + hi))
    half = 0.5 * (hi - lo)
    best_v, best_x = -np.inf, centres[0]
    offsets = np.array(list(itertools.product(np.linspace(-1.0, 1.0, points), repeat=dim)))
    for _ in range(levels):
        grid = np.clip((centres[:, None, :] + half * offsets[None]).reshape(-1, dim), lo, hi)
        grid = np.unique(grid, axis=0)
        vals = evaluate(grid)
        order = np.argsort(-vals, kind="stable")[:beam]
        order = order[np.isfinite(vals[order])]
        if order.size:
            centres = grid[order]
            if vals[order[0]] > best_v:
                best_v, best_x = float(vals[order[0]]), grid[order[0]]
        half *= shrink
    return best_v, best_x


def epigraph_maximum(rng_pieces, dim, cut=None):
    """Reference optimum via scipy's trust-region constrained solver.

    ``rng_pieces`` is ``(c, g, Q)``. The epigraph form max t s.t.
    t <= f_k(x) is handed to ``trust-constr`` with exact derivatives, a
    method unrelated to the barrier used by the package.
    """
    from scipy.optimize import Bounds, LinearConstraint, NonlinearConstraint, minimize

    c, g, Q = rng_pieces

    def f(z):
        x = z[:-1]
        return c + g @ x - 0.5 * np.einsum("i,kij,j->k", x, Q, x) - z[-1]

    def jac(z):
        x = z[:-1]
        J = g - np.einsum("kij,j->ki", Q, x)
        return np.hstack([J, -np.ones((len(c), 1))])

    def hess(z, v):
        H = np.zeros((dim + 1, dim + 1))
        H[:-1, :-1] = -np.einsum("k,kij->ij", v, Q)
        return H

    cons = [NonlinearConstraint(f, 0.0, np.inf, jac=jac, hess=hess)]
    if cut is not None:
        cons.append(LinearConstraint(np.append(np.ones(dim), 0.0)[None], -np.inf, cut))
    lo = np.append(-np.ones(dim), -np.inf)
    hi = np.append(np.ones(dim), np.inf)
    x0 = np.full(dim, min(0.0, cut / dim) - 0.01) if cut is not None else np.zeros(dim)
    z0 = np.append(x0, np.min(f(np.append(x0, 0.0))) - 1.0)
    res = minimize(lambda z: -z[-1], z0, jac=lambda z: np.append(np.zeros(dim), -1.0),
                   hess=lambda z: np.zeros((dim + 1, dim + 1)), method="trust-constr",
                   constraints=cons, bounds=Bounds(lo, hi),
                   options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 5000})
    # interior-point iterates stop short of the boundary; finish with an
    # active-set polish from there
    slsqp_cons = [{"type": "ineq", "fun": f, "jac": jac}]
    if cut is not None:
        slsqp_cons.append({"type": "ineq", "fun": lambda z: cut - z[:-1].sum(),
                           "jac": lambda z: -np.append(np.ones(dim), 0.0)})
    pol = minimize(lambda z: -z[-1], res.x, jac=lambda z: np.append(np.zeros(dim), -1.0),
                   method="SLSQP", constraints=slsqp_cons,
                   bounds=list(zip(lo, hi)), options={"ftol": 1e-15, "maxiter": 500})
    best = None
    for z in (res.x, pol.x):
        x = np.clip(z[:-1], -1.0, 1.0)
        if cut is not None and x.sum() > cut:
            x = x - (x.sum() - cut) / dim
        v = float(np.min(f(np.append(x, 0.0))))
        if best is None or v > best[0]:
            best = (v, x)
    return best
