"""Scenario files and validation; initial deployment and the comparison schemes."""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelParams, dbm_to_watts
from .geometry import Building, ShadowSet, blocked_regions
from .netmodel import SolutionState, objective_Z, rates
from .pdlio import AlgoParams, Network, RunReport, optimize

__all__ = [
    "Scenario",
    "ScenarioError",
    "SCHEMES",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "validate",
    "initial_state",
    "kmeans_positions",
    "run_scheme",
    "monte_carlo",
    "random_buildings",
    "sample_users",
    "synthetic_scene",
]

SCHEMES = ("proposed", "fixed-association", "kmeans-position", "no-geoinfo")
INITIAL_ALTITUDE = 500.0
MAX_SAMPLING_ATTEMPTS = 10_000


class ScenarioError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Scenario:
    area: tuple = (1500.0, 1500.0)
    h_min: float = 100.0
    buildings: tuple = ()
    users: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    M: int = 4
    N: int = 4
    channel: ChannelParams = field(default_factory=ChannelParams)
    p_max: float = 1.0  # 30 dBm
    d_min: float = 25.0
    algo: AlgoParams = field(default_factory=AlgoParams)
    seed: int = 0

    def __post_init__(self):
        u = np.array(self.users, dtype=float).reshape(-1, 3)
        u.setflags(write=False)
        object.__setattr__(self, "users", u)
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def counts(self) -> tuple:
        return self.K, self.M, self.N

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def network(self, geo_info: bool = True) -> Network:
        """Channel/constraint context; ``geo_info=False`` drops all blockage."""
        if geo_info and self.buildings:
            shadows = [ShadowSet(r) for r in blocked_regions(self.users, self.buildings)]
        else:
            shadows = [ShadowSet([]) for _ in range(self.K)]
        return Network(np.asarray(self.users), shadows, self.channel, self.p_max, self.area,
                       self.h_min, self.d_min)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _channel_from(d: dict) -> ChannelParams:
    base = ChannelParams()
    kw = {}
    for key in ("alpha_los", "alpha_nlos", "eta"):
        if key in d:
            kw[key] = float(d[key])
    if "beta_los_db" in d:
        kw["beta_los"] = 10.0 ** (float(d["beta_los_db"]) / 10.0)
    if "beta_nlos_db" in d:
        kw["beta_nlos"] = 10.0 ** (float(d["beta_nlos_db"]) / 10.0)
    if "noise_dbm" in d:
        kw["noise_power"] = dbm_to_watts(float(d["noise_dbm"]))
    return replace(base, **kw)


def scenario_from_dict(d: dict) -> Scenario:
    """Build a scenario from the JSON layout; missing fields take the defaults.

    With ``user_count`` instead of ``users`` the users are sampled uniformly
    outside the building footprints, seeded by ``seed``.
    """
    try:
        area = d.get("area", {})
        area = (float(area.get("x_d", 1500.0)), float(area.get("y_d", 1500.0)))
        buildings = tuple(Building(b["min"], b["size"]) for b in d.get("buildings", []))
        counts = d.get("counts", {})
        seed = int(d.get("seed", 0))
        algo_d = dict(d.get("algo", {}))
        algo = AlgoParams(**{k: v for k, v in algo_d.items() if v is not None})
        power = d.get("power", {})
        p_max = dbm_to_watts(float(power.get("p_max_dbm", 30.0)))
        if "users" in d:
            users = np.array(d["users"], dtype=float).reshape(-1, 3)
        elif "user_count" in d or "k" in counts:
            n = int(d.get("user_count", counts.get("k", 0)))
            users = sample_users(n, area, buildings, np.random.default_rng(seed))
        else:
            raise ScenarioError("scenario needs 'users' or 'user_count'")
        if "k" in counts and int(counts["k"]) != len(users):
            raise ScenarioError(f"counts.k = {counts['k']} but {len(users)} users given")
        return Scenario(area=area, h_min=float(d.get("h_min", 100.0)), buildings=buildings,
                        users=users, M=int(counts.get("m", 4)), N=int(counts.get("n", 4)),
                        channel=_channel_from(d.get("channel", {})), p_max=p_max,
                        d_min=float(d.get("d_min", 25.0)), algo=algo, seed=seed)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    return scenario_from_dict(d)


def scenario_to_dict(sc: Scenario) -> dict:
    ch = sc.channel
    algo = {k: getattr(sc.algo, k) for k in ("zeta", "tau", "eps_inner", "eps_outer",
                                             "lambda0", "mu0", "max_inner", "max_outer")}
    return {
        "area": {"x_d": sc.area[0], "y_d": sc.area[1]},
        "h_min": sc.h_min,
        "buildings": [{"min": b.min_corner.tolist(), "size": b.size.tolist()}
                      for b in sc.buildings],
        "users": sc.users.tolist(),
        "counts": {"k": sc.K, "m": sc.M, "n": sc.N},
        "channel": {"alpha_los": ch.alpha_los, "alpha_nlos": ch.alpha_nlos,
                    "beta_los_db": 10 * math.log10(ch.beta_los),
                    "beta_nlos_db": 10 * math.log10(ch.beta_nlos), "eta": ch.eta,
                    "noise_dbm": 10 * math.log10(ch.noise_power) + 30.0},
        "power": {"p_max_dbm": 10 * math.log10(sc.p_max) + 30.0},
        "d_min": sc.d_min,
        "algo": algo,
        "seed": sc.seed,
    }


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(sc: Scenario) -> list[str]:
    """All problems found in ``sc`` (empty list when it is usable)."""
    out = []
    K, M, N = sc.counts
    if K < 1 or M < 1 or N < 1:
        out.append(f"counts must be positive, got K={K}, M={M}, N={N}")
    if K > M * N:
        out.append(f"K={K} exceeds M*N={M * N}: every user needs its own UAV subcarrier, "
                   "which the one-user-per-slot rule cannot satisfy")
    if sc.area[0] <= 0 or sc.area[1] <= 0:
        out.append("area sides must be positive")
    if not sc.h_min >= 1.0:
        out.append("h_min must be at least 1 m")
    top = max((b.height for b in sc.buildings), default=0.0)
    if not sc.h_min > top:
        out.append(f"h_min={sc.h_min} must exceed the tallest building ({top})")
    if sc.p_max <= 0:
        out.append("p_max must be positive")
    if sc.d_min < 0:
        out.append("d_min must be nonnegative")
    for k, u in enumerate(sc.users):
        if u[2] != 0.0:
            out.append(f"user {k} is not on the ground (z={u[2]})")
        if not (0 <= u[0] <= sc.area[0] and 0 <= u[1] <= sc.area[1]):
            out.append(f"user {k} lies outside the area")
        for q, b in enumerate(sc.buildings):
            if b.footprint_contains(u, closed=True):
                out.append(f"user {k} lies inside (or on) building {q}")
    return out


def _require_valid(sc: Scenario):
    problems = validate(sc)
    if problems:
        raise ScenarioError(problems)


# ---------------------------------------------------------------------------
# initial deployment
# ---------------------------------------------------------------------------

def _stagger(X, d_min):
    """Raise UAVs by d_min steps until every pair is at least d_min apart."""
    X = X.copy()
    for m in range(len(X)):
        while any(np.linalg.norm(X[m] - X[j]) < d_min for j in range(m)):
            X[m, 2] += d_min
    return X


def seed_positions(sc: Scenario) -> np.ndarray:
    xD, yD = sc.area
    corners = [(0.0, 0.0), (xD, 0.0), (xD, yD), (0.0, yD)]
    h = max(INITIAL_ALTITUDE, sc.h_min)
    chosen = []
    X = np.zeros((sc.M, 3))
    for m in range(sc.M):
        c = np.array(corners[m % 4])
        d = np.linalg.norm(sc.users[:, :2] - c, axis=1)
        order = np.argsort(d, kind="stable")
        free = [k for k in order if k not in chosen]
        k = int(free[0]) if free else int(order[0])
        chosen.append(k)
        X[m] = [sc.users[k, 0], sc.users[k, 1], h]
    return _stagger(X, sc.d_min)


def associate(G, M: int, N: int, p_max: float):
    """Greedy association in user order, then an even power split."""
    K = G.shape[0]
    C = np.zeros((K, M, N))
    used = np.zeros((M, N), bool)
    for k in range(K):
        idle = [m for m in range(M) if not used[m].all()]
        m = max(idle, key=lambda j: (G[k, j], -j))
        load = used.sum(axis=0)  # how many UAVs already use each subcarrier
        cand = [n for n in range(N) if not used[m, n]]
        n = min(cand, key=lambda i: (load[i], i))
        C[k, m, n] = 1.0
        used[m, n] = True
    P = np.zeros((M, N))
    for m in range(M):
        occ = used[m]
        if occ.any():
            P[m, occ] = p_max / occ.sum()
    return C, P


def initial_state(sc: Scenario, X=None, net: Optional[Network] = None) -> SolutionState:
    """Deployment used to start every scheme.

    ``X`` overrides the corner-seeded positions and ``net`` the channel used
    for the greedy association (the LoS-only channel for no-geoinfo).
    """
    _require_valid(sc)
    X = seed_positions(sc) if X is None else np.asarray(X, dtype=float)
    net = sc.network() if net is None else net
    C, P = associate(net.gains(X), sc.M, sc.N, sc.p_max)
    lam = sc.algo.initial_lambda(sc.K, sc.M, sc.N)
    return SolutionState(X, P, C, np.full(C.shape, lam))


def kmeans_positions(users, M: int, seed: int = 0, area=None, h_min: float = 100.0,
                     d_min: float = 0.0, max_iter: int = 300) -> np.ndarray:
    """Lloyd's algorithm on the horizontal user coordinates.

    Farthest-point initialisation from a seeded random first centre. UAVs are
    placed above the centroids at 500 m (at least ``h_min``).
    """
    pts = np.asarray(users, dtype=float).reshape(-1, 3)[:, :2]
    K = len(pts)
    if K < M:
        raise ValueError(f"need at least M={M} users for K-means, got {K}")
    rng = np.random.default_rng(seed)
    centres = [pts[rng.integers(K)]]
    for _ in range(1, M):
        d = np.min(np.linalg.norm(pts[:, None] - np.array(centres)[None], axis=2), axis=1)
        centres.append(pts[int(np.argmax(d))])
    centres = np.array(centres, dtype=float)
    labels = None
    for _ in range(max_iter):
        d = np.linalg.norm(pts[:, None] - centres[None], axis=2)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for m in range(M):
            members = pts[labels == m]
            if len(members):
                centres[m] = members.mean(axis=0)
            else:
                far = np.min(np.linalg.norm(pts[:, None] - centres[None], axis=2), axis=1)
                centres[m] = pts[int(np.argmax(far))]
    X = np.column_stack([centres, np.full(M, max(INITIAL_ALTITUDE, h_min))])
    return _stagger(X, d_min)


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------

def run_scheme(sc: Scenario, scheme: str = "proposed", hook=None) -> RunReport:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    _require_valid(sc)
    t0 = time.perf_counter()
    true_net = sc.network()
    opt_net = sc.network(geo_info=False) if scheme == "no-geoinfo" else true_net
    X0 = None
    if scheme == "kmeans-position":
        X0 = kmeans_positions(sc.users, sc.M, sc.seed, sc.area, sc.h_min, sc.d_min)
    state0 = initial_state(sc, X0, opt_net)
    init_rates = rates(state0.P, state0.C, true_net.gains(state0.X), true_net.noise)

    state, status, traces, history, inner_status, Z_relaxed, Z_rounded = optimize(
        opt_net, state0, sc.algo,
        optimize_positions=scheme != "kmeans-position",
        outer_loop=scheme != "fixed-association",
        hook=hook)
    G = true_net.gains(state.X)
    bd = objective_Z(state.P, state.C, state.Lambda, G, true_net.noise)
    return RunReport(status, scheme, state, bd, init_rates.min_rate, Z_relaxed, Z_rounded,
                     history, inner_status, traces, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# random scenes and Monte Carlo
# ---------------------------------------------------------------------------

def random_buildings(count: int, area, rng, side=(20.0, 80.0), height=(10.0, 96.0),
                     margin: float = 0.0) -> tuple:
    """Axis-aligned boxes with uniform footprint sides and heights."""
    out = []
    for _ in range(count):
        sx, sy = rng.uniform(*side, size=2)
        x = rng.uniform(margin, area[0] - sx - margin)
        y = rng.uniform(margin, area[1] - sy - margin)
        out.append(Building([x, y, 0.0], [sx, sy, rng.uniform(*height)]))
    return tuple(out)


def sample_users(count: int, area, buildings: Sequence[Building], rng,
                 clearance: float = 1.0) -> np.ndarray:
    """Uniform ground positions outside every footprint (rejection sampling).

    ``clearance`` keeps users that far from footprint boundaries.
    """
    out = []
    for k in range(count):
        for _ in range(MAX_SAMPLING_ATTEMPTS):
            p = np.array([rng.uniform(0, area[0]), rng.uniform(0, area[1]), 0.0])
            if not any(_near_box(p, b, clearance) for b in buildings):
                out.append(p)
                break
        else:
            raise ScenarioError(f"could not place user {k} outside the buildings "
                                f"after {MAX_SAMPLING_ATTEMPTS} attempts")
    return np.array(out).reshape(-1, 3)


def _near_box(p, b: Building, pad: float) -> bool:
    lo, hi = b.min_corner - pad, b.max_corner + pad
    return lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]


def synthetic_scene(K: int = 8, M: int = 4, N: int = 4, seed: int = 0,
                    n_buildings: int = 60, **kw) -> Scenario:
    """Dense-urban test scene: random boxes in 1500 x 1500 m, users placed outside."""
    rng = np.random.default_rng(seed)
    area = kw.pop("area", (1500.0, 1500.0))
    buildings = random_buildings(n_buildings, area, rng)
    users = sample_users(K, area, buildings, rng)
    return Scenario(area=area, buildings=buildings, users=users, M=M, N=N, seed=seed, **kw)


def _one_run(args):
    sc, scheme = args
    try:
        rep = run_scheme(sc, scheme)
        return scheme, rep.min_rate, rep.status
    except Exception as exc:  # counted as a failed run
        return scheme, float("nan"), f"error: {exc}"


def realization(template: Scenario, r: int) -> Scenario:
    """Realisation r of a template: users resampled with a derived seed."""
    seed = template.seed * 100_003 + r
    rng = np.random.default_rng(seed)
    users = sample_users(template.K, template.area, template.buildings, rng)
    return template.with_(users=users, seed=seed)


def monte_carlo(template: Scenario, realizations: int, schemes=("proposed",),
                jobs: int = 1) -> dict:
    """Mean and standard error of the min-rate per scheme.

    Returns ``{scheme: {"mean", "stderr", "runs_ok", "runs_failed", "values",
    "statuses"}}`` with per-realization values in realization order. Runs with
    an exception or a non-finite rate count as failed.
    """
    tasks = [(realization(template, r), s) for r in range(realizations) for s in schemes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]
    out = {}
    for s in schemes:
        vals = [v for sch, v, _ in results if sch == s]
        stats = [st for sch, _, st in results if sch == s]
        ok = np.array([v for v in vals if np.isfinite(v)])
        n = len(ok)
        out[s] = {
            "mean": float(ok.mean()) if n else float("nan"),
            "stderr": float(ok.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0 if n else float("nan"),
            "runs_ok": n,
            "runs_failed": len(vals) - n,
            "values": vals,
            "statuses": stats,
        }
    return out

