"""Command-line front end: ``run``, ``sweep`` and ``validate``.

Exit codes: 0 ok, 2 invalid input, 3 run finished without converging.
Output files carry a ``format_version`` field and leave out wall-clock
timings, so identical inputs give identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .geometry import ShadowSet, blocked_regions, check_region, los_oracle
from .pdlio import StepError
from .scenario import (SCHEMES, Scenario, ScenarioError, monte_carlo, run_scheme,
                       sample_users, scenario_from_dict, validate)

FORMAT_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3
AXES = {"users": "K", "uavs": "M", "subcarriers": "N"}
SWEEP_COLUMNS = ("axis_value", "scheme", "mean_min_rate", "stderr", "runs_ok",
                 "runs_failed", "format_version")
ORACLE_SAMPLES = 200
PROBE_BAND = 400.0  # metres above h_min sampled by the geometry self-check


def _read_scenario(path, seed=None, max_outer=None, max_inner=None) -> Scenario:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    if seed is not None:
        d["seed"] = seed
    algo = dict(d.get("algo") or {})
    if max_outer is not None:
        algo["max_outer"] = max_outer
    if max_inner is not None:
        algo["max_inner"] = max_inner
    d["algo"] = algo
    return scenario_from_dict(d)


def _report_problems(problems, stream=sys.stderr):
    print("invalid scenario:", file=stream)
    for p in problems:
        print(f"  - {p}", file=stream)


def _num(x):
    # JSON has no NaN/inf
    x = float(x)
    return x if math.isfinite(x) else None


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v


def result_dict(report, sc: Scenario) -> dict:
    st = report.state
    return {
        "format_version": FORMAT_VERSION,
        "scheme": report.scheme,
        "status": report.status,
        "counts": {"k": sc.K, "m": sc.M, "n": sc.N},
        "seed": sc.seed,
        "min_rate": _num(report.min_rate),
        "initial_min_rate": _num(report.initial_min_rate),
        "user_rates": [_num(r) for r in report.breakdown.rate_user],
        "bottleneck_user": int(report.breakdown.bottleneck_user),
        "outer_iterations": report.outer_iterations,
        "inner_iterations": len(report.traces),
        "violation_history": [_num(v) for v in report.violation_history],
        "Z_relaxed": _num(report.Z_relaxed),
        "Z_rounded": _num(report.Z_rounded),
        "state": {
            "uav_positions": st.X.tolist(),
            "power": st.P.tolist(),
            # user k -> (uav, subcarrier)
            "association": [[int(i) for i in np.unravel_index(np.argmax(c), c.shape)]
                            for c in st.C],
        },
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    try:
        sc = _read_scenario(args.scenario, args.seed, args.max_outer, args.max_inner)
    except ScenarioError as exc:
        _report_problems(exc.problems)
        return EXIT_INVALID
    problems = validate(sc)
    if problems:
        _report_problems(problems)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_scheme(sc, args.scheme)
    except StepError as exc:
        _write_json(out / "result.json", {"format_version": FORMAT_VERSION,
                                          "scheme": args.scheme, "status": "failed",
                                          "error": str(exc)})
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    _write_json(out / "result.json", result_dict(report, sc))
    if args.trace:
        with open(out / "trace.ndjson", "w") as fh:
            for t in report.traces:
                line = {"format_version": FORMAT_VERSION}
                line.update({k: _plain(v) for k, v in t.as_dict(timing=False).items()})
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"{report.min_rate:.6f}")
    return EXIT_OK if report.status == "converged" else EXIT_NOT_CONVERGED


def sweep_template(base: Scenario, axis: str, value: int) -> Scenario:
    """``base`` with one count replaced; a new user count resamples the users."""
    if axis == "users":
        rng = np.random.default_rng(base.seed)
        return base.with_(users=sample_users(value, base.area, base.buildings, rng))
    return base.with_(**{AXES[axis]: value})


def sweep_rows(base: Scenario, axis: str, values, realizations: int, schemes,
               jobs: int = 1):
    """Aggregated rows and per-run rows for a sweep."""
    rows, runs = [], []
    for v in values:
        tpl = sweep_template(base, axis, v)
        if validate(tpl):
            # every realization shares the counts, so all of them fail
            agg = {s: {"mean": float("nan"), "stderr": float("nan"), "runs_ok": 0,
                       "runs_failed": realizations, "values": [float("nan")] * realizations,
                       "statuses": ["invalid"] * realizations} for s in schemes}
        else:
            agg = monte_carlo(tpl, realizations, schemes, jobs)
        for s in schemes:
            a = agg[s]
            rows.append({"axis_value": v, "scheme": s, "mean_min_rate": a["mean"],
                         "stderr": a["stderr"], "runs_ok": a["runs_ok"],
                         "runs_failed": a["runs_failed"], "format_version": FORMAT_VERSION})
            for r, (val, st) in enumerate(zip(a["values"], a["statuses"])):
                runs.append({"axis_value": v, "scheme": s, "realization": r,
                             "min_rate": val, "status": st,
                             "format_version": FORMAT_VERSION})
    return rows, runs


def _fmt(x):
    if isinstance(x, float):
        return "nan" if not math.isfinite(x) else repr(x)
    return str(x)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def cmd_sweep(args) -> int:
    try:
        base = _read_scenario(args.scenario, args.seed, args.max_outer, args.max_inner)
    except ScenarioError as exc:
        _report_problems(exc.problems)
        return EXIT_INVALID
    problems = []
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        values = []
    if not values or min(values) < 1:
        problems.append("--values must be a nonempty list of positive integers")
    if args.realizations < 1:
        problems.append("--realizations must be at least 1")
    schemes = _schemes(args.scheme, problems)
    if problems:
        _report_problems(problems)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = sweep_rows(base, args.axis, values, args.realizations, schemes, args.jobs)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    _write_csv(out / "sweep_runs.csv", ("axis_value", "scheme", "realization", "min_rate",
                                        "status", "format_version"), runs)
    for r in rows:
        print(f"{args.axis}={r['axis_value']} {r['scheme']}: {r['mean_min_rate']:.4f} "
              f"+/- {r['stderr']:.4f} ({r['runs_ok']} ok, {r['runs_failed']} failed)")
    return EXIT_OK


def _schemes(spec: str, problems: list):
    schemes = [s.strip() for s in spec.split(",") if s.strip()]
    bad = [s for s in schemes if s not in SCHEMES]
    if bad or not schemes:
        problems.append(f"unknown scheme(s) {bad}; choose from {', '.join(SCHEMES)}")
    return schemes


def geometry_self_check(sc: Scenario, samples: int = ORACLE_SAMPLES,
                        min_clearance: float = 1e-9) -> list[str]:
    """Region invariants plus agreement of the polyhedral LoS test with the
    segment-box oracle at random probe points.

    Probes live in the flight domain (altitude at least ``h_min``). Below
    the rooftops the polyhedra also cover the wedge between a user and the
    building, which a UAV can never reach. Probes whose normalised
    clearance is below ``min_clearance`` sit on a shadow boundary, where
    either answer is acceptable, and are skipped.
    """
    problems = []
    if not sc.buildings or not sc.K:
        return problems
    regions = blocked_regions(sc.users, sc.buildings)
    for k, regs in enumerate(regions):
        for reg in regs:
            for msg in check_region(reg, sc.users[k]):
                problems.append(f"user {k}, building {reg.building_index}: {msg}")
    if problems:
        return problems
    shadows = [ShadowSet(r) for r in regions]
    rng = np.random.default_rng(sc.seed)
    mismatches = 0
    for _ in range(samples):
        k = int(rng.integers(sc.K))
        x = np.array([rng.uniform(0, sc.area[0]), rng.uniform(0, sc.area[1]),
                      rng.uniform(sc.h_min, sc.h_min + PROBE_BAND)])
        dist = np.linalg.norm(x - sc.users[k])
        if shadows[k].empty:
            poly_clear = True
        else:
            d = float(shadows[k].clearances(x[None, :])[0][0])
            if abs(d) / dist < min_clearance:
                continue
            poly_clear = d > 0
        if poly_clear != los_oracle(sc.users[k], x, sc.buildings):
            mismatches += 1
    if mismatches:
        problems.append(f"polyhedral LoS test disagrees with the box oracle on "
                        f"{mismatches} of {samples} probes")
    return problems


def cmd_validate(args) -> int:
    try:
        sc = _read_scenario(args.scenario, args.seed)
    except ScenarioError as exc:
        _report_problems(exc.problems)
        return EXIT_INVALID
    problems = validate(sc)
    if not problems:
        problems = geometry_self_check(sc)
    if problems:
        _report_problems(problems, sys.stdout)
        return EXIT_INVALID
    print(f"ok: K={sc.K} M={sc.M} N={sc.N}, {len(sc.buildings)} buildings, "
          f"geometry self-check passed on {ORACLE_SAMPLES} probes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockuav",
                                description="Blockage-aware multi-UAV max-min rate optimiser")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solver=True):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
        if solver:
            sp.add_argument("--out", default=".", help="output directory")
            sp.add_argument("--max-outer", type=int, default=None)
            sp.add_argument("--max-inner", type=int, default=None)

    r = sub.add_parser("run", help="optimise one scenario")
    common(r)
    r.add_argument("--scheme", default="proposed", choices=SCHEMES)
    r.add_argument("--trace", action="store_true",
                   help="also write trace.ndjson, one line per inner iteration")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo sweep over K, M or N")
    common(s)
    s.add_argument("--axis", choices=sorted(AXES), default="users")
    s.add_argument("--values", required=True, help="comma-separated counts, e.g. 4,8,12")
    s.add_argument("--realizations", type=int, default=20)
    s.add_argument("--scheme", default=",".join(SCHEMES),
                   help="comma-separated schemes (default: all)")
    s.add_argument("--jobs", type=int, default=1, help="parallel realizations")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a scenario and the shadow geometry")
    common(v, solver=False)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "max_outer", None) is not None or getattr(args, "max_inner", None) is not None:
        for name in ("max_outer", "max_inner"):
            val = getattr(args, name, None)
            if val is not None and val < 1:
                _report_problems([f"--{name.replace('_', '-')} must be at least 1"])
                return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
