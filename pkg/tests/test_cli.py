import csv
import json

import numpy as np
import pytest

from blockuav import cli
from blockuav.geometry import BlockedRegion, HalfSpace
from blockuav.scenario import scenario_to_dict, synthetic_scene


def _write(path, sc, **extra):
    d = scenario_to_dict(sc)
    d["algo"].update(extra)
    path.write_text(json.dumps(d))
    return str(path)


@pytest.fixture(scope="module")
def small_file(tmp_path_factory):
    sc = synthetic_scene(4, 2, 2, seed=3, n_buildings=12)
    return _write(tmp_path_factory.mktemp("scn") / "small.json", sc, max_inner=6, max_outer=4)


@pytest.fixture(scope="module")
def run_dir(small_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["run", small_file, "--trace", "--out", str(out)])
    return code, out


def test_run_writes_result_and_trace(run_dir, capsys):
    code, out = run_dir
    assert code in (cli.EXIT_OK, cli.EXIT_NOT_CONVERGED)
    res = json.loads((out / "result.json").read_text())
    assert res["format_version"] == cli.FORMAT_VERSION
    assert (code == cli.EXIT_OK) == (res["status"] == "converged")
    assert res["min_rate"] == pytest.approx(min(res["user_rates"]))
    assert res["min_rate"] >= res["initial_min_rate"]
    assert len(res["state"]["uav_positions"]) == 2
    lines = (out / "trace.ndjson").read_text().splitlines()
    assert len(lines) == res["inner_iterations"]
    first = json.loads(lines[0])
    assert first["format_version"] == cli.FORMAT_VERSION and "wall_time" not in first


def test_run_exit_codes(tmp_path, small_file):
    too_many = synthetic_scene(9, 2, 2, seed=1, n_buildings=4)
    assert cli.main(["run", _write(tmp_path / "big.json", too_many),
                     "--out", str(tmp_path)]) == cli.EXIT_INVALID
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_INVALID
    assert cli.main(["run", small_file, "--max-outer", "0"]) == cli.EXIT_INVALID
    # one outer iteration cannot drive the relaxed association to binary here,
    # yet the result file is still written
    code = cli.main(["run", small_file, "--max-outer", "1", "--out", str(tmp_path)])
    res = json.loads((tmp_path / "result.json").read_text())
    assert code == cli.EXIT_NOT_CONVERGED and res["status"] == "not-converged"
    assert res["min_rate"] >= res["initial_min_rate"]


def test_outputs_are_byte_reproducible(small_file, tmp_path, run_dir):
    _, first = run_dir
    assert cli.main(["run", small_file, "--trace", "--out", str(tmp_path)]) in (0, 3)
    for name in ("result.json", "trace.ndjson"):
        assert (tmp_path / name).read_bytes() == (first / name).read_bytes()


def test_validate_default_and_bad_user(tmp_path, small_file, capsys):
    assert cli.main(["validate", small_file]) == cli.EXIT_OK
    d = json.loads(open(small_file).read())
    b = d["buildings"][0]
    d["users"][0] = [b["min"][0] + 1.0, b["min"][1] + 1.0, 0.0]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["validate", str(p)]) == cli.EXIT_INVALID
    assert "inside" in capsys.readouterr().out


def test_validate_catches_tampered_normal(small_file, monkeypatch, capsys):
    real = cli.blocked_regions

    def tampered(users, buildings):
        regions = real(users, buildings)
        reg = next(r for rs in regions for r in rs)
        h = reg.halfspaces[0]
        bad = BlockedRegion((HalfSpace(1.5 * h.a, 1.5 * h.b),) + reg.halfspaces[1:],
                            reg.user_index, reg.building_index)
        return [[bad if r is reg else r for r in rs] for rs in regions]

    monkeypatch.setattr(cli, "blocked_regions", tampered)
    assert cli.main(["validate", small_file]) == cli.EXIT_INVALID
    assert "unit" in capsys.readouterr().out


def test_sweep_single_row_matches_runs(tmp_path, small_file):
    code = cli.main(["sweep", small_file, "--axis", "uavs", "--values", "2",
                     "--realizations", "2", "--scheme", "fixed-association",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    assert len(rows) == 1 and rows[0]["scheme"] == "fixed-association"
    runs = list(csv.DictReader(open(tmp_path / "sweep_runs.csv")))
    vals = np.array([float(r["min_rate"]) for r in runs])
    assert float(rows[0]["mean_min_rate"]) == pytest.approx(vals.mean(), rel=1e-12)
    assert float(rows[0]["stderr"]) == pytest.approx(vals.std(ddof=1) / np.sqrt(2), rel=1e-12)
    assert rows[0]["runs_ok"] == "2" and rows[0]["format_version"] == str(cli.FORMAT_VERSION)
    before = (tmp_path / "sweep.csv").read_bytes()
    cli.main(["sweep", small_file, "--axis", "uavs", "--values", "2", "--realizations", "2",
              "--scheme", "fixed-association", "--out", str(tmp_path)])
    assert (tmp_path / "sweep.csv").read_bytes() == before


def test_sweep_counts_invalid_points_as_failures(tmp_path, small_file):
    # four users on one UAV with two subcarriers is infeasible
    code = cli.main(["sweep", small_file, "--axis", "uavs", "--values", "1",
                     "--realizations", "3", "--scheme", "fixed-association",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    row = next(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert row["runs_ok"] == "0" and row["runs_failed"] == "3" and row["mean_min_rate"] == "nan"


@pytest.mark.parametrize("argv", [
    ["--values", ""], ["--values", "0"], ["--values", "2", "--realizations", "0"],
    ["--values", "2", "--scheme", "best"],
])
def test_sweep_rejects_bad_specs(tmp_path, small_file, argv):
    assert cli.main(["sweep", small_file, "--out", str(tmp_path)] + argv) == cli.EXIT_INVALID


def test_users_axis_resamples_users():
    base = synthetic_scene(4, 2, 2, seed=3, n_buildings=12)
    tpl = cli.sweep_template(base, "users", 3)
    assert tpl.K == 3 and tpl.M == 2
    assert cli.sweep_template(base, "subcarriers", 5).N == 5
