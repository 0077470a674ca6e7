import csv
import io
import json

import pytest

from worldline import __version__, analytic
from worldline.cli import (CP_COLUMNS, EXIT_CONFIG, EXIT_OK, EXIT_SELFTEST, PLATES_COLUMNS,
                           SWEEP_COLUMNS, count, main, parse_args)


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _split(text):
    header = [l for l in text.splitlines() if l.startswith("#")]
    body = [l for l in text.splitlines() if l and not l.startswith("#")]
    return header, body


def _csv_rows(text):
    _, body = _split(text)
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def _jsonl_rows(text):
    _, body = _split(text)
    return [json.loads(l) for l in body]


# ---------------------------------------------------------------------------
# argument handling

def test_scientific_counts():
    assert count("1e6") == 1_000_000 and count("250") == 250
    args = parse_args(["cp", "--chi", "1", "--paths", "1e6", "--steps", "1e4"])
    assert args.paths == 1_000_000 and args.steps == 10_000


def test_non_integer_count_is_rejected(capsys):
    code, _, err = _run(capsys, "cp", "--chi", "1", "--paths", "1.5e0")
    assert code == EXIT_CONFIG and "error" in err


def test_missing_coupling_is_a_config_error(capsys):
    assert _run(capsys, "cp", "--paths", "10")[0] == EXIT_CONFIG
    assert _run(capsys, "plates", "--paths", "10")[0] == EXIT_CONFIG
    assert _run(capsys, "sweep", "--chi", "1")[0] == EXIT_CONFIG


def test_invalid_engine_value_is_a_config_error(capsys):
    assert _run(capsys, "cp", "--chi", "-1", "--paths", "10")[0] == EXIT_CONFIG


def test_version(capsys):
    code, out, _ = _run(capsys, "--version")
    assert code == EXIT_OK and __version__ in out


def test_config_file_defaults_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nchi = 100\npaths = 2e3\nseed = 7\npa-m = 5\n")
    args = parse_args(["cp", "--config", str(cfg), "--seed", "9"])
    assert args.chi == 100.0 and args.paths == 2000 and args.pa_m == 5
    assert args.seed == 9


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("temperature = 3\n")
    assert _run(capsys, "cp", "--config", str(cfg))[0] == EXIT_CONFIG


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("WORLDLINE_WORKERS", "3")
    assert parse_args(["cp", "--chi", "1"]).workers == 3
    assert parse_args(["cp", "--chi", "1", "--workers", "2"]).workers == 2
    monkeypatch.setenv("WORLDLINE_WORKERS", "many")
    with pytest.raises(ValueError):
        parse_args(["cp", "--chi", "1"])


# ---------------------------------------------------------------------------
# cp

def test_cp_without_medium_writes_zero(capsys):
    code, out, _ = _run(capsys, "cp", "--chi", "0", "--paths", "1000", "--steps", "100")
    assert code == EXIT_OK
    (row,) = _csv_rows(out)
    assert float(row["estimate"]) == 0.0 and float(row["stderr"]) == 0.0
    assert list(row) == list(CP_COLUMNS)


def test_header_block(capsys):
    _, out, _ = _run(capsys, "cp", "--chi", "1", "--paths", "200", "--steps", "100", "--seed", "4")
    header, _ = _split(out)
    assert header[0] == f"# worldline {__version__}"
    assert header[1] == "# command: cp"
    assert header[2].startswith("# config: ")
    cfg = json.loads(header[2][len("# config: "):])
    assert cfg["chi"] == 1.0 and cfg["seed"] == 4 and cfg["n_paths"] == 200


def test_csv_and_jsonl_carry_the_same_fields(capsys):
    argv = ["cp", "--chi", "10", "--paths", "300", "--steps", "200", "--order", "1", "--pa-m", "4"]
    _, a, _ = _run(capsys, *argv)
    _, b, _ = _run(capsys, *argv, "--format", "jsonl")
    (c,), (j,) = _csv_rows(a), _jsonl_rows(b)
    assert set(c) == set(j) == set(CP_COLUMNS)
    for key in ("estimate", "stderr", "oracle"):
        assert float(c[key]) == j[key]


def test_identical_reruns_give_identical_rows(capsys, tmp_path):
    argv = ["cp", "--chi", "5", "--paths", "500", "--steps", "200", "--seed", "3"]
    rows = []
    for k in range(2):
        path = tmp_path / f"out{k}.csv"
        assert main(argv + ["--out", str(path)]) == EXIT_OK
        rows.append(_csv_rows(path.read_text()))
    for a, b in zip(*rows):
        a.pop("wall_time_s"), b.pop("wall_time_s")
        assert a == b


def test_cp_fd_row(capsys):
    code, out, _ = _run(capsys, "cp", "--chi", "100", "--method", "fd", "--order", "1",
                        "--delta", "0.05", "--paths", "500", "--steps", "200")
    (row,) = _csv_rows(out)
    assert code == EXIT_OK and row["method"] == "fd" and float(row["m_or_delta"]) == 0.05
    assert float(row["oracle"]) == analytic.eta_te(100.0)


# ---------------------------------------------------------------------------
# plates

def test_plates_transparent_row(capsys):
    code, out, _ = _run(capsys, "plates", "--chi-hat", "0", "--paths", "500", "--steps", "100")
    (row,) = _csv_rows(out)
    assert code == EXIT_OK and list(row) == list(PLATES_COLUMNS)
    assert float(row["estimate"]) == 0.0 and float(row["stderr"]) == 0.0


def test_plates_force_matches_oracle(capsys):
    code, out, _ = _run(capsys, "plates", "--chi-hat", "1", "--observable", "force",
                        "--paths", "1e5", "--steps", "1000", "--pa-m", "16", "--seed", "2")
    (row,) = _csv_rows(out)
    est, err, oracle = (float(row[k]) for k in ("estimate", "stderr", "oracle"))
    assert code == EXIT_OK and row["observable"] == "force"
    assert oracle == pytest.approx(analytic.gamma_te_derivatives(1.0, 1.0, 1), rel=1e-12)
    assert abs(est - oracle) <= 3 * err


def test_plates_torque_about_plate_point(capsys):
    code, out, _ = _run(capsys, "plates", "--chi-hat", "1", "--observable", "torque",
                        "--pivot", "0,0,0", "--paths", "2e4", "--steps", "500", "--pa-m", "8")
    rows = _csv_rows(out)
    assert code == EXIT_OK
    assert [r["observable"] for r in rows] == ["torque_x", "torque_y", "torque_z"]
    for r in rows:
        assert abs(float(r["estimate"])) <= 3 * float(r["stderr"]) or float(r["stderr"]) == 0.0
    header, _ = _split(out)
    assert any(h.startswith("# extra: ") and "lever" in h for h in header)


# ---------------------------------------------------------------------------
# sweep

def test_sweep_rows_and_fit_row(capsys):
    pts = "0.001,0.002,0.004,0.008,0.016,0.032,0.064,0.128"
    code, out, _ = _run(capsys, "sweep", "--chi", "100", "--order", "1", "--points", pts,
                        "--paths", "300", "--steps", "500", "--fit-small", "0.001,0.004",
                        "--fit-large", "0.032,0.128")
    rows = _csv_rows(out)
    assert code == EXIT_OK and len(rows) == 9
    assert all(set(SWEEP_COLUMNS) <= set(r) for r in rows)
    assert [float(r["axis_value"]) for r in rows[:8]] == [float(p) for p in pts.split(",")]
    fit = rows[-1]
    assert fit["flag"].startswith("fit")
    assert fit["small_range"] == "0.001;0.004"
    assert fit["large_range"] == "0.032;0.128"


@pytest.mark.parametrize("shared", [True, False])
def test_sweep_shared_seed_toggle(capsys, shared):
    code, out, _ = _run(capsys, "sweep", "--chi", "100", "--order", "1", "--points", "0.01,0.02,0.04",
                        "--paths", "100", "--steps", "200", "--seed", "5",
                        "--shared-seed", str(shared).lower(), "--format", "jsonl")
    rows = _jsonl_rows(out)[:3]
    seeds = {r["seed"] for r in rows}
    assert code == EXIT_OK
    assert (seeds == {5}) if shared else (len(seeds) == 3)


# ---------------------------------------------------------------------------
# selftest

def test_selftest_passes(capsys):
    code, out, _ = _run(capsys, "selftest")
    assert code == EXIT_OK, out
    assert "FAIL" not in out


def test_selftest_catches_mutation(capsys):
    code, out, _ = _run(capsys, "selftest", "--mutate", "eta-sign")
    assert code == EXIT_SELFTEST and "FAIL" in out
