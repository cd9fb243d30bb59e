from __future__ import annotations

import json
from pathlib import Path

import pytest

from lakevortex import __version__
from lakevortex.cli import CONFIG_DIR, config_hash, load_config, main

SMALL_SOLVE = {
    "lake": {"preset": "disk_interior_max_b", "resolution": 64},
    "flux": {"preset": "cosine", "amplitude": 0.02},
    "nonlinearity": {"preset": "jump_linear", "c": 0.5},
    "params": {"eps": 0.15, "delta": 0.5, "kappa0": 1.0, "lam": 50.0},
    "seed": [0.0, 0.0],
}

SMALL_SWEEP = {
    "lake": {"preset": "disk_interior_max_b", "resolution": 64},
    "flux": {"preset": "cosine", "amplitude": 0.02},
    "nonlinearity": {"preset": "jump_linear", "c": 0.5},
    "sweep": {"schedule": "critical", "eps_list": [0.2, 0.14], "kappa0": 1.0,
              "lam": 50.0},
}


def _write(tmp_path: Path, cfg: dict, name: str = "cfg.json") -> Path:
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_solve_writes_state_and_diagnostics(tmp_path):
    cfg = _write(tmp_path, SMALL_SOLVE)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    state = json.loads((tmp_path / "out" / "state.json").read_text())
    assert state["converged"] is True
    assert state["version"] == __version__
    assert state["config_sha256"] == config_hash(SMALL_SOLVE)
    assert len(state["zeta_row_major"]) == state["grid"]["nx"] * state["grid"]["ny"]
    csv_text = (tmp_path / "out" / "diag.csv").read_text().splitlines()
    assert csv_text[0].startswith(f"# lakevortex {__version__} config_sha256=")
    assert csv_text[1].split(",")[0] == "eps"
    assert len(csv_text) == 3


def test_sweep_writes_csv_and_summary(tmp_path):
    cfg = _write(tmp_path, SMALL_SWEEP)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rows = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 2 + len(SMALL_SWEEP["sweep"]["eps_list"])
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["regime"] == "critical"
    assert "checks" in summary and "diam_slope" in summary


def test_sweep_csv_cells_are_plain_floats(tmp_path):
    import csv

    cfg = _write(tmp_path, SMALL_SWEEP)
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "out")])
    with open(tmp_path / "out" / "sweep.csv") as fh:
        rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
    for row in rows[1:]:
        for cell in row:
            float(cell)  # every cell round-trips as a plain float literal


def test_sweep_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL_SWEEP)
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == \
        (tmp_path / "b" / "sweep.csv").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_bytes() == \
        (tmp_path / "b" / "summary.json").read_bytes()


def test_increasing_eps_list_is_config_error(tmp_path):
    bad = json.loads(json.dumps(SMALL_SWEEP))
    bad["sweep"]["eps_list"] = [0.1, 0.2]
    cfg = _write(tmp_path, bad)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_unknown_preset_is_config_error(tmp_path):
    bad = json.loads(json.dumps(SMALL_SOLVE))
    bad["lake"]["preset"] = "pacific"
    cfg = _write(tmp_path, bad)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "lake": {,}\n}')
    assert main(["solve", "--config", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "broken.json:2" in err


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path)]) == 2


def test_missing_required_key(tmp_path):
    cfg = _write(tmp_path, {"lake": {"preset": "disk_constant_b", "resolution": 64}})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_oracle_test_bundled(tmp_path):
    cfg = CONFIG_DIR / "oracle_tiny.json"
    assert main(["oracle-test", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "oracle_report.json").read_text())
    assert report["all_passed"] is True
    assert [f["cells"] for f in report["fixtures"]] == [1, 2, 4]
    for f in report["fixtures"]:
        assert f["solver_energy"] >= f["oracle_energy"] - f["gap_bound"]


def test_check_hypotheses_bundled(tmp_path):
    cfg = CONFIG_DIR / "hypotheses_power2.json"
    assert main(["check-hypotheses", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "hypotheses.json").read_text())
    assert report["h1_monotone"] is True
    assert abs(report["theta0_estimate"] - 1.0 / 3.0) < 1e-3
    assert abs(report["theta1_estimate"] - 2.0 / 3.0) < 1e-3


def test_check_hypotheses_flags_non_monotone(tmp_path):
    cfg = _write(tmp_path, {
        "nonlinearity": {"preset": "table",
                         "points": [[0.0, 0.5], [1.0, 2.0], [2.0, 1.0], [3.0, 4.0]]},
        "hypotheses": {"s_max": 3.0, "n": 500},
    })
    assert main(["check-hypotheses", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_kernel_test_small(tmp_path):
    cfg = _write(tmp_path, {"kernel": {"resolution": 64, "pairs": 200,
                                       "rng_seed": 11}})
    assert main(["kernel-test", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "kernel_report.json").read_text())
    assert report["upper_bound_ok"] and report["green_symmetry_ok"]
    assert report["representation_ok"]
    # the printed lower envelope is recorded but not asserted
    assert "lower_bound_min_slack_logged" in report


def test_bundled_solve_config(tmp_path):
    cfg = CONFIG_DIR / "solve_critical.json"
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "state.json").exists()
    assert (tmp_path / "diag.csv").exists()


def test_load_config_rejects_non_object(tmp_path):
    from lakevortex.cli import ConfigError

    p = tmp_path / "list.json"
    p.write_text("[1, 2, 3]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(p)
