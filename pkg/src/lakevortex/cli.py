"""Command-line interface: configuration, orchestration, persistence.

Subcommands: solve, sweep, oracle-test, check-hypotheses, kernel-test.
All runs are driven by a JSON config; outputs embed the config hash and the
package version, and reruns of the same config are byte-identical (the only
randomness is the seeded sampling in kernel-test).

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    DIAG_COLUMNS,
    DeltaSchedule,
    Diagnostics,
    mass_fraction_near,
    radial_monotonicity_score,
    rescale_profile,
    run_sweep,
    support_cells,
    support_diameter,
    vorticity_center,
)
from .elliptic import (
    CompatibilityError,
    SolverError,
    assemble_operator,
    flux_preset,
    kernel_representation_residual,
)
from .geometry import (
    GeometryError,
    build_lake,
    disk_indicator_averaged,
    green_disk,
    h_kernel,
    h_kernel_bounds,
    rect_lake,
)
from .nonlinearity import VorticityFunction, verify_hypotheses
from .variational import (
    AdmissibilityError,
    AdmissibleParams,
    brute_force_oracle,
    oracle_gap_bound,
    solve_vortex,
)

log = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    """Invalid or missing configuration."""


# ---------------------------------------------------------------------------
# config handling


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return cfg


def _require(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return cfg[key]


def _positive(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if v <= 0.0 or not math.isfinite(v):
        raise ConfigError(f"{name} must be positive and finite, got {v}")
    return v


def build_lake_from(cfg: dict):
    lcfg = _require(cfg, "lake")
    preset = _require(lcfg, "preset", "lake")
    resolution = _require(lcfg, "resolution", "lake")
    try:
        return build_lake(preset, int(resolution))
    except GeometryError as exc:
        raise ConfigError(f"lake: {exc}") from exc


def flux_from(cfg: dict, lake) -> np.ndarray:
    fcfg = cfg.get("flux", {"preset": "zero"})
    preset = _require(fcfg, "preset", "flux")
    try:
        return flux_preset(
            lake, preset,
            amplitude=float(fcfg.get("amplitude", 1.0)),
            points=fcfg.get("points"),
        )
    except ValueError as exc:
        raise ConfigError(f"flux: {exc}") from exc


def vf_from(cfg: dict) -> VorticityFunction:
    ncfg = _require(cfg, "nonlinearity")
    preset = _require(ncfg, "preset", "nonlinearity")
    try:
        if preset == "power":
            return VorticityFunction("power", p=float(ncfg.get("p", 2.0)))
        if preset == "jump_linear":
            return VorticityFunction("jump_linear", c=float(ncfg.get("c", 0.0)))
        if preset == "table":
            return VorticityFunction("table", points=tuple(map(tuple, _require(ncfg, "points", "nonlinearity"))))
    except ValueError as exc:
        raise ConfigError(f"nonlinearity: {exc}") from exc
    raise ConfigError(f"nonlinearity: unknown preset {preset!r}")


def params_from(cfg: dict) -> AdmissibleParams:
    pcfg = _require(cfg, "params")
    try:
        return AdmissibleParams(
            eps=_positive(_require(pcfg, "eps", "params"), "params.eps"),
            delta=_positive(_require(pcfg, "delta", "params"), "params.delta"),
            kappa0=_positive(_require(pcfg, "kappa0", "params"), "params.kappa0"),
            lam=_positive(_require(pcfg, "lam", "params"), "params.lam"),
        )
    except AdmissibilityError as exc:
        raise ConfigError(f"params: {exc}") from exc


# ---------------------------------------------------------------------------
# output helpers


def _float_repr(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip, independent of numpy scalar reprs
    return str(x)


def write_csv(path: Path, rows: list, cfg_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# lakevortex {__version__} config_sha256={cfg_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(DIAG_COLUMNS)
        for r in rows:
            writer.writerow([_float_repr(v) for v in r.row()])


def write_json(path: Path, payload: dict, cfg_hash: str) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    payload["config_sha256"] = cfg_hash
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def state_to_dict(lake, state) -> dict:
    """Serializable solve state: full-grid row-major vorticity plus metadata."""
    grid = lake.field_to_grid(state.zeta)
    return {
        "zeta_row_major": grid.ravel().tolist(),
        "grid": {
            "nx": int(lake.mask.shape[1]),
            "ny": int(lake.mask.shape[0]),
            "h": lake.h,
            "x0": float(lake.xs[0]),
            "y0": float(lake.ys[0]),
            "preset": lake.preset_id,
        },
        "mu": state.mu,
        "energy": {"E_q": state.energy.e_q, "F_eps": state.energy.f_eps,
                   "E_total": state.energy.total},
        "energy_trace": state.energy_trace,
        "iterations": state.iterations,
        "converged": state.converged,
        "fp_residual": state.fp_residual,
        "params": dataclasses.asdict(state.params),
    }


def _diagnostics_for(lake, state, params, target=None, target_radius=0.2) -> Diagnostics:
    xc = vorticity_center(lake, state.zeta)
    anchor = np.asarray(target, dtype=float) if target is not None else xc
    sup = support_cells(lake, state.zeta)
    try:
        score = radial_monotonicity_score(rescale_profile(lake, state.zeta, params, xc))
    except ValueError:
        score = float("nan")
    return Diagnostics(
        eps=params.eps,
        delta=params.delta,
        diam_supp=support_diameter(lake, state.zeta),
        xc=float(xc[0]),
        yc=float(xc[1]),
        dist_boundary=float(lake.dist_to_boundary(lake.centers[sup]).min()) if sup.any() else float("nan"),
        mu=state.mu,
        sup_K=float("nan"),  # caller fills in from the solved stream parts
        E_q=state.energy.e_q,
        F_eps=state.energy.f_eps,
        E_total=state.energy.total,
        mass_frac=mass_fraction_near(lake, state.zeta, anchor, target_radius),
        radial_score=score,
        converged=state.converged,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: dict, out: Path, jobs: int) -> int:
    lake = build_lake_from(cfg)
    handle = assemble_operator(lake)
    from .elliptic import solve_background

    nu = flux_from(cfg, lake)
    q = solve_background(handle, nu)
    vf = vf_from(cfg)
    params = params_from(cfg)
    try:
        params.check_nonempty(lake, vf)
    except AdmissibilityError as exc:
        raise ConfigError(str(exc)) from exc
    seed = cfg.get("seed")
    solver = cfg.get("solver", {})
    state = solve_vortex(
        lake, q, params, vf,
        init=tuple(seed) if seed is not None else None,
        handle=handle,
        fp_tol_rel=float(solver.get("fp_tol_rel", 1e-8)),
        max_iters=int(solver.get("max_iters", 500)),
    )
    chash = config_hash(cfg)
    diag = _diagnostics_for(lake, state, params, target=seed)
    k_zeta = state.psi_total - q + state.mu
    diag.sup_K = float(k_zeta.max())
    write_json(out / "state.json", state_to_dict(lake, state), chash)
    write_csv(out / "diag.csv", [diag], chash)
    print(f"solve: converged={state.converged} iterations={state.iterations} "
          f"mu={state.mu:.6g} E={state.energy.total:.8g}")
    return 0 if state.converged else 1


def cmd_sweep(cfg: dict, out: Path, jobs: int) -> int:
    lake = build_lake_from(cfg)
    scfg = _require(cfg, "sweep")
    regime = _require(scfg, "schedule", "sweep")
    try:
        schedule = DeltaSchedule(regime)
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    eps_list = [float(e) for e in _require(scfg, "eps_list", "sweep")]
    if len(eps_list) == 0 or any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ConfigError("sweep: eps_list must be non-empty and strictly decreasing")
    kappa0 = _positive(scfg.get("kappa0", 1.0), "sweep.kappa0")
    lam = _positive(scfg.get("lam", 50.0), "sweep.lam")
    vf = vf_from(cfg)
    nu = flux_from(cfg, lake)
    handle = assemble_operator(lake)
    seed = cfg.get("seed")
    report = run_sweep(
        lake, nu, schedule, kappa0, lam, eps_list, vf, handle=handle,
        seed=tuple(seed) if seed is not None else None,
        target_radius=float(cfg.get("target_radius", 0.2)),
        jobs=jobs,
    )
    chash = config_hash(cfg)
    write_csv(out / "sweep.csv", report.rows, chash)
    summary = {
        "regime": report.regime,
        "target": report.target,
        "target_ties": report.target_ties,
        "diam_slope": report.diam_slope,
        "checks": report.checks,
    }
    write_json(out / "summary.json", summary, chash)
    failed = [r for r in report.rows if not r.converged]
    print(f"sweep: {len(report.rows)} points, {len(failed)} failed, "
          f"diam_slope={report.diam_slope}")
    return 0 if not failed else 1


def tiny_oracle_fixtures():
    """The bundled tiny-lake fixtures: (name, lake, q, params, m)."""
    h = 0.5
    out = []
    lake1 = rect_lake(1, 1, h, preset_id="tiny1")
    out.append(("tiny1", lake1, np.zeros(1),
                AdmissibleParams(eps=0.5, delta=0.5, kappa0=1.0, lam=8.0), 8))
    lake2 = rect_lake(2, 1, h, preset_id="tiny2")
    out.append(("tiny2", lake2, np.zeros(2),
                AdmissibleParams(eps=0.5, delta=0.5, kappa0=1.0, lam=8.0), 8))
    lake4 = rect_lake(2, 2, h, preset_id="tiny4")
    q4 = 0.1 * lake4.centers[:, 0]
    out.append(("tiny4", lake4, q4,
                AdmissibleParams(eps=0.5, delta=0.5, kappa0=1.0, lam=8.0), 8))
    return out


def cmd_oracle_test(cfg: dict, out: Path, jobs: int) -> int:
    vf = vf_from(cfg)
    results = []
    ok = True
    for name, lake, q, params, m in tiny_oracle_fixtures():
        handle = assemble_operator(lake)
        z_star, e_star = brute_force_oracle(lake, q, params, vf, m, handle=handle)
        gap = oracle_gap_bound(lake, q, params, vf, m, handle=handle)
        state = solve_vortex(lake, q, params, vf, init=lake.centers[0], handle=handle)
        passed = state.energy.total >= e_star - gap
        ok = ok and passed and state.converged
        results.append({
            "fixture": name,
            "cells": lake.n_cells,
            "oracle_energy": e_star,
            "solver_energy": state.energy.total,
            "gap_bound": gap,
            "converged": state.converged,
            "passed": bool(passed),
        })
        print(f"oracle {name}: solver={state.energy.total:.8g} "
              f"oracle={e_star:.8g} gap={gap:.3g} passed={passed}")
    write_json(out / "oracle_report.json", {"fixtures": results, "all_passed": ok},
               config_hash(cfg))
    return 0 if ok else 1


def cmd_check_hypotheses(cfg: dict, out: Path, jobs: int) -> int:
    vf = vf_from(cfg)
    hcfg = cfg.get("hypotheses", {})
    s_max = _positive(hcfg.get("s_max", 10.0), "hypotheses.s_max")
    n = int(hcfg.get("n", 2000))
    if n < 100:
        raise ConfigError("hypotheses.n must be >= 100")
    report = verify_hypotheses(vf, s_max, n)
    payload = dataclasses.asdict(report)
    payload["preset"] = vf.preset
    write_json(out / "hypotheses.json", payload, config_hash(cfg))
    print(f"hypotheses: theta0={report.theta0_estimate:.6g} "
          f"theta1={report.theta1_estimate:.6g} "
          f"theta1_jump_adjusted={report.theta1_jump_adjusted:.6g} "
          f"monotone={report.h1_monotone}")
    if not report.h1_monotone:
        return 1
    return 0


def cmd_kernel_test(cfg: dict, out: Path, jobs: int) -> int:
    kcfg = cfg.get("kernel", {})
    resolution = int(kcfg.get("resolution", 128))
    n_pairs = int(kcfg.get("pairs", 1000))
    rng = np.random.default_rng(int(kcfg.get("rng_seed", 20240801)))
    lake = build_lake("disk_constant_b", resolution)

    # sample interior pairs away from coincidence
    pts = []
    while len(pts) < 2 * n_pairs:
        cand = rng.uniform(-1, 1, size=(4 * n_pairs, 2))
        cand = cand[np.hypot(cand[:, 0], cand[:, 1]) < 0.999]
        pts.extend(cand.tolist())
    pts = np.array(pts[: 2 * n_pairs])
    xs, ys = pts[:n_pairs], pts[n_pairs:]

    min_upper_slack = float("inf")
    min_lower_slack = float("inf")
    max_sym = 0.0
    for a, b in zip(xs, ys):
        if np.hypot(*(a - b)) < 1e-9:
            continue
        hval = h_kernel(lake, a, b)
        upper, lower = h_kernel_bounds(lake, a, b)
        min_upper_slack = min(min_upper_slack, upper - hval)
        min_lower_slack = min(min_lower_slack, hval - lower)
        max_sym = max(max_sym, abs(green_disk(a, b) - green_disk(b, a)))
    upper_ok = min_upper_slack >= -1e-12
    sym_ok = max_sym <= 1e-12

    # representation residual for the constant-depth disk (unit weighted mass)
    handle = assemble_operator(lake)
    zeta = disk_indicator_averaged(lake, (0.2, 0.1), 0.3)
    zeta = zeta / float(np.dot(zeta, lake.nu_weights))
    sample = np.linspace(0, lake.n_cells - 1, 200).astype(int)
    residual = float(np.abs(kernel_representation_residual(handle, zeta, sample)).max())
    repr_ok = residual <= 5.0 * lake.h

    payload = {
        "pairs": n_pairs,
        "upper_bound_min_slack": min_upper_slack,
        "upper_bound_ok": upper_ok,
        "lower_bound_min_slack_logged": min_lower_slack,  # recorded, not asserted
        "green_symmetry_max": max_sym,
        "green_symmetry_ok": sym_ok,
        "representation_residual": residual,
        "representation_tol": 5.0 * lake.h,
        "representation_ok": repr_ok,
    }
    write_json(out / "kernel_report.json", payload, config_hash(cfg))
    print(f"kernel: upper_ok={upper_ok} (slack {min_upper_slack:.3e}) "
          f"sym_ok={sym_ok} repr={residual:.3e} (tol {5 * lake.h:.3e}) "
          f"lower_slack_logged={min_lower_slack:.3e}")
    return 0 if (upper_ok and sym_ok and repr_ok) else 1


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "oracle-test": cmd_oracle_test,
    "check-hypotheses": cmd_check_hypotheses,
    "kernel-test": cmd_kernel_test,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lakevortex",
        description="Steady lake-vortex laboratory: solves, sweeps, validation",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON run config")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CompatibilityError, SolverError, AdmissibilityError, GeometryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
