"""Vanishing-rate schedules, concentration diagnostics, and sweep orchestration.

A sweep solves the constrained maximization along a decreasing eps list under
one of three circulation vanishing-rate regimes and records, per point, the
support geometry, vorticity center, multiplier, energies, and profile shape.
Regime checks operationalize the asymptotic statements as trends: the final
deviation must be below a stated tolerance and not larger than the first.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import OperatorHandle, assemble_operator, solve_background
from .geometry import Lake, max_pairwise_distance
from .nonlinearity import VorticityFunction
from .variational import AdmissibleParams, SolveState, solve_vortex

log = logging.getLogger(__name__)

REGIMES = ("above_critical", "critical", "below_critical")

DIAG_COLUMNS = (
    "eps", "delta", "diam_supp", "xc", "yc", "dist_boundary", "mu",
    "sup_K", "E_q", "F_eps", "E_total", "mass_frac", "radial_score",
)


class ScheduleError(ValueError):
    """Invalid vanishing-rate schedule or eps value."""


@dataclass(frozen=True)
class DeltaSchedule:
    """Vanishing rate delta(eps) for one of the three concentration regimes:
    above_critical = 1/sqrt(ln(1/eps)), critical = 1/ln(1/eps),
    below_critical = 1/ln(1/eps)^2."""

    regime: str

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ScheduleError(f"unknown regime {self.regime!r}")


def delta_of_eps(schedule: DeltaSchedule, eps: float) -> float:
    if not 0.0 < eps < 1.0 / math.e:
        raise ScheduleError(f"eps must lie in (0, 1/e), got {eps}")
    t = math.log(1.0 / eps)
    if schedule.regime == "above_critical":
        return 1.0 / math.sqrt(t)
    if schedule.regime == "critical":
        return 1.0 / t
    return 1.0 / (t * t)


def support_cells(lake: Lake, zeta: np.ndarray, rel_threshold: float = 1e-12) -> np.ndarray:
    zmax = zeta.max() if zeta.size else 0.0
    if zmax <= 0.0:
        return np.zeros(lake.n_cells, dtype=bool)
    return zeta > rel_threshold * zmax


def support_diameter(lake: Lake, zeta: np.ndarray, rel_threshold: float = 1e-12) -> float:
    """Max pairwise distance among active cell centers (0 if <= 1 cell)."""
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    return max_pairwise_distance(lake.centers[support_cells(lake, zeta, rel_threshold)])


def vorticity_center(lake: Lake, zeta: np.ndarray) -> np.ndarray:
    """Area-weighted first moment (plain area measure, not the depth-weighted one)."""
    w = zeta * lake.cell_area
    total = w.sum()
    if total <= 0.0:
        raise ValueError("vorticity center of a zero field is undefined")
    return np.array([np.dot(lake.centers[:, 0], w), np.dot(lake.centers[:, 1], w)]) / total


@dataclass(frozen=True)
class Profile:
    """Rescaled core profile xi(x) = (eps^2/delta) zeta(center + eps x) on a
    local grid, with radial bin averages."""

    grid: np.ndarray        # (res, res) rescaled samples
    half_width: float       # local grid spans [-half_width, half_width]^2 (rescaled units)
    bin_edges: np.ndarray
    bin_means: np.ndarray   # NaN for empty bins


def rescale_profile(lake: Lake, zeta: np.ndarray, params: AdmissibleParams,
                    center, res: int = 64, n_bins: int = 24,
                    span_factor: float = 3.0) -> Profile:
    """Sample the rescaled vorticity by bilinear interpolation around a center.

    Requires the support to be resolved by at least 4 cells across its
    diameter; the local grid spans span_factor times the support radius.
    """
    diam = support_diameter(lake, zeta)
    if diam < 4.0 * lake.h:
        raise ValueError(
            f"support under-resolved: diameter {diam:.4g} spans "
            f"{diam / lake.h:.1f} cells, need >= 4"
        )
    center = np.asarray(center, dtype=float)
    half_width = span_factor * (diam / 2.0) / params.eps
    coords = np.linspace(-half_width, half_width, res)
    XX, YY = np.meshgrid(coords, coords)
    px = center[0] + params.eps * XX
    py = center[1] + params.eps * YY

    grid_z = lake.field_to_grid(zeta, fill=0.0)
    fx = (px - lake.xs[0]) / lake.h
    fy = (py - lake.ys[0]) / lake.h
    i0 = np.clip(np.floor(fy).astype(int), 0, grid_z.shape[0] - 2)
    j0 = np.clip(np.floor(fx).astype(int), 0, grid_z.shape[1] - 2)
    ty = np.clip(fy - i0, 0.0, 1.0)
    tx = np.clip(fx - j0, 0.0, 1.0)
    vals = (
        grid_z[i0, j0] * (1 - tx) * (1 - ty)
        + grid_z[i0, j0 + 1] * tx * (1 - ty)
        + grid_z[i0 + 1, j0] * (1 - tx) * ty
        + grid_z[i0 + 1, j0 + 1] * tx * ty
    )
    xi = params.eps**2 / params.delta * vals

    rr = np.hypot(XX, YY).ravel()
    vv = xi.ravel()
    edges = np.linspace(0.0, half_width, n_bins + 1)
    means = np.full(n_bins, np.nan)
    idx = np.clip(np.searchsorted(edges, rr, side="right") - 1, 0, n_bins - 1)
    for k in range(n_bins):
        sel = idx == k
        if sel.any():
            means[k] = vv[sel].mean()
    return Profile(grid=xi, half_width=half_width, bin_edges=edges, bin_means=means)


def radial_monotonicity_score(profile: Profile) -> float:
    """1 - (positive increments)/(total variation) of the radial bin means;
    1 for exactly nonincreasing profiles, 0 for strictly increasing ones."""
    v = profile.bin_means[~np.isnan(profile.bin_means)]
    if v.size < 2:
        return 1.0
    d = np.diff(v)
    tv = float(np.abs(d).sum())
    if tv <= 0.0:
        return 1.0
    pos = float(d[d > 0].sum())
    return 1.0 - pos / tv


def predicted_target(lake: Lake, q: np.ndarray, kappa0: float, regime: str,
                     tie_tol: float = 1e-10):
    """Concentration target cell center(s) for a regime.

    above_critical: argmax of the depth; critical: argmax of the combined
    potential kappa0*b/(4 pi) + q; below_critical: argmax of the background.
    Returns (point, tie_points) where tie_points collects every cell within
    tie_tol of the maximum.
    """
    if regime == "above_critical":
        score = lake.b_int
    elif regime == "critical":
        score = kappa0 * lake.b_int / (4.0 * math.pi) + q
    elif regime == "below_critical":
        score = q
    else:
        raise ScheduleError(f"unknown regime {regime!r}")
    smax = score.max()
    ties = lake.centers[score >= smax - tie_tol]
    return ties[0].copy(), ties


def mass_fraction_near(lake: Lake, zeta: np.ndarray, point, radius: float) -> float:
    """Fraction of the weighted mass within a ball around a point."""
    w = zeta * lake.nu_weights
    total = w.sum()
    if total <= 0.0:
        return 0.0
    near = np.hypot(lake.centers[:, 0] - point[0], lake.centers[:, 1] - point[1]) <= radius
    return float(min(max(w[near].sum() / total, 0.0), 1.0))


@dataclass
class Diagnostics:
    """One sweep row; field order matches the CSV column contract."""

    eps: float
    delta: float
    diam_supp: float
    xc: float
    yc: float
    dist_boundary: float
    mu: float
    sup_K: float
    E_q: float
    F_eps: float
    E_total: float
    mass_frac: float
    radial_score: float
    converged: bool = True
    error: str = ""
    supp_target_dist: float = float("nan")  # max support distance to the target set

    def row(self) -> list:
        return [getattr(self, c) for c in DIAG_COLUMNS]


@dataclass
class SweepReport:
    regime: str
    rows: list
    target: np.ndarray
    target_ties: np.ndarray
    diam_slope: float | None
    checks: dict
    states: list = field(default_factory=list, repr=False)

    def ok(self) -> bool:
        return all(v for v in self.checks.values() if isinstance(v, bool))


def _fit_loglog_slope(eps: np.ndarray, diam: np.ndarray) -> float | None:
    good = diam > 0.0
    if good.sum() < 2:
        return None
    return float(np.polyfit(np.log(eps[good]), np.log(diam[good]), 1)[0])


def run_sweep(lake: Lake, flux: np.ndarray, schedule: DeltaSchedule,
              kappa0: float, lam: float, eps_list,
              vf: VorticityFunction,
              handle: OperatorHandle | None = None,
              seed=None,
              target_radius: float = 0.2,
              rel_threshold: float = 1e-12,
              eta_floor: float = 0.2,
              retain_states: bool = False,
              jobs: int = 1) -> SweepReport:
    """Solve along a decreasing eps list and evaluate the regime trend checks.

    Points are independent given the shared immutable lake and operator;
    results are merged in eps order regardless of execution order.
    """
    eps_arr = np.asarray(list(eps_list), dtype=float)
    if np.any(np.diff(eps_arr) >= 0):
        raise ScheduleError("eps list must be strictly decreasing")
    if handle is None:
        handle = assemble_operator(lake)
    q = solve_background(handle, np.asarray(flux, dtype=float))
    target, ties = predicted_target(lake, q, kappa0, schedule.regime)
    seed_pt = np.asarray(seed, dtype=float) if seed is not None else target

    def solve_point(eps: float) -> tuple[Diagnostics, SolveState | None]:
        delta = float("nan")
        try:
            delta = delta_of_eps(schedule, eps)
            params = AdmissibleParams(eps=eps, delta=delta, kappa0=kappa0, lam=lam)
            state = solve_vortex(lake, q, params, vf, init=seed_pt, handle=handle)
            sup = support_cells(lake, state.zeta, rel_threshold)
            xc = vorticity_center(lake, state.zeta)
            k_zeta = state.psi_total - q + state.mu
            try:
                prof = rescale_profile(lake, state.zeta, params, xc)
                score = radial_monotonicity_score(prof)
            except ValueError:
                score = float("nan")
            dist_b = float(lake.dist_to_boundary(lake.centers[sup]).min()) if sup.any() else float("nan")
            if sup.any():
                sp = lake.centers[sup]
                supp_dist = float(
                    np.hypot(ties[:, 0][None, :] - sp[:, 0][:, None],
                             ties[:, 1][None, :] - sp[:, 1][:, None]).min(axis=1).max()
                )
            else:
                supp_dist = float("nan")
            diag = Diagnostics(
                eps=eps,
                delta=delta,
                diam_supp=support_diameter(lake, state.zeta, rel_threshold),
                xc=float(xc[0]),
                yc=float(xc[1]),
                dist_boundary=dist_b,
                mu=float(state.mu),
                sup_K=float(k_zeta.max()),
                E_q=state.energy.e_q,
                F_eps=state.energy.f_eps,
                E_total=state.energy.total,
                mass_frac=mass_fraction_near(lake, state.zeta, _nearest_tie(ties, xc), target_radius),
                radial_score=score,
                converged=state.converged,
                supp_target_dist=supp_dist,
            )
            return diag, state
        except Exception as exc:  # keep sweeping past individual failures
            log.error("sweep point eps=%g failed: %s", eps, exc)
            nan = float("nan")
            return Diagnostics(eps=eps, delta=delta, diam_supp=nan, xc=nan, yc=nan,
                               dist_boundary=nan, mu=nan, sup_K=nan, E_q=nan,
                               F_eps=nan, E_total=nan, mass_frac=nan,
                               radial_score=nan, converged=False, error=str(exc)), None

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve_point, eps_arr))
    else:
        results = [solve_point(e) for e in eps_arr]

    rows = [r for r, _ in results]
    states = [s for _, s in results]
    checks = _regime_checks(lake, q, schedule.regime, kappa0, rows, ties,
                            target_radius, eta_floor)
    report = SweepReport(
        regime=schedule.regime,
        rows=rows,
        target=target,
        target_ties=ties,
        diam_slope=_fit_loglog_slope(eps_arr, np.array([r.diam_supp for r in rows])),
        checks=checks,
        states=states if retain_states else [],
    )
    report.checks["diam_slope"] = report.diam_slope
    if report.diam_slope is not None:
        report.checks["diam_slope_in_window"] = bool(0.8 <= report.diam_slope <= 1.2)
    return report


def _nearest_tie(ties: np.ndarray, point) -> np.ndarray:
    d = np.hypot(ties[:, 0] - point[0], ties[:, 1] - point[1])
    return ties[int(np.argmin(d))]


def _depth_max_is_interior(lake: Lake) -> bool:
    """True when the deepest cell does not touch the mask boundary."""
    r, c = lake.cells[int(np.argmax(lake.b_int))]
    ny, nx = lake.mask.shape
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        rr, cc = r + dr, c + dc
        if not (0 <= rr < ny and 0 <= cc < nx) or not lake.mask[rr, cc]:
            return False
    return True


def _trend(first_dev: float, last_dev: float, tol: float) -> bool:
    """Deviation ends below tolerance and did not grow, except when the sweep
    starts already deep inside the tolerance (within half), where direction
    is indistinguishable from noise."""
    return bool(last_dev <= tol and (last_dev <= first_dev + 1e-12 or last_dev <= 0.5 * tol))


def _regime_checks(lake: Lake, q: np.ndarray, regime: str, kappa0: float,
                   rows: list, ties: np.ndarray, target_radius: float,
                   eta_floor: float) -> dict:
    checks: dict = {"all_converged": all(r.converged for r in rows)}
    ok_rows = [r for r in rows if r.converged]
    if len(ok_rows) < 2:
        checks["enough_points"] = False
        return checks
    checks["enough_points"] = True
    first, last = ok_rows[0], ok_rows[-1]

    dists = np.array([np.hypot(*(_nearest_tie(ties, (r.xc, r.yc)) - (r.xc, r.yc))) for r in ok_rows])
    checks["dist_to_target_final"] = float(dists[-1])
    # nonincreasing up to one grid cell of slack
    checks["dist_to_target_nonincreasing"] = bool(np.all(np.diff(dists) <= lake.h))
    checks["mass_frac_final"] = last.mass_frac
    checks["mass_frac_trend"] = bool(
        last.mass_frac >= first.mass_frac - 1e-9 and last.mass_frac >= 0.95
    )
    checks["dist_boundary_positive"] = bool(all(r.dist_boundary > 0 for r in ok_rows))

    if regime == "above_critical":
        # multiplier against the leading depth-term growth
        lead = np.array([kappa0 * lake.b_int.max() / (2 * math.pi) * r.delta
                         * math.log(1 / r.eps) for r in ok_rows])
        ratios = np.array([r.mu for r in ok_rows]) / lead
        checks["mu_ratio_first"] = float(ratios[0])
        checks["mu_ratio_final"] = float(ratios[-1])
        checks["mu_ratio_trend"] = _trend(abs(ratios[0] - 1.0), abs(ratios[-1] - 1.0), 0.5)
        checks["depth_max_interior"] = _depth_max_is_interior(lake)
        if checks["depth_max_interior"]:
            eta = float(min(r.dist_boundary for r in ok_rows))
            checks["eta_estimate"] = eta
            checks["interior_distance_floor"] = bool(eta >= eta_floor)
        else:
            # boundary depth maximum: the support approaches the shore; record
            # the fitted decay exponent of dist vs ln(1/eps) without asserting
            dist_b = np.array([r.dist_boundary for r in ok_rows])
            logs = np.array([math.log(math.log(1 / r.eps)) for r in ok_rows])
            good = dist_b > 0
            if good.sum() >= 2:
                checks["boundary_decay_exponent"] = float(
                    -np.polyfit(logs[good], np.log(dist_b[good]), 1)[0]
                )
    elif regime == "critical":
        fracs = np.array([r.mass_frac for r in ok_rows])
        checks["mass_frac_nondecreasing"] = bool(np.all(np.diff(fracs) >= -1e-9))
        x_hat = ties[0]
        cell = np.argmin(np.hypot(lake.centers[:, 0] - x_hat[0], lake.centers[:, 1] - x_hat[1]))
        mu_target = kappa0 * lake.b_int[cell] / (2 * math.pi) + q[cell]
        supk_target = kappa0 * lake.b_int[cell] / (2 * math.pi)
        checks["mu_target"] = float(mu_target)
        checks["mu_final_dev"] = abs(last.mu - mu_target)
        checks["mu_trend"] = _trend(abs(first.mu - mu_target), abs(last.mu - mu_target),
                                    0.25 * abs(mu_target))
        checks["sup_K_target"] = float(supk_target)
        checks["sup_K_final_dev"] = abs(last.sup_K - supk_target)
        checks["sup_K_trend"] = _trend(abs(first.sup_K - supk_target),
                                       abs(last.sup_K - supk_target),
                                       0.25 * abs(supk_target))
    else:  # below_critical
        qmax = float(q.max())
        checks["q_max"] = qmax
        checks["mu_final_dev"] = abs(last.mu - qmax)
        checks["mu_trend"] = _trend(abs(first.mu - qmax), abs(last.mu - qmax), 0.10 * abs(qmax))
        checks["sup_K_final"] = last.sup_K
        checks["sup_K_small"] = bool(last.sup_K <= 0.1 * abs(qmax))
        checks["supp_target_dist_final"] = last.supp_target_dist
        checks["support_in_target_nbhd"] = bool(last.supp_target_dist <= target_radius)
        # peak stream bounded by the leading log growth plus a stable constant
        bmax = float(lake.b_int.max())
        coeffs = [
            (r.sup_K - bmax / (2 * math.pi) * kappa0 * r.delta * math.log(1 / r.eps))
            / r.delta
            for r in ok_rows
        ]
        checks["supK_bound_coeff_max"] = float(max(coeffs))
        checks["supK_growth_bounded"] = bool(max(coeffs) <= 0.5)
    return checks
