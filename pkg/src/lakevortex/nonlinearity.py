"""Vorticity-function families: f, its inverse, the conjugate primitive, and
numerical certificates for the monotonicity and growth hypotheses.

Every family satisfies f(s) = 0 for s <= 0 and is strictly increasing on
[0, inf); f may jump at 0+ (the jump_linear preset exercises f(0+) > 0).
The inverse is extended by 0 at and below f(0+), and the conjugate primitive
is F_*(t) = integral of the inverse from 0 to t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VorticityFunction:
    """A nonlinearity preset: 'power' (max(s,0)^p), 'jump_linear' ((c+s) for
    s>0, else 0), or 'table' (monotone piecewise-linear interpolation)."""

    preset: str
    p: float = 2.0
    c: float = 0.0
    points: tuple = ()
    _table: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.preset == "power":
            if self.p <= 1.0:
                raise ValueError("power preset needs exponent p > 1")
        elif self.preset == "jump_linear":
            if self.c < 0.0:
                raise ValueError("jump_linear preset needs jump c >= 0")
        elif self.preset == "table":
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
                raise ValueError("table preset needs >= 2 (s, f) pairs")
            if np.any(np.diff(pts[:, 0]) <= 0) or pts[0, 0] < 0:
                raise ValueError("table abscissae must be increasing and >= 0")
            s, v = pts[:, 0], pts[:, 1]
            if s[0] > 0.0:
                s = np.concatenate([[0.0], s])
                v = np.concatenate([[v[0]], v])
            # extrapolation slope beyond the last knot keeps f increasing
            slope = (v[-1] - v[-2]) / (s[-1] - s[-2])
            self._table.update(s=s, v=v, slope=max(slope, 1e-12))
        else:
            raise ValueError(f"unknown nonlinearity preset {self.preset!r}")

    @property
    def f_at_zero_plus(self) -> float:
        if self.preset == "power":
            return 0.0
        if self.preset == "jump_linear":
            return self.c
        return float(self._table["v"][0])

    def f(self, s):
        s = np.asarray(s, dtype=float)
        if self.preset == "power":
            out = np.where(s > 0.0, np.maximum(s, 0.0) ** self.p, 0.0)
        elif self.preset == "jump_linear":
            out = np.where(s > 0.0, self.c + s, 0.0)
        else:
            t = self._table
            out = np.interp(s, t["s"], t["v"])
            over = s > t["s"][-1]
            if np.any(over):
                out = np.where(over, t["v"][-1] + t["slope"] * (s - t["s"][-1]), out)
            out = np.where(s > 0.0, out, 0.0)
        return out if out.ndim else float(out)

    def f_inv(self, t):
        """Inverse of f on (f(0+), inf), identically 0 at and below f(0+)."""
        t = np.asarray(t, dtype=float)
        f0 = self.f_at_zero_plus
        if self.preset == "power":
            out = np.where(t > 0.0, np.maximum(t, 0.0) ** (1.0 / self.p), 0.0)
        elif self.preset == "jump_linear":
            out = np.where(t > f0, t - f0, 0.0)
        else:
            tab = self._table
            out = np.interp(t, tab["v"], tab["s"])
            over = t > tab["v"][-1]
            if np.any(over):
                out = np.where(over, tab["s"][-1] + (t - tab["v"][-1]) / tab["slope"], out)
            out = np.where(t > f0, out, 0.0)
        return out if out.ndim else float(out)

    def F_star(self, t):
        """Conjugate primitive: integral of f_inv from 0 to t (0 for t <= f(0+))."""
        t = np.asarray(t, dtype=float)
        f0 = self.f_at_zero_plus
        if self.preset == "power":
            q = (self.p + 1.0) / self.p
            out = np.where(t > 0.0, (np.maximum(t, 0.0) ** q) / q, 0.0)
        elif self.preset == "jump_linear":
            out = np.where(t > f0, 0.5 * (t - f0) ** 2, 0.0)
        else:
            tab = self._table
            knots_t = tab["v"]
            knots_s = tab["s"]
            # exact piecewise-quadratic cumulative integral of the pw-linear inverse
            seg = 0.5 * (knots_s[1:] + knots_s[:-1]) * np.diff(knots_t)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            out = np.interp(t, knots_t, cum)
            inside = (t > knots_t[0]) & (t <= knots_t[-1])
            if np.any(inside):
                j = np.clip(np.searchsorted(knots_t, t) - 1, 0, len(knots_t) - 2)
                dt = t - knots_t[j]
                dv = knots_t[j + 1] - knots_t[j]
                with np.errstate(divide="ignore", invalid="ignore"):
                    frac = np.where(dv > 0, dt / dv, 0.0)
                s_at = knots_s[j] + frac * (knots_s[j + 1] - knots_s[j])
                exact = cum[j] + 0.5 * (knots_s[j] + s_at) * dt
                out = np.where(inside, exact, out)
            over = t > knots_t[-1]
            if np.any(over):
                dt = t - knots_t[-1]
                s_at = knots_s[-1] + dt / tab["slope"]
                out = np.where(over, cum[-1] + 0.5 * (knots_s[-1] + s_at) * dt, out)
            out = np.where(t > f0, out, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class HypothesisReport:
    """Sampled certificates for the structural hypotheses on f.

    theta0_estimate: supremum of int_0^s (f - f(0+)) / ((f(s) - f(0+)) s).
    theta1_estimate: infimum of F_*(t) / (t f_inv(t)), the conjugate ratio in
    its plain form.  For families with a jump at 0+ the plain ratio
    degenerates to 0 as t approaches f(0+), so the jump-aware variant
    F_*(t) / ((t - f(0+)) f_inv(t)) is recorded alongside; it is the exact
    Legendre dual of the theta0 bound and stays in (0, 1) for jump families.
    """

    theta0_estimate: float
    theta1_estimate: float
    theta1_jump_adjusted: float
    h1_monotone: bool
    s_max: float
    n_samples: int


def eval_f(vf: VorticityFunction, s: float) -> float:
    return float(vf.f(s))


def eval_conjugate(vf: VorticityFunction, t: float) -> tuple[float, float]:
    """Return (f_inv(t), F_*(t))."""
    return float(vf.f_inv(t)), float(vf.F_star(t))


def verify_hypotheses(vf: VorticityFunction, s_max: float, n: int) -> HypothesisReport:
    """Numerically certify monotonicity and the two growth-ratio constants.

    Samples a log-spaced grid (0, s_max], integrates f - f(0+) cumulatively
    by the trapezoid rule, and reports the extremal ratios observed.
    """
    if s_max <= 0.0:
        raise ValueError("s_max must be positive")
    if n < 100:
        raise ValueError("need at least 100 sample points")
    s = np.concatenate([[0.0], np.logspace(np.log10(s_max) - 8, np.log10(s_max), n)])
    fs = vf.f(s)
    if not np.all(np.isfinite(fs)):
        raise ValueError("nonlinearity produced non-finite values on the grid")
    f0 = vf.f_at_zero_plus
    monotone = bool(np.all(np.diff(fs[1:]) > 0))

    integrand = fs - f0
    integrand[0] = 0.0  # f(0) = 0 contributes nothing below the jump
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s))])
    denom = (fs - f0) * s
    # the ratio is certified only where the quadrature below the sample point
    # dominates the unresolved first segment [0, s_1] by a fixed factor
    valid = denom > 0.0
    valid &= s >= 16.0 * s[1]
    theta0 = float(np.max(cum[valid] / denom[valid])) if valid.any() else float("nan")

    t = np.logspace(np.log10(max(f0, 1e-12)) if f0 > 0 else np.log10(vf.f(s_max)) - 8,
                    np.log10(vf.f(s_max)), n)
    finv = vf.f_inv(t)
    fstar = vf.F_star(t)
    denom_plain = t * finv
    denom_adj = (t - f0) * finv
    valid_p = denom_plain > 0.0
    valid_a = denom_adj > 0.0
    theta1 = float(np.min(fstar[valid_p] / denom_plain[valid_p])) if valid_p.any() else float("nan")
    theta1_adj = float(np.min(fstar[valid_a] / denom_adj[valid_a])) if valid_a.any() else float("nan")

    return HypothesisReport(
        theta0_estimate=theta0,
        theta1_estimate=theta1,
        theta1_jump_adjusted=theta1_adj,
        h1_monotone=monotone,
        s_max=s_max,
        n_samples=n,
    )
