"""Discretized lake geometry: domains, depth presets, boundary traces, disk kernels.

A lake is a uniform Cartesian cell grid with an interior mask (cell centers
strictly inside the domain) and a per-cell depth field b.  The weighted
measure used throughout the package is nu = b * dm, realized discretely as
b * h^2 per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

TWO_PI = 2.0 * math.pi

PRESETS = (
    "disk_interior_max_b",
    "disk_boundary_max_b",
    "disk_constant_b",
    "disk_degenerate_b",
    "rect_constant_b",
)


class GeometryError(ValueError):
    """Invalid geometric construction or query."""


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class DiskDomain:
    """Open disk; boundary parametrized by arclength counterclockwise from angle 0."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    kind = "disk"

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        d = p - np.asarray(self.center)
        return np.hypot(d[..., 0], d[..., 1]) < self.radius

    def dist_to_boundary(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        d = p - np.asarray(self.center)
        return self.radius - np.hypot(d[..., 0], d[..., 1])

    def perimeter(self) -> float:
        return TWO_PI * self.radius

    def boundary_param(self, p) -> float:
        """Arclength coordinate in [0, perimeter) of the projection of p."""
        dx = p[0] - self.center[0]
        dy = p[1] - self.center[1]
        theta = math.atan2(dy, dx) % TWO_PI
        return theta * self.radius

    def project_to_boundary(self, p) -> tuple[float, float]:
        dx = p[0] - self.center[0]
        dy = p[1] - self.center[1]
        r = math.hypot(dx, dy)
        if r == 0.0:
            return (self.center[0] + self.radius, self.center[1])
        s = self.radius / r
        return (self.center[0] + dx * s, self.center[1] + dy * s)

    def outward_normal(self, p_on_boundary) -> tuple[float, float]:
        dx = p_on_boundary[0] - self.center[0]
        dy = p_on_boundary[1] - self.center[1]
        r = math.hypot(dx, dy)
        return (dx / r, dy / r)

    def cut_fraction(self, p_inside, p_outside) -> float:
        """Fraction t in (0, 1] where segment p_inside -> p_outside crosses the circle."""
        c = np.asarray(self.center)
        p = np.asarray(p_inside, dtype=float) - c
        d = np.asarray(p_outside, dtype=float) - c - p
        a = float(d @ d)
        b = 2.0 * float(p @ d)
        cc = float(p @ p) - self.radius**2
        disc = b * b - 4.0 * a * cc
        if disc < 0.0:  # grazing; numerically on the circle
            disc = 0.0
        t = (-b + math.sqrt(disc)) / (2.0 * a)
        return min(max(t, 0.0), 1.0)


@dataclass(frozen=True)
class RectDomain:
    """Open axis-aligned rectangle (x0, x1) x (y0, y1)."""

    x0: float
    x1: float
    y0: float
    y1: float

    kind = "rect"

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (
            (p[..., 0] > self.x0)
            & (p[..., 0] < self.x1)
            & (p[..., 1] > self.y0)
            & (p[..., 1] < self.y1)
        )

    def dist_to_boundary(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.minimum.reduce(
            [
                p[..., 0] - self.x0,
                self.x1 - p[..., 0],
                p[..., 1] - self.y0,
                self.y1 - p[..., 1],
            ]
        )

    def perimeter(self) -> float:
        return 2.0 * ((self.x1 - self.x0) + (self.y1 - self.y0))

    def boundary_param(self, p) -> float:
        """Arclength ccw from the midpoint of the right side, of p's projection."""
        px, py = self.project_to_boundary(p)
        w = self.x1 - self.x0
        hgt = self.y1 - self.y0
        yc = 0.5 * (self.y0 + self.y1)
        # segments: right side up, top leftward, left side down, bottom rightward
        eps = 1e-12
        if abs(px - self.x1) < eps and py >= yc:
            s = py - yc
        elif abs(py - self.y1) < eps:
            s = (self.y1 - yc) + (self.x1 - px)
        elif abs(px - self.x0) < eps:
            s = (self.y1 - yc) + w + (self.y1 - py)
        elif abs(py - self.y0) < eps:
            s = (self.y1 - yc) + w + hgt + (px - self.x0)
        else:  # right side below midpoint
            s = (self.y1 - yc) + 2 * w + hgt + (py - self.y0)
        return s % self.perimeter()

    def project_to_boundary(self, p) -> tuple[float, float]:
        px = min(max(p[0], self.x0), self.x1)
        py = min(max(p[1], self.y0), self.y1)
        if self.x0 < px < self.x1 and self.y0 < py < self.y1:
            # interior point: push to the nearest side
            cands = [
                (px - self.x0, (self.x0, py)),
                (self.x1 - px, (self.x1, py)),
                (py - self.y0, (px, self.y0)),
                (self.y1 - py, (px, self.y1)),
            ]
            return min(cands)[1]
        return (px, py)

    def outward_normal(self, p_on_boundary) -> tuple[float, float]:
        px, py = p_on_boundary
        nx = (-1.0 if abs(px - self.x0) < 1e-12 else 0.0) + (
            1.0 if abs(px - self.x1) < 1e-12 else 0.0
        )
        ny = (-1.0 if abs(py - self.y0) < 1e-12 else 0.0) + (
            1.0 if abs(py - self.y1) < 1e-12 else 0.0
        )
        n = math.hypot(nx, ny)
        return (nx / n, ny / n) if n > 0 else (1.0, 0.0)

    def cut_fraction(self, p_inside, p_outside) -> float:
        ts = []
        dx = p_outside[0] - p_inside[0]
        dy = p_outside[1] - p_inside[1]
        if dx > 0:
            ts.append((self.x1 - p_inside[0]) / dx)
        elif dx < 0:
            ts.append((self.x0 - p_inside[0]) / dx)
        if dy > 0:
            ts.append((self.y1 - p_inside[1]) / dy)
        elif dy < 0:
            ts.append((self.y0 - p_inside[1]) / dy)
        t = min(t for t in ts if t > 0)
        return min(max(t, 0.0), 1.0)


# ---------------------------------------------------------------------------
# boundary trace


@dataclass(frozen=True)
class BoundaryTrace:
    """Ordered ghost-cell trace along the domain boundary.

    Cells are the masked-out grid cells 4-adjacent to interior cells, ordered
    counterclockwise by the arclength coordinate of their boundary projection,
    starting from the cell nearest parameter 0.  Weights approximate the true
    boundary arclength measure (half-distance to each neighbor along the
    boundary), so that sum(weights) equals the domain perimeter exactly.
    """

    ij: np.ndarray          # (m, 2) row, col indices into the grid
    centers: np.ndarray     # (m, 2) cell-center coordinates
    projections: np.ndarray  # (m, 2) projections onto the true boundary
    params: np.ndarray      # (m,) arclength coordinates, increasing
    normals: np.ndarray     # (m, 2) outward normals at the projections
    weights: np.ndarray     # (m,) arclength weights
    perimeter: float

    def __len__(self) -> int:
        return self.ij.shape[0]

    def interp_values(self, params_query: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Periodic linear interpolation of per-cell boundary values."""
        s = np.asarray(params_query, dtype=float) % self.perimeter
        sp = np.concatenate([self.params, [self.params[0] + self.perimeter]])
        vp = np.concatenate([values, [values[0]]])
        # shift queries below the first knot into the wrap-around segment
        s = np.where(s < sp[0], s + self.perimeter, s)
        return np.interp(s, sp, vp)


# ---------------------------------------------------------------------------
# lake


@dataclass
class Lake:
    """Immutable discretized lake: grid, interior mask, depth, boundary metadata.

    Attributes
    ----------
    h : grid spacing; cell_area = h^2
    mask : (ny, nx) bool, True on interior cells
    b : (ny, nx) depth sampled at cell centers (clamped >= 0 outside)
    index : (ny, nx) int, interior cell number or -1
    cells : (n, 2) (row, col) of interior cells
    centers : (n, 2) coordinates of interior cell centers
    b_int : (n,) depth on interior cells
    diameter : max pairwise distance between interior cell centers
    """

    preset_id: str
    domain: object
    h: float
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray
    b: np.ndarray
    index: np.ndarray
    cells: np.ndarray
    centers: np.ndarray
    b_int: np.ndarray
    diameter: float
    boundary: BoundaryTrace
    meta: dict = field(default_factory=dict)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def nu_weights(self) -> np.ndarray:
        """Per-cell weighted measure b * h^2."""
        return self.b_int * self.cell_area

    @property
    def measure_nu(self) -> float:
        return float(self.nu_weights.sum())

    def field_to_grid(self, u: np.ndarray, fill: float = 0.0) -> np.ndarray:
        g = np.full(self.mask.shape, fill, dtype=float)
        g[self.mask] = u
        return g

    def dist_to_boundary(self, points) -> np.ndarray:
        return self.domain.dist_to_boundary(points)


def _depth_formula(preset: str, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    r2 = X * X + Y * Y
    if preset == "disk_interior_max_b":
        return np.maximum(1.0 - r2 / 2.0, 0.0)
    if preset == "disk_boundary_max_b":
        return np.maximum(1.0 + X, 0.0)
    if preset == "disk_constant_b":
        return np.ones_like(X)
    if preset == "disk_degenerate_b":
        return np.sqrt(np.maximum(1.0 - r2, 0.0))
    if preset == "rect_constant_b":
        return np.ones_like(X)
    raise GeometryError(f"unknown preset {preset!r}")


def _domain_for(preset: str):
    if preset.startswith("disk"):
        return DiskDomain()
    return RectDomain(-0.8, 0.8, -0.5, 0.5)


def _connected(mask: np.ndarray) -> bool:
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    _, count = ndimage.label(mask, structure=structure)
    return count == 1


def max_pairwise_distance(points: np.ndarray) -> float:
    """Diameter of a finite point set; hull-accelerated, robust to collinearity."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] <= 1:
        return 0.0
    hull_pts = points
    if points.shape[0] > 16:
        try:
            hull_pts = points[ConvexHull(points).vertices]
        except Exception:
            # degenerate (collinear) input; exact via principal-axis extremes
            centered = points - points.mean(axis=0)
            axis = np.linalg.svd(centered, full_matrices=False)[2][0]
            proj = centered @ axis
            hull_pts = points[[int(np.argmin(proj)), int(np.argmax(proj))]]
    d2 = np.sum((hull_pts[:, None, :] - hull_pts[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(d2.max()))


def _build_trace(domain, mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> BoundaryTrace:
    padded = np.pad(mask, 1, constant_values=False)
    neighbor_of_interior = (
        padded[2:, 1:-1] | padded[:-2, 1:-1] | padded[1:-1, 2:] | padded[1:-1, :-2]
    )
    ghost = neighbor_of_interior & ~mask
    rows, cols = np.nonzero(ghost)
    centers = np.column_stack([xs[cols], ys[rows]])
    params = np.array([domain.boundary_param(p) for p in centers])
    order = np.argsort(params, kind="stable")
    perim = domain.perimeter()
    # start from the cell whose parameter is nearest 0 (mod perimeter)
    p_sorted = params[order]
    start = int(np.argmin(np.minimum(p_sorted, perim - p_sorted)))
    order = np.roll(order, -start)

    rows, cols, centers = rows[order], cols[order], centers[order]
    params = params[order]
    projections = np.array([domain.project_to_boundary(p) for p in centers])
    normals = np.array([domain.outward_normal(p) for p in projections])
    gaps = np.diff(params, append=params[0] + perim) % perim
    gaps_prev = np.roll(gaps, 1)
    weights = 0.5 * (gaps + gaps_prev)
    return BoundaryTrace(
        ij=np.column_stack([rows, cols]),
        centers=centers,
        projections=projections,
        params=params,
        normals=normals,
        weights=weights,
        perimeter=perim,
    )


def _assemble_lake(preset: str, domain, xs: np.ndarray, ys: np.ndarray, h: float,
                   b_grid: np.ndarray | None = None) -> Lake:
    X, Y = np.meshgrid(xs, ys)
    mask = domain.contains(np.stack([X, Y], axis=-1))
    if not mask.any():
        raise GeometryError("resolution too small: no interior cell")
    if not _connected(mask):
        raise GeometryError("interior mask is not connected")
    if b_grid is None:
        b_grid = _depth_formula(preset, X, Y)
    rows, cols = np.nonzero(mask)
    index = -np.ones(mask.shape, dtype=np.int64)
    index[rows, cols] = np.arange(rows.size)
    centers = np.column_stack([xs[cols], ys[rows]])
    b_int = b_grid[rows, cols]
    if np.any(b_int <= 0.0):
        raise GeometryError("depth must be positive on interior cells")
    lake = Lake(
        preset_id=preset,
        domain=domain,
        h=h,
        xs=xs,
        ys=ys,
        mask=mask,
        b=b_grid,
        index=index,
        cells=np.column_stack([rows, cols]),
        centers=centers,
        b_int=b_int,
        diameter=max_pairwise_distance(centers),
        boundary=_build_trace(domain, mask, xs, ys),
    )
    if lake.measure_nu <= 0.0:
        raise GeometryError("weighted measure of the lake is not positive")
    return lake


def build_lake(preset: str, resolution: int) -> Lake:
    """Build a discretized lake for a named geometry/depth preset.

    resolution is the cell count per side of the bounding box; the grid
    spacing is side/resolution.  Requires resolution >= 16.
    """
    if preset not in PRESETS:
        raise GeometryError(
            f"unknown preset {preset!r}; available: {', '.join(PRESETS)}"
        )
    if resolution < 16:
        raise GeometryError(f"resolution must be >= 16, got {resolution}")
    domain = _domain_for(preset)
    h = 2.0 / resolution  # domain box [-1, 1]^2 for every preset
    # pad the grid two cells beyond the domain box so the ghost ring is on-grid
    xs = -1.0 + h * (np.arange(-2, resolution + 2) + 0.5)
    ys = xs.copy()
    return _assemble_lake(preset, domain, xs, ys, h)


def rect_lake(nx: int, ny: int, h: float, depth=1.0, preset_id: str = "rect_custom") -> Lake:
    """Small rectangular lake with explicit cell counts, used for fixtures.

    Unlike build_lake this places exactly nx x ny interior cells and allows an
    arbitrary positive depth (constant, callable b(x, y), or (ny, nx) array).
    """
    if nx < 1 or ny < 1:
        raise GeometryError("need at least one cell in each direction")
    domain = RectDomain(0.0, nx * h, 0.0, ny * h)
    xs = h * (np.arange(-1, nx + 1) + 0.5)
    ys = h * (np.arange(-1, ny + 1) + 0.5)
    X, Y = np.meshgrid(xs, ys)
    if callable(depth):
        b_grid = np.asarray(depth(X, Y), dtype=float)
    elif np.isscalar(depth):
        b_grid = np.full(X.shape, float(depth))
    else:
        depth = np.asarray(depth, dtype=float)
        if depth.shape != (ny, nx):
            raise GeometryError(f"depth array must have shape {(ny, nx)}")
        b_grid = np.zeros(X.shape)
        b_grid[1:-1, 1:-1] = depth
    b_grid = np.maximum(b_grid, 0.0)
    return _assemble_lake(preset_id, domain, xs, ys, h, b_grid=b_grid)


# ---------------------------------------------------------------------------
# disk kernels


def green_disk(x, y) -> float:
    """Dirichlet Green function of -Laplace on the unit disk (method of images).

    G(x, y) = (1/2pi) ln(|x - y*| |y| / |x - y|) with y* = y/|y|^2, and
    G(x, 0) = (1/2pi) ln(1/|x|).  Both points must lie strictly inside.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = float(np.hypot(*x))
    ry = float(np.hypot(*y))
    if rx >= 1.0 or ry >= 1.0:
        raise GeometryError("both points must lie strictly inside the unit disk")
    d = float(np.hypot(*(x - y)))
    if d < 1e-14:
        raise GeometryError("Green function is singular at coincident points")
    if ry < 1e-14:
        return math.log(1.0 / rx) / TWO_PI
    y_star = y / (ry * ry)
    num = float(np.hypot(*(x - y_star))) * ry
    return math.log(num / d) / TWO_PI


def green_disk_grid(x, points: np.ndarray) -> np.ndarray:
    """Vectorized green_disk(x, p) over rows p of points (x not in points)."""
    x = np.asarray(x, dtype=float)
    pts = np.asarray(points, dtype=float)
    d = np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1])
    ry = np.hypot(pts[:, 0], pts[:, 1])
    # rho^2 = |x - y|^2 + (1 - |x|^2)(1 - |y|^2) avoids the y -> 0 special case
    rho = np.sqrt(d * d + (1.0 - x @ x) * (1.0 - ry * ry))
    with np.errstate(divide="ignore"):
        g = np.log(rho / d) / TWO_PI
    return g


def h_kernel(lake: Lake, x, y) -> float:
    """Regular part of the inverse-operator kernel relative to the log kernel:
    H(x, y) = (1/2pi) ln(diam(D)/|x - y|) - G(x, y).  Disk lakes only."""
    if getattr(lake.domain, "kind", None) != "disk":
        raise GeometryError("analytic kernel is only available for disk lakes")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = float(np.hypot(*(x - y)))
    if d < 1e-14:
        raise GeometryError("kernel evaluation needs distinct points")
    return math.log(lake.diameter / d) / TWO_PI - green_disk(x, y)


def h_kernel_bounds(lake: Lake, x, y) -> tuple[float, float]:
    """Reference (upper, lower) envelopes for the regular kernel part H.

    The upper bound is asserted by the validation suite; the lower variant is
    recorded for diagnostics only, since its printed form mixes |x + y| with
    boundary distances and is not used as an invariant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = float(np.hypot(*(x - y)))
    dist_x = float(lake.domain.dist_to_boundary(x))
    dist_y = float(lake.domain.dist_to_boundary(y))
    upper = math.log(lake.diameter / max(d, dist_x, dist_y)) / TWO_PI
    denom = float(np.hypot(*(x + y))) + 2.0 * max(dist_x, dist_y)
    lower = math.log(lake.diameter / denom) / TWO_PI
    return upper, lower


# ---------------------------------------------------------------------------
# misc utilities


def disk_box_overlap(radius: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Area of the intersection of B_radius(0) with [x0,x1] x [y0,y1]."""

    def corner(w: float, hgt: float) -> float:
        # area of B_radius(0) cap [0, w] x [0, hgt] for w, hgt >= 0
        w = min(w, radius)
        hgt = min(hgt, radius)
        if w <= 0.0 or hgt <= 0.0:
            return 0.0

        def antider(t: float) -> float:
            t = min(max(t, -radius), radius)
            return 0.5 * (t * math.sqrt(max(radius * radius - t * t, 0.0))
                          + radius * radius * math.asin(t / radius))

        # integrate min(hgt, sqrt(R^2 - x^2)) over x in [0, w]
        x_cross = math.sqrt(max(radius * radius - hgt * hgt, 0.0))
        if w <= x_cross:
            return w * hgt
        return x_cross * hgt + (antider(w) - antider(x_cross))

    def signed(x: float, y: float) -> float:
        return math.copysign(1.0, x) * math.copysign(1.0, y) * corner(abs(x), abs(y))

    return signed(x1, y1) - signed(x0, y1) - signed(x1, y0) + signed(x0, y0)


def disk_indicator_averaged(lake: Lake, center, radius: float) -> np.ndarray:
    """Cell-averaged indicator of B_radius(center) on the interior cells."""
    h = lake.h
    vals = np.empty(lake.n_cells)
    for k, (cx, cy) in enumerate(lake.centers):
        x0, y0 = cx - center[0] - h / 2, cy - center[1] - h / 2
        vals[k] = disk_box_overlap(radius, x0, x0 + h, y0, y0 + h) / (h * h)
    return vals
