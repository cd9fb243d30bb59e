from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from lakevortex.geometry import (
    PRESETS,
    GeometryError,
    build_lake,
    disk_box_overlap,
    green_disk,
    h_kernel,
    h_kernel_bounds,
    rect_lake,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# lake construction


def test_constant_depth_disk(disk_const_64):
    lake = disk_const_64
    assert np.all(lake.b_int == 1.0)
    assert abs(lake.diameter - 2.0) <= lake.h


def test_interior_max_depth_peaks_at_origin():
    lake = build_lake("disk_interior_max_b", 64)
    argmax = lake.centers[np.argmax(lake.b_int)]
    nearest_origin = lake.centers[np.argmin(np.hypot(*lake.centers.T))]
    assert np.allclose(argmax, nearest_origin)


def test_degenerate_depth_positive_inside_vanishing_at_rim():
    lake = build_lake("disk_degenerate_b", 64)
    assert lake.b_int.min() > 0.0
    ghost_b = lake.b[tuple(lake.boundary.ij.T)]
    assert np.all(ghost_b < 10.0 * lake.h)


def test_unknown_preset_rejected():
    with pytest.raises(GeometryError, match="unknown preset"):
        build_lake("atlantis", 64)


def test_resolution_too_small_rejected():
    with pytest.raises(GeometryError, match="resolution"):
        build_lake("disk_constant_b", 8)


@pytest.mark.parametrize("preset", PRESETS)
def test_preset_invariants(preset):
    lake = build_lake(preset, 32)
    assert np.all(lake.b_int > 0.0)
    assert lake.measure_nu > 0.0
    # interior mask is 4-connected
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    _, n_components = ndimage.label(lake.mask, structure=structure)
    assert n_components == 1


def test_diameter_matches_brute_force():
    lake = build_lake("rect_constant_b", 24)
    pts = lake.centers
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    assert lake.diameter == pytest.approx(math.sqrt(d2.max()), abs=1e-12)


def test_boundary_trace_ordering_and_weights(disk_const_64):
    trace = disk_const_64.boundary
    # counterclockwise from the cell nearest parameter 0, cyclically increasing
    gaps = np.diff(trace.params)
    assert np.all(gaps > 0)
    assert trace.params[0] < 4 * disk_const_64.h
    assert trace.weights.sum() == pytest.approx(TWO_PI, rel=1e-12)
    # outward normals point away from the origin for the unit disk
    dots = np.sum(trace.normals * trace.projections, axis=1)
    assert np.all(dots > 0.99)


def test_rect_lake_places_requested_cells():
    lake = rect_lake(4, 1, 0.25)
    assert lake.n_cells == 4
    assert np.allclose(lake.centers[:, 1], 0.125)


# ---------------------------------------------------------------------------
# disk Green function


def test_green_center_value():
    # image formula by hand: G(0, (1/2, 0)) = ln(2) / (2 pi)
    assert green_disk((0.0, 0.0), (0.5, 0.0)) == pytest.approx(
        math.log(2.0) / TWO_PI, abs=1e-14
    )


def test_green_symmetry_pair():
    a, b = (0.3, 0.1), (0.1, 0.3)
    assert green_disk(a, b) == pytest.approx(green_disk(b, a), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-0.95, 0.95), st.floats(-0.95, 0.95),
    st.floats(-0.95, 0.95), st.floats(-0.95, 0.95),
)
def test_green_symmetry_random(ax, ay, bx, by):
    a, b = np.array([ax, ay]), np.array([bx, by])
    if np.hypot(*a) >= 0.999 or np.hypot(*b) >= 0.999 or np.hypot(*(a - b)) < 1e-6:
        return
    assert abs(green_disk(a, b) - green_disk(b, a)) <= 1e-12


def test_green_vanishes_at_boundary():
    vals = [green_disk((0.0, 0.0), (r, 0.0)) for r in (0.9, 0.99, 0.999)]
    assert vals[0] > vals[1] > vals[2] > 0.0
    assert vals[2] < 1e-3 / TWO_PI * 10


def test_green_coincident_rejected():
    with pytest.raises(GeometryError, match="singular"):
        green_disk((0.2, 0.2), (0.2, 0.2))
    with pytest.raises(GeometryError, match="inside"):
        green_disk((1.5, 0.0), (0.2, 0.2))


# ---------------------------------------------------------------------------
# regular kernel part


def test_h_kernel_center_is_constant(disk_const_64):
    # H(0, y) = ln(diam)/2pi: the log singularity cancels against the image term
    expect = math.log(disk_const_64.diameter) / TWO_PI
    for y in ((0.3, 0.4), (0.01, 0.0), (-0.7, 0.2)):
        assert h_kernel(disk_const_64, (0.0, 0.0), y) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(math.log(2.0) / TWO_PI, abs=disk_const_64.h)


def test_h_kernel_bound_attained_near_center(disk_const_64):
    # at x = 0 and tiny |y| both sides approach ln(diam/1)/2pi
    upper, _ = h_kernel_bounds(disk_const_64, (0.0, 0.0), (1e-6, 0.0))
    hval = h_kernel(disk_const_64, (0.0, 0.0), (1e-6, 0.0))
    assert upper - hval == pytest.approx(0.0, abs=1e-5)


def test_h_kernel_symmetric(disk_const_64):
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.uniform(-0.7, 0.7, size=(2, 2))
        if np.hypot(*(a - b)) < 1e-3:
            continue
        assert h_kernel(disk_const_64, a, b) == pytest.approx(
            h_kernel(disk_const_64, b, a), abs=1e-12
        )


def test_h_kernel_upper_bound_thousand_pairs(disk_const_64):
    rng = np.random.default_rng(123)
    count = 0
    min_slack = float("inf")
    while count < 1000:
        a, b = rng.uniform(-1, 1, size=(2, 2))
        if np.hypot(*a) >= 0.999 or np.hypot(*b) >= 0.999 or np.hypot(*(a - b)) < 1e-9:
            continue
        upper, _ = h_kernel_bounds(disk_const_64, a, b)
        min_slack = min(min_slack, upper - h_kernel(disk_const_64, a, b))
        count += 1
    assert min_slack >= -1e-12


def test_h_kernel_rejects_non_disk():
    lake = build_lake("rect_constant_b", 32)
    with pytest.raises(GeometryError, match="disk"):
        h_kernel(lake, (0.1, 0.1), (0.2, 0.2))


# ---------------------------------------------------------------------------
# overlap helper


def test_disk_box_overlap_against_subsampling():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x0, y0 = rng.uniform(-1.2, 0.8, size=2)
        w, hgt = rng.uniform(0.05, 0.8, size=2)
        r = rng.uniform(0.2, 1.0)
        exact = disk_box_overlap(r, x0, x0 + w, y0, y0 + hgt)
        xs = np.linspace(x0, x0 + w, 200)
        ys = np.linspace(y0, y0 + hgt, 200)
        X, Y = np.meshgrid(xs, ys)
        approx = np.mean(X * X + Y * Y <= r * r) * w * hgt
        assert exact == pytest.approx(approx, abs=3e-3 * max(w * hgt, r * r))
