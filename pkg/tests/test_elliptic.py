from __future__ import annotations

import math

import numpy as np
import pytest

from lakevortex.elliptic import (
    CompatibilityError,
    apply_K,
    assemble_operator,
    circulation_potential,
    flux_compatibility,
    flux_preset,
    kernel_representation_residual,
    solve_background,
)
from lakevortex.geometry import build_lake, disk_indicator_averaged, rect_lake

TWO_PI = 2.0 * math.pi

# value of the stream function at the origin for a unit source patch of
# radius 1/2 on the constant-depth unit disk: 1/16 + ln(2)/8
PSI_CENTER_EXACT = 1.0 / 16.0 + math.log(2.0) / 8.0


def psi_exact_radial(r: float) -> float:
    if r <= 0.5:
        return PSI_CENTER_EXACT - r * r / 4.0
    return 0.125 * math.log(1.0 / r)


# ---------------------------------------------------------------------------
# assembly


def test_constant_depth_stencil_is_plain_five_point(disk_const_64, disk_const_64_handle):
    lake, handle = disk_const_64, disk_const_64_handle
    # pick a cell with all four neighbors interior, far from the rim
    c = np.argmin(np.hypot(lake.centers[:, 0] - 0.3, lake.centers[:, 1] + 0.2))
    row = handle.matrix.getrow(c).toarray().ravel()
    inv_h2 = 1.0 / lake.cell_area
    assert row[c] == pytest.approx(4.0 * inv_h2, rel=1e-14)
    off = row[row != 0]
    assert sorted(off)[:4] == pytest.approx([-inv_h2] * 4, rel=1e-14)


def test_bilinear_form_positive_definite(disk_const_64_handle):
    rng = np.random.default_rng(0)
    n = disk_const_64_handle.n
    for _ in range(20):
        u = rng.normal(size=n)
        assert disk_const_64_handle.bilinear_form(u, u) > 0.0


def test_bilinear_form_symmetric(interior_128_handle):
    rng = np.random.default_rng(1)
    n = interior_128_handle.n
    for _ in range(10):
        u, v = rng.normal(size=(2, n))
        lhs = interior_128_handle.bilinear_form(u, v)
        rhs = interior_128_handle.bilinear_form(v, u)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v)


def test_matrix_exactly_symmetric(interior_128_handle):
    a = interior_128_handle.matrix
    assert abs(a - a.T).max() == 0.0


def test_empty_interior_rejected():
    # a valid Lake always has interior cells; force the degenerate case to
    # exercise the assembly guard
    from lakevortex.elliptic import SolverError

    lake = rect_lake(1, 1, 0.5)
    lake.cells = lake.cells[:0]
    with pytest.raises(SolverError, match="empty interior"):
        assemble_operator(lake)


# ---------------------------------------------------------------------------
# inverse application


def test_apply_K_zero_source(disk_const_64_handle):
    psi = apply_K(disk_const_64_handle, np.zeros(disk_const_64_handle.n))
    assert np.all(psi == 0.0)


def test_apply_K_analytic_patch(disk_const_64, disk_const_64_handle):
    lake = disk_const_64
    zeta = disk_indicator_averaged(lake, (0.0, 0.0), 0.5)
    psi = apply_K(disk_const_64_handle, zeta)
    c0 = np.argmin(np.hypot(*lake.centers.T))
    r0 = float(np.hypot(*lake.centers[c0]))
    assert psi[c0] == pytest.approx(psi_exact_radial(r0), abs=5.0 * lake.h**2)


def test_mesh_convergence_order():
    errors = []
    hs = []
    for res in (64, 128):
        lake = build_lake("disk_constant_b", res)
        handle = assemble_operator(lake)
        zeta = disk_indicator_averaged(lake, (0.0, 0.0), 0.5)
        psi = apply_K(handle, zeta)
        c0 = np.argmin(np.hypot(*lake.centers.T))
        errors.append(abs(psi[c0] - psi_exact_radial(float(np.hypot(*lake.centers[c0])))))
        hs.append(lake.h)
    order = math.log(errors[0] / errors[1]) / math.log(hs[0] / hs[1])
    assert order >= 1.8


def test_mesh_convergence_variable_depth_manufactured():
    # manufactured radial solution psi = (1 - r^2)^2 on the variable-depth
    # disk b = 1 - r^2/2; the source is evaluated by an independent
    # finite-difference quadrature of the continuum operator
    def b_of(r):
        return 1.0 - r * r / 2.0

    def rhs_of(r):
        def flux(rr):
            return rr * (-4.0 * rr * (1.0 - rr * rr)) / b_of(rr)

        step = 1e-5
        d = (flux(r + step) - flux(r - step)) / (2.0 * step)
        return -d / np.maximum(r, 1e-12)

    errors, hs = [], []
    for res in (64, 128):
        lake = build_lake("disk_interior_max_b", res)
        handle = assemble_operator(lake)
        r = np.hypot(*lake.centers.T)
        psi = apply_K(handle, rhs_of(r) / lake.b_int)
        errors.append(float(np.abs(psi - (1.0 - r * r) ** 2).max()))
        hs.append(lake.h)
    order = math.log(errors[0] / errors[1]) / math.log(hs[0] / hs[1])
    assert order >= 1.8


def test_self_adjointness_against_dense_oracle():
    lake = rect_lake(8, 8, 0.1, depth=lambda x, y: 1.0 + 0.5 * x)
    handle = assemble_operator(lake)
    rng = np.random.default_rng(5)
    z1, z2 = rng.normal(size=(2, lake.n_cells))
    nuw = lake.nu_weights
    lhs = float(np.dot(z1 * nuw, apply_K(handle, z2)))
    rhs = float(np.dot(z2 * nuw, apply_K(handle, z1)))
    assert abs(lhs - rhs) <= 1e-9 * abs(lhs)
    # dense linear-algebra oracle for the same solve
    a_dense = handle.matrix.toarray()
    psi_dense = np.linalg.solve(a_dense, lake.b_int * z1)
    assert np.allclose(apply_K(handle, z1), psi_dense, rtol=1e-10, atol=1e-12)


def test_solve_residual_contract(interior_128, interior_128_handle):
    rng = np.random.default_rng(9)
    zeta = np.abs(rng.normal(size=interior_128.n_cells))
    psi = apply_K(interior_128_handle, zeta)
    rhs = interior_128.b_int * zeta
    res = np.linalg.norm(interior_128_handle.matrix @ psi - rhs) / np.linalg.norm(rhs)
    assert res <= 1e-10


def test_degenerate_depth_operator_solves():
    # shore-vanishing depth: clamped faces keep the stencil finite and SPD
    lake = build_lake("disk_degenerate_b", 64)
    handle = assemble_operator(lake)
    zeta = disk_indicator_averaged(lake, (0.0, 0.0), 0.4)
    psi = apply_K(handle, zeta)
    assert np.all(np.isfinite(psi))
    assert psi.min() > 0.0
    rng = np.random.default_rng(21)
    u = rng.normal(size=lake.n_cells)
    assert handle.bilinear_form(u, u) > 0.0


def test_positivity_of_inverse(interior_128, interior_128_handle):
    zeta = np.zeros(interior_128.n_cells)
    zeta[interior_128.n_cells // 3] = 1.0
    psi = apply_K(interior_128_handle, zeta)
    assert psi.min() > 0.0


def test_apply_K_validates_input(disk_const_64_handle):
    with pytest.raises(ValueError):
        apply_K(disk_const_64_handle, np.ones(3))
    bad = np.ones(disk_const_64_handle.n)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        apply_K(disk_const_64_handle, bad)


# ---------------------------------------------------------------------------
# background flow


def test_background_zero_flux(disk_const_64, disk_const_64_handle):
    q = solve_background(disk_const_64_handle, np.zeros(len(disk_const_64.boundary)))
    assert np.all(q == 0.0)


def test_background_cosine_gives_vertical_coordinate(disk_const_64, disk_const_64_handle):
    nu = flux_preset(disk_const_64, "cosine")
    q = solve_background(disk_const_64_handle, nu)
    err = np.abs(q - disk_const_64.centers[:, 1]).max()
    assert err <= 5.0 * disk_const_64.h
    probe = np.argmin(np.hypot(disk_const_64.centers[:, 0],
                               disk_const_64.centers[:, 1] - 0.5))
    assert q[probe] == pytest.approx(0.5, abs=5.0 * disk_const_64.h)


def test_background_constant_flux_rejected(disk_const_64, disk_const_64_handle):
    nu = np.ones(len(disk_const_64.boundary))
    with pytest.raises(CompatibilityError) as err:
        solve_background(disk_const_64_handle, nu)
    assert err.value.integral == pytest.approx(TWO_PI, rel=1e-12)


def test_circulation_potential_anchored_and_closed(disk_const_64):
    lake = disk_const_64
    nu = flux_preset(lake, "cosine")
    big_q = circulation_potential(lake, nu)
    assert big_q[0] == 0.0
    # loop closure equals the compatibility integral (zero after correction)
    assert flux_compatibility(lake, nu) == pytest.approx(0.0, abs=1e-13)
    theta = lake.boundary.params
    assert np.abs(big_q - (np.sin(theta) - math.sin(theta[0]))).max() <= 5e-3


def test_custom_flux_mean_corrected(disk_const_64):
    pts = [(0.0, 1.0), (math.pi / 2, 0.3), (math.pi, -0.2), (3 * math.pi / 2, 0.1)]
    nu = flux_preset(disk_const_64, "custom", points=pts)
    assert abs(flux_compatibility(disk_const_64, nu)) <= 1e-12


def test_flux_needs_matching_length(disk_const_64_handle):
    with pytest.raises(ValueError, match="boundary cell"):
        solve_background(disk_const_64_handle, np.zeros(3))


# ---------------------------------------------------------------------------
# kernel representation


def test_representation_constant_depth(disk_const_64, disk_const_64_handle):
    lake = disk_const_64
    zeta = disk_indicator_averaged(lake, (0.2, 0.1), 0.3)
    zeta = zeta / float(np.dot(zeta, lake.nu_weights))  # unit weighted mass
    res = kernel_representation_residual(disk_const_64_handle, zeta)
    assert np.abs(res).max() <= 5.0 * lake.h


def test_representation_correction_bounded_under_shrinking_support(
    interior_128, interior_128_handle
):
    lake = interior_128
    sample = np.linspace(0, lake.n_cells - 1, 150).astype(int)
    residuals = []
    for radius in (0.2, 0.1, 0.05, 0.025):
        zeta = disk_indicator_averaged(lake, (0.1, 0.2), radius)
        zeta = zeta / float(np.dot(zeta, lake.nu_weights))
        res = kernel_representation_residual(interior_128_handle, zeta, sample)
        residuals.append(float(np.abs(res).max()))
    # bounded, not growing like the log of the shrinking radius
    assert max(residuals) <= 1.25 * residuals[0]
