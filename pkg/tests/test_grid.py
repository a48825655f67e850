import math

import numpy as np
import pytest

from strongfield.grid import (
    GridSpec,
    Orbital,
    apply_kinetic,
    build_grid,
    fd_second_derivative_coeffs,
    integrate,
    laguerre_nodes_weights,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(n_z=100, dz=0.05, n_rho=10, h_rho=0.3)  # even n_z
    with pytest.raises(ValueError):
        GridSpec(n_z=101, dz=-0.05, n_rho=10, h_rho=0.3)
    with pytest.raises(ValueError):
        GridSpec(n_z=101, dz=0.05, n_rho=10, h_rho=0.0)
    with pytest.raises(ValueError):
        GridSpec(n_z=101, dz=0.05, n_rho=0, h_rho=0.3)


def test_z_half_extent_production_values():
    spec = GridSpec(n_z=2291, dz=0.05, n_rho=43, h_rho=0.28838771)
    assert spec.z_half_extent == pytest.approx(57.25, abs=1e-12)


def test_single_radial_node():
    # L_1(x) = 1 - x: node at 1, Gauss weight 1
    x, w = laguerre_nodes_weights(1)
    assert x[0] == pytest.approx(1.0, abs=1e-14)
    assert w[0] == pytest.approx(1.0, abs=1e-14)
    g = build_grid(GridSpec(n_z=11, dz=0.1, n_rho=1, h_rho=1.0))
    assert g.rho_points[0] == pytest.approx(1.0, abs=1e-14)


def test_two_radial_nodes():
    g = build_grid(GridSpec(n_z=11, dz=0.1, n_rho=2, h_rho=1.0))
    assert g.rho_points[0] == pytest.approx(2.0 - math.sqrt(2.0), abs=1e-12)
    assert g.rho_points[1] == pytest.approx(2.0 + math.sqrt(2.0), abs=1e-12)


def test_grid_symmetry_and_monotone_radial():
    g = build_grid(GridSpec(n_z=101, dz=0.07, n_rho=12, h_rho=0.4))
    assert np.array_equal(g.z_points, -g.z_points[::-1])
    assert np.all(np.diff(g.rho_points) > 0)
    assert np.all(g.rho_points > 0)
    assert np.all(g.rho_weights > 0)


def test_gauss_laguerre_exactness():
    # the n-point rule integrates p(x) e^{-x} exactly for deg p <= 2n-1
    for n in range(1, 13):
        x, w = laguerre_nodes_weights(n)
        for deg in range(2 * n):
            exact = math.factorial(deg)
            quad = float(np.sum(w * x**deg))
            assert abs(quad - exact) / exact < 1e-10, (n, deg)


def test_radial_line_integral_monomials():
    # int rho^k e^{-rho/h} d rho = h^{k+1} k!, exact for k <= 2 n_rho - 1
    n_rho, h = 7, 0.37
    g = build_grid(GridSpec(n_z=11, dz=0.1, n_rho=n_rho, h_rho=h))
    line_w = h * g.laguerre_w * np.exp(g.laguerre_x)
    for k in range(2 * n_rho):
        exact = h ** (k + 1) * math.factorial(k)
        quad = float(np.sum(line_w * g.rho_points**k * np.exp(-g.rho_points / h)))
        assert abs(quad - exact) / exact < 1e-10, k


def test_volume_integral_monomials():
    # with the 2*pi*rho factor folded in, rho^k e^{-rho/h} integrates exactly
    # for k <= 2 n_rho - 2 (one degree is consumed by the volume factor)
    n_rho, h = 6, 0.5
    g = build_grid(GridSpec(n_z=21, dz=0.1, n_rho=n_rho, h_rho=h))
    length = g.spec.n_z * g.spec.dz
    for k in range(2 * n_rho - 1):
        field = (g.rho_points[None, :] ** k) * np.exp(-g.rho_points[None, :] / h)
        field = np.broadcast_to(field, g.shape)
        exact = length * 2.0 * math.pi * h ** (k + 2) * math.factorial(k + 1)
        assert abs(integrate(field, g) - exact) / exact < 1e-10, k


def test_integrate_zero_and_shape_mismatch():
    g = build_grid(GridSpec(n_z=21, dz=0.1, n_rho=4, h_rho=0.5))
    assert integrate(np.zeros(g.shape), g) == 0.0
    with pytest.raises(ValueError):
        integrate(np.zeros((5, 4)), g)


def test_normalized_gaussian_integrates_to_one():
    g = build_grid(GridSpec(n_z=201, dz=0.1, n_rho=24, h_rho=0.35))
    zz, rr = g.z_points[:, None], g.rho_points[None, :]
    n = np.exp(-(zz**2 + rr**2) / 2.0) / (2.0 * math.pi) ** 1.5
    assert abs(integrate(n, g) - 1.0) < 1e-8


def test_fd_coefficients_order4():
    c = fd_second_derivative_coeffs(2, 1.0)
    assert np.allclose(c, [-2.5, 4.0 / 3.0, -1.0 / 12.0], atol=1e-13)


def test_kinetic_z_on_sine():
    # -1/2 d2/dz2 sin(kz) = +k^2/2 sin(kz); FD truncation error O(dz^{2q})
    k = 1.3
    errs = []
    for dz in (0.1, 0.05):
        n_z = int(round(20.0 / dz)) | 1
        g = build_grid(GridSpec(n_z=n_z, dz=dz, n_rho=3, h_rho=0.5, fd_order=2))
        f = np.sin(k * g.z_points)[:, None] * np.exp(-g.rho_points[None, :])
        out = g.kinetic_z @ (f.astype(complex))
        exact = 0.5 * k**2 * f
        interior = slice(4, -4)
        errs.append(np.abs(out[interior] - exact[interior]).max())
    ratio = errs[0] / errs[1]
    assert 10.0 < ratio < 24.0  # nominal 2^4 = 16


def test_kinetic_z_constant_is_zero():
    g = build_grid(GridSpec(n_z=41, dz=0.1, n_rho=3, h_rho=0.5))
    f = np.ones(g.shape, dtype=complex)
    out = g.kinetic_z @ f
    interior = slice(g.spec.fd_order, -g.spec.fd_order)
    assert np.abs(out[interior]).max() < 1e-13


def test_centrifugal_term_m1():
    g = build_grid(GridSpec(n_z=21, dz=0.1, n_rho=6, h_rho=0.5))
    rng = np.random.default_rng(3)
    values = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    t0 = apply_kinetic(Orbital(values=values, spin="up", m=0), g)
    t1 = apply_kinetic(Orbital(values=values, spin="up", m=1), g)
    extra = values / (2.0 * g.rho_points[None, :] ** 2)
    assert np.allclose(t1 - t0, extra, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("m", [0, 1])
def test_kinetic_hermitian_under_grid_inner_product(m):
    g = build_grid(GridSpec(n_z=61, dz=0.09, n_rho=14, h_rho=0.3))
    rng = np.random.default_rng(7)
    u = rng.normal(size=g.shape)
    v = rng.normal(size=g.shape)
    tu = apply_kinetic(Orbital(values=u.astype(complex), spin="up", m=m), g)
    tv = apply_kinetic(Orbital(values=v.astype(complex), spin="up", m=m), g)
    a = g.inner(u, tv)
    b = g.inner(tu, v)
    assert abs(a - b) / abs(a) < 1e-12


def test_parity_flip_roundtrip():
    g = build_grid(GridSpec(n_z=31, dz=0.2, n_rho=5, h_rho=0.4))
    rng = np.random.default_rng(11)
    f = rng.normal(size=g.shape)
    assert np.array_equal(g.parity_flip(g.parity_flip(f)), f)
    even = np.cos(g.z_points)[:, None] * np.ones((1, 5))
    assert np.array_equal(g.parity_flip(even), even)


def test_orbital_validation():
    vals = np.zeros((3, 2), dtype=complex)
    with pytest.raises(ValueError):
        Orbital(values=vals, spin="sideways", m=0)
    with pytest.raises(ValueError):
        Orbital(values=vals, spin="up", m=2)
