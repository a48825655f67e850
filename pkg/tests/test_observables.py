import math

import numpy as np
import pytest

from strongfield.grid import GridSpec, Orbital, build_grid
from strongfield.observables import (
    AnalysisBox,
    bound_population,
    charge_state_split,
    diagnostics,
    expand_populations,
    interference_parameter,
    ion_probabilities,
    keldysh,
    lowest_open_channel,
    ponderomotive_energy,
)
from strongfield.potentials import LaserPulse
from strongfield import units


@pytest.fixture(scope="module")
def grid():
    return build_grid(GridSpec(n_z=201, dz=0.2, n_rho=16, h_rho=0.6))


def normalized_gaussian_orbital(grid, width=2.0, z0=0.0):
    zz, rr = grid.z_points[:, None], grid.rho_points[None, :]
    psi = np.exp(-((zz - z0) ** 2 + rr**2) / (2.0 * width**2)).astype(complex)
    psi /= grid.norm(psi)
    return Orbital(values=psi, spin="up", m=0)


# ---------------------------------------------------------------------------
# bound_population
# ---------------------------------------------------------------------------

def test_population_fully_inside_box(grid):
    orb = normalized_gaussian_orbital(grid, width=1.5)
    assert bound_population(orb, AnalysisBox(15.0, 8.0), grid) == pytest.approx(1.0, abs=1e-8)


def test_population_zero_orbital(grid):
    orb = Orbital(values=np.zeros(grid.shape, dtype=complex), spin="up", m=0)
    assert bound_population(orb, AnalysisBox(10.0, 5.0), grid) == 0.0


def test_population_constructed_half_split(grid):
    # equal weight on one z plane inside and one outside the box
    psi = np.zeros(grid.shape, dtype=complex)
    iz_in = np.argmin(np.abs(grid.z_points - 2.0))
    iz_out = np.argmin(np.abs(grid.z_points - 15.0))
    psi[iz_in, 0] = 1.0
    psi[iz_out, 0] = 1.0
    psi /= grid.norm(psi)
    orb = Orbital(values=psi, spin="up", m=0)
    n_in = bound_population(orb, AnalysisBox(10.0, 5.0), grid)
    assert n_in == pytest.approx(0.5, abs=1e-8)


def test_population_monotone_in_box_size(grid):
    orb = normalized_gaussian_orbital(grid, width=6.0, z0=3.0)
    sizes = [AnalysisBox(5.0, 3.0), AnalysisBox(8.0, 5.0), AnalysisBox(12.0, 7.0)]
    vals = [bound_population(orb, b, grid) for b in sizes]
    assert vals[0] <= vals[1] <= vals[2]


def test_box_outside_grid_rejected(grid):
    orb = normalized_gaussian_orbital(grid)
    with pytest.raises(ValueError):
        bound_population(orb, AnalysisBox(1e4, 5.0), grid)
    with pytest.raises(ValueError):
        bound_population(orb, AnalysisBox(10.0, 1e4), grid)


# ---------------------------------------------------------------------------
# ion probabilities
# ---------------------------------------------------------------------------

def test_ion_probabilities_no_escape():
    p0, p1 = ion_probabilities([1.0, 1.0, 1.0, 1.0])
    assert p0 == 1.0
    assert p1 == 0.0


def test_ion_probabilities_two_orbital_case():
    p0, p1 = ion_probabilities([0.9, 0.8])
    assert p0 == pytest.approx(0.72, abs=1e-14)
    assert p1 == pytest.approx(0.26, abs=1e-14)


def test_ion_probabilities_with_zero_population():
    p0, p1 = ion_probabilities([0.0, 0.5])
    assert p0 == 0.0
    assert p1 == pytest.approx(0.5, abs=1e-15)


def test_ion_probabilities_rejects_out_of_range():
    with pytest.raises(ValueError):
        ion_probabilities([1.2, 0.5])
    with pytest.raises(ValueError):
        ion_probabilities([-0.1])
    with pytest.raises(ValueError):
        ion_probabilities([])


def test_probability_closure_and_positivity():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = rng.uniform(0.0, 1.0, size=rng.integers(1, 15))
        p0, p1, p2 = charge_state_split(n)
        assert p2 >= 0.0
        # closure: full product expansion sums to one
        assert p0 + p1 + p2 == pytest.approx(1.0, abs=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(7)
    n = rng.uniform(0.0, 1.0, size=10)
    ref = ion_probabilities(n)
    for _ in range(50):
        perm = rng.permutation(n)
        got = ion_probabilities(perm)
        assert got[0] == pytest.approx(ref[0], rel=1e-12, abs=1e-15)
        assert got[1] == pytest.approx(ref[1], rel=1e-12, abs=1e-15)


def test_expand_populations():
    out = expand_populations([0.9, 0.8], [2, 4])
    assert np.allclose(out, [0.9, 0.9, 0.8, 0.8, 0.8, 0.8])
    with pytest.raises(ValueError):
        expand_populations([0.9], [0])


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def test_keldysh_unity_by_construction():
    pulse = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=6)
    ip = 2.0 * ponderomotive_energy(pulse)
    assert keldysh(ip, pulse) == pytest.approx(1.0, rel=1e-12)


def test_keldysh_n2_values():
    pulse = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=24)
    u_p = ponderomotive_energy(pulse)
    assert u_p == pytest.approx(0.0522, abs=2e-4)
    ip_au = 15.91 / units.HARTREE_TO_EV
    assert keldysh(ip_au, pulse) == pytest.approx(2.37, abs=0.01)


def test_keldysh_intensity_scaling():
    p1 = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=6)
    p4 = LaserPulse(wavelength_nm=390.0, intensity_wcm2=4e14, n_cycles=6)
    ip = 0.5
    assert keldysh(ip, p4) == pytest.approx(0.5 * keldysh(ip, p1), rel=1e-12)


def test_interference_threshold_and_unit_case():
    pulse = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=6)
    u_p = ponderomotive_energy(pulse)
    # exact threshold: N*omega == U_p + I_p -> k_N R = 0
    n = 5
    ip = n * pulse.omega - u_p
    assert interference_parameter(n, pulse, ip, 2.0) == pytest.approx(0.0, abs=1e-12)
    # excess of 0.5 hartree with R = 2 -> k_N R = 2
    ip2 = n * pulse.omega - u_p - 0.5
    assert interference_parameter(n, pulse, ip2, 2.0) == pytest.approx(2.0, rel=1e-12)


def test_interference_closed_channel_tagged():
    pulse = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=6)
    assert interference_parameter(1, pulse, 10.0, 2.0) is None


def test_o2_lowest_open_channel_value():
    # oracle arithmetic: omega = 2 pi c / lambda, U_p = E0^2/(4 w^2),
    # N = floor((U_p + I_p)/w) + 1, k = sqrt(2 (N w - U_p - I_p))
    pulse = LaserPulse(wavelength_nm=390.0, intensity_wcm2=1e14, n_cycles=24)
    ip_au = 11.45 / units.HARTREE_TO_EV
    omega = pulse.omega
    e0 = pulse.peak_field
    u_p = e0**2 / (4.0 * omega**2)
    n_oracle = math.floor((u_p + ip_au) / omega) + 1
    k_oracle = math.sqrt(2.0 * (n_oracle * omega - u_p - ip_au))
    assert lowest_open_channel(pulse, ip_au) == n_oracle == 5
    got = interference_parameter(n_oracle, pulse, ip_au, 2.282)
    assert got == pytest.approx(k_oracle * 2.282, rel=1e-12)
    assert got == pytest.approx(1.076, abs=2e-3)
    d = diagnostics(pulse, ip_au, 2.282)
    assert d.n_photons == 5
    assert d.k_n_r == pytest.approx(got, rel=1e-14)
    assert d.gamma_k == pytest.approx(keldysh(ip_au, pulse), rel=1e-14)
