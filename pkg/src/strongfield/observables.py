"""Analysis-box ionization counters, ion probabilities and field diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, Orbital
from .potentials import LaserPulse


@dataclass(frozen=True)
class AnalysisBox:
    """Cylindrical region whose interior norm counts bound electrons."""

    z_half_extent: float = 20.0
    rho_extent: float = 12.0

    def __post_init__(self):
        if self.z_half_extent <= 0 or self.rho_extent <= 0:
            raise ValueError("analysis box extents must be positive")

    def validate_inside_grid(self, grid: Grid) -> None:
        if self.z_half_extent >= grid.z_points[-1]:
            raise ValueError(
                f"analysis box z extent {self.z_half_extent} reaches the grid edge "
                f"{grid.z_points[-1]}"
            )
        if self.rho_extent >= grid.rho_points[-1]:
            raise ValueError(
                f"analysis box rho extent {self.rho_extent} reaches the radial edge "
                f"{grid.rho_points[-1]:.2f}"
            )

    def interior_mask(self, grid: Grid) -> np.ndarray:
        in_z = np.abs(grid.z_points) <= self.z_half_extent
        in_rho = grid.rho_points <= self.rho_extent
        return in_z[:, None] & in_rho[None, :]

    def scaled(self, factor: float) -> "AnalysisBox":
        return AnalysisBox(self.z_half_extent * factor, self.rho_extent * factor)


@dataclass
class PopulationTrace:
    """Per-orbital bound fractions N_j(t) sampled along a propagation."""

    times: np.ndarray            # (n_samples,)
    field: np.ndarray            # E(t) at the samples
    labels: list                 # unique-orbital column labels
    weights: np.ndarray          # electrons carried by each column
    bound: np.ndarray            # (n_samples, n_orbitals)
    absorbed: np.ndarray         # cumulative absorber-removed norm, same shape

    @property
    def escaped(self) -> np.ndarray:
        """Continuum fraction per orbital; includes absorber-removed norm."""
        return 1.0 - self.bound

    def final_populations(self) -> np.ndarray:
        return self.bound[-1]

    def depletion(self) -> dict:
        """1 - N_j at the last sample, keyed by column label."""
        return {lab: float(1.0 - nj) for lab, nj in zip(self.labels, self.bound[-1])}


@dataclass(frozen=True)
class IonYieldRecord:
    intensity_wcm2: float
    wavelength_nm: float
    molecule: str
    occupation: str
    p0: float
    p1: float
    p2plus: float
    p1_max: float = 0.0  # running maximum of P1 over the pulse


def bound_population(orbital: Orbital, box: AnalysisBox, grid: Grid) -> float:
    """N_j = integral of |psi|^2 over the analysis box."""
    box.validate_inside_grid(grid)
    mask = box.interior_mask(grid)
    w = grid.spec.dz * grid.rho_weights[None, :]
    return float(np.sum((w * mask) * np.abs(orbital.values) ** 2))


def ion_probabilities(populations) -> tuple[float, float]:
    """P0 and P1 from per-spin-orbital bound fractions (one entry per electron).

    P0 is the product of all N_j; P1 sums the single-escape products. The
    leave-one-out products use prefix/suffix accumulation so N_j = 0 is exact.
    """
    n = np.asarray(populations, dtype=float)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("populations must be a non-empty 1D sequence")
    if np.any(n < 0.0) or np.any(n > 1.0):
        raise ValueError("bound fractions must lie in [0, 1]")
    p0 = float(np.prod(n))
    prefix = np.concatenate(([1.0], np.cumprod(n)[:-1]))
    suffix = np.concatenate((np.cumprod(n[::-1])[:-1][::-1], [1.0]))
    leave_one_out = prefix * suffix
    p1 = float(np.sum(leave_one_out * (1.0 - n)))
    return p0, p1


def expand_populations(populations, weights) -> np.ndarray:
    """Repeat each unique-orbital N_j by its electron count."""
    reps = np.asarray(np.round(weights), dtype=int)
    if np.any(reps < 1):
        raise ValueError("weights must be positive integers")
    return np.repeat(np.asarray(populations, dtype=float), reps)


def charge_state_split(populations) -> tuple[float, float, float]:
    """(P0, P1, P2+) with the residual clamped at zero against roundoff."""
    p0, p1 = ion_probabilities(populations)
    return p0, p1, max(0.0, 1.0 - p0 - p1)


def ponderomotive_energy(pulse: LaserPulse) -> float:
    """U_p = E0^2 / (4 omega^2) in hartree."""
    return pulse.peak_field**2 / (4.0 * pulse.omega**2)


def keldysh(ip_au: float, pulse: LaserPulse) -> float:
    """gamma_k = sqrt(I_p / (2 U_p))."""
    if ip_au <= 0:
        raise ValueError("ionization potential must be positive")
    return math.sqrt(ip_au / (2.0 * ponderomotive_energy(pulse)))


def interference_parameter(
    n_photons: int, pulse: LaserPulse, ip_au: float, bond_length: float
):
    """k_N * R with k_N^2/2 = N omega - U_p - I_p; None if the channel is closed."""
    excess = n_photons * pulse.omega - ponderomotive_energy(pulse) - ip_au
    if excess < 0.0:
        return None
    return math.sqrt(2.0 * excess) * bond_length


def lowest_open_channel(pulse: LaserPulse, ip_au: float) -> int:
    """Smallest photon number N with N omega > U_p + I_p."""
    threshold = (ponderomotive_energy(pulse) + ip_au) / pulse.omega
    return int(math.floor(threshold)) + 1


@dataclass(frozen=True)
class DiagnosticParams:
    gamma_k: float
    u_p: float
    n_photons: int
    k_n: float | None
    k_n_r: float | None


def diagnostics(pulse: LaserPulse, ip_au: float, bond_length: float) -> DiagnosticParams:
    """Strong-field diagnostics at the lowest open multiphoton channel."""
    n = lowest_open_channel(pulse, ip_au)
    knr = interference_parameter(n, pulse, ip_au, bond_length)
    kn = None if knr is None else knr / bond_length
    return DiagnosticParams(
        gamma_k=keldysh(ip_au, pulse),
        u_p=ponderomotive_energy(pulse),
        n_photons=n,
        k_n=kn,
        k_n_r=knr,
    )
