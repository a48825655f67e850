"""Contributions to the time-dependent effective potential.

All evaluators are pure functions of their inputs. The Hartree potential is
obtained from a direct solve of the cylindrical Poisson equation: the
long-range part is carried by analytic Gaussian multipole potentials (up to
l = 4) fitted to the instantaneous moments of the density, and the localized
remainder is solved exactly in the radial eigenbasis with banded Cholesky
factorizations along z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh
from scipy.special import eval_legendre, gamma, gammainc

from . import units
from .grid import Grid

BOND_LENGTHS_BOHR = {"N2": 2.074, "O2": 2.282, "F2": 2.668}
NUCLEAR_CHARGES = {"N2": 7, "O2": 8, "F2": 9}


@dataclass(frozen=True)
class MoleculeSpec:
    """Homonuclear diatomic: two equal charges on the z axis at +-R/2."""

    charges: tuple[int, int]
    bond_length: float

    def __post_init__(self):
        if len(self.charges) != 2:
            raise ValueError("exactly two nuclei required")
        if self.charges[0] != self.charges[1]:
            raise ValueError("homonuclear molecule requires equal charges")
        if self.charges[0] <= 0:
            raise ValueError("nuclear charges must be positive")
        if self.bond_length <= 0:
            raise ValueError("bond length must be positive")

    @classmethod
    def from_name(cls, name: str) -> "MoleculeSpec":
        key = name.strip().upper().replace("_", "")
        if key not in BOND_LENGTHS_BOHR:
            raise ValueError(f"unknown molecule {name!r}; known: {sorted(BOND_LENGTHS_BOHR)}")
        z = NUCLEAR_CHARGES[key]
        return cls(charges=(z, z), bond_length=BOND_LENGTHS_BOHR[key])

    @property
    def centers(self) -> list[tuple[float, float]]:
        r = self.bond_length
        z = float(self.charges[0])
        return [(z, -0.5 * r), (z, +0.5 * r)]

    @property
    def n_electrons_neutral(self) -> int:
        return int(sum(self.charges))

    @property
    def nuclear_repulsion(self) -> float:
        return self.charges[0] * self.charges[1] / self.bond_length


@dataclass
class SpinDensity:
    """Spin-resolved electron density on the grid (phi-integrated, m-summed)."""

    up: np.ndarray
    down: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.up + self.down


@dataclass(frozen=True)
class LaserPulse:
    """Linearly polarized (along z) pulse with a sin^2 envelope."""

    wavelength_nm: float
    intensity_wcm2: float
    n_cycles: int
    envelope: str = "sin2"

    def __post_init__(self):
        if self.wavelength_nm <= 0 or self.intensity_wcm2 < 0 or self.n_cycles < 1:
            raise ValueError("invalid pulse parameters")
        if self.envelope != "sin2":
            raise ValueError(f"unsupported envelope {self.envelope!r}")

    @property
    def omega(self) -> float:
        return units.angular_frequency_au(self.wavelength_nm)

    @property
    def peak_field(self) -> float:
        return units.peak_field_au(self.intensity_wcm2)

    @property
    def duration(self) -> float:
        """Total pulse length in a.u. of time."""
        return self.n_cycles * 2.0 * math.pi / self.omega

    @property
    def duration_fs(self) -> float:
        return self.duration * units.FS_PER_AU


@dataclass
class PotentialStack:
    """The assembled pieces of V_eff at one instant."""

    ionic: np.ndarray
    hartree: np.ndarray
    xc_up: np.ndarray
    xc_down: np.ndarray
    laser_coefficient: float  # E(t); the interaction energy is E(t) * z

    def total(self, spin: str, grid: Grid) -> np.ndarray:
        xc = self.xc_up if spin == "up" else self.xc_down
        v = self.ionic + self.hartree + xc
        if self.laser_coefficient != 0.0:
            v = v + self.laser_coefficient * grid.z_points[:, None]
        return v


def eval_centers(charges, z_positions, grid: Grid) -> np.ndarray:
    """Bare Coulomb attraction -sum_I Z_I / |r - R_I| for point charges on the axis."""
    zz = grid.z_points[:, None]
    rr = grid.rho_points[None, :]
    v = np.zeros(grid.shape)
    for z_i, pos in zip(charges, z_positions):
        v -= z_i / np.sqrt((zz - pos) ** 2 + rr**2)
    return v


def eval_ionic(molecule: MoleculeSpec, grid: Grid) -> np.ndarray:
    charges = [c for c, _ in molecule.centers]
    positions = [p for _, p in molecule.centers]
    return eval_centers(charges, positions, grid)


def eval_xlda(density: SpinDensity) -> tuple[np.ndarray, np.ndarray]:
    """Exchange-only LDA potential per spin channel: -(6/pi)^(1/3) n_sigma^(1/3)."""
    c = -((6.0 / math.pi) ** (1.0 / 3.0))
    return c * np.cbrt(density.up), c * np.cbrt(density.down)


def exchange_energy(density: SpinDensity, grid: Grid) -> float:
    """E_x = -(3/2)(3/4pi)^(1/3) sum_sigma int n_sigma^(4/3)."""
    c = -1.5 * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    w = grid.spec.dz * grid.rho_weights
    acc = 0.0
    for n_s in (density.up, density.down):
        acc += float(np.sum(w * n_s * np.cbrt(n_s)))
    return c * acc


def laser_amplitude(pulse: LaserPulse, t: float) -> float:
    """E(t) = E0 sin^2(pi t / tau) cos(omega t); zero outside [0, tau]."""
    tau = pulse.duration
    if t < 0.0 or t > tau:
        return 0.0
    env = math.sin(math.pi * t / tau) ** 2
    return pulse.peak_field * env * math.cos(pulse.omega * t)


def assemble_effective(
    ionic: np.ndarray,
    hartree: np.ndarray,
    xc: tuple[np.ndarray, np.ndarray],
    pulse: LaserPulse | None,
    t: float,
) -> PotentialStack:
    for part in (hartree, xc[0], xc[1]):
        if part.shape != ionic.shape:
            raise ValueError("potential components live on different grids")
    e_t = laser_amplitude(pulse, t) if pulse is not None else 0.0
    return PotentialStack(
        ionic=ionic, hartree=hartree, xc_up=xc[0], xc_down=xc[1], laser_coefficient=e_t
    )


# ---------------------------------------------------------------------------
# Hartree potential
# ---------------------------------------------------------------------------

class HartreeSolver:
    """Direct Poisson solver for axially symmetric densities on the grid.

    Construction precomputes everything that depends only on the grid: the
    radial eigenbasis, per-eigenvalue banded Cholesky factors of the z
    operator, and the Gaussian reference multipoles (moments normalized to 1)
    together with their analytic potentials.
    """

    def __init__(self, grid: Grid, l_max: int = 4, ref_width: float = 2.0):
        self.grid = grid
        self.l_max = l_max
        self.ref_width = ref_width

        lam_rho = -2.0 * grid.kinetic_rho_sym[0]  # radial Laplacian, c-space
        mu, u = eigh(lam_rho)
        self._mu = mu
        self._u = u

        # banded upper storage of (-D2z + |mu_k|) and its Cholesky factor
        q = grid.spec.fd_order
        n_z = grid.spec.n_z
        stencil2 = -2.0 * grid.z_stencil  # +d^2/dz^2 half-stencil
        upper = np.zeros((q + 1, n_z))
        for j in range(1, q + 1):
            upper[q - j, j:] = -stencil2[j]
        base_diag = -stencil2[0]
        self._factors = []
        for mu_k in mu:
            band = upper.copy()
            band[q, :] = base_diag - mu_k
            self._factors.append(cholesky_banded(band, lower=False))

        zz = grid.z_points[:, None]
        rr = grid.rho_points[None, :]
        r = np.sqrt(zz**2 + rr**2)
        cos_theta = zz / r
        self._r = r
        self._legendre = [eval_legendre(l, cos_theta) for l in range(l_max + 1)]
        self._moment_kernels = [r**l * p for l, p in enumerate(self._legendre)]

        beta = 1.0 / (2.0 * ref_width**2)
        self._ref_density = []
        self._ref_potential = []
        for l in range(l_max + 1):
            c_l = 1.0 / (
                (4.0 * math.pi / (2 * l + 1))
                * 0.5
                * beta ** (-(l + 1.5))
                * gamma(l + 1.5)
            )
            g_l = c_l * r**l * np.exp(-beta * r**2) * self._legendre[l]
            inner = (
                0.5 * beta ** (-(l + 1.5)) * gammainc(l + 1.5, beta * r**2) * gamma(l + 1.5)
            )
            outer = np.exp(-beta * r**2) / (2.0 * beta)
            v_l = (
                (4.0 * math.pi / (2 * l + 1))
                * c_l
                * (inner / r ** (l + 1) + r**l * outer)
            )
            self._ref_density.append(g_l)
            self._ref_potential.append(v_l * self._legendre[l])

        self._quad_w = grid.spec.dz * grid.rho_weights
        self.last_residual = 0.0

    def moments(self, n_total: np.ndarray) -> np.ndarray:
        """Axial multipole moments Q_l = int n r^l P_l(cos theta) dV, l = 0..l_max."""
        return np.array(
            [float(np.sum(self._quad_w * n_total * k)) for k in self._moment_kernels]
        )

    def solve(self, n_total: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Potential of the charge density n (positive), i.e. laplacian V = -4 pi n."""
        g = self.grid
        if n_total.shape != g.shape:
            raise ValueError(f"density shape {n_total.shape} does not match grid {g.shape}")

        q_l = self.moments(n_total)
        remainder = n_total.astype(float).copy()
        v_long = np.zeros(g.shape)
        for l in range(self.l_max + 1):
            remainder -= q_l[l] * self._ref_density[l]
            v_long += q_l[l] * self._ref_potential[l]

        # (-D2z + |mu_k|) w_k = 4 pi * remainder_hat_k in the radial eigenbasis
        b = 4.0 * math.pi * (remainder * g.sqrt_w) @ self._u
        w_hat = np.empty_like(b)
        for k in range(b.shape[1]):
            w_hat[:, k] = cho_solve_banded((self._factors[k], False), b[:, k])

        # residual of the linear solve (direct method: roundoff level)
        res = 0.0
        b_norm = float(np.linalg.norm(b))
        if b_norm > 0.0:
            qo = self.grid.spec.fd_order
            stencil2 = -2.0 * g.z_stencil
            ax = np.zeros_like(w_hat)
            ax += (-stencil2[0] - self._mu[None, :]) * w_hat
            for j in range(1, qo + 1):
                ax[j:, :] += -stencil2[j] * w_hat[:-j, :]
                ax[:-j, :] += -stencil2[j] * w_hat[j:, :]
            res = float(np.linalg.norm(ax - b)) / b_norm
        self.last_residual = res
        if res > tol:
            raise RuntimeError(f"Hartree solve residual {res:.3e} exceeds tolerance {tol:.1e}")

        w_val = (w_hat @ self._u.T) / g.sqrt_w
        return w_val + v_long


_SOLVERS: dict[int, HartreeSolver] = {}


def solve_hartree(density: SpinDensity, grid: Grid, tol: float = 1e-10) -> np.ndarray:
    """Hartree potential of the total density (convenience wrapper, caches per grid)."""
    solver = _SOLVERS.get(id(grid))
    if solver is None or solver.grid is not grid:
        solver = HartreeSolver(grid)
        _SOLVERS.clear()
        _SOLVERS[id(grid)] = solver
    return solver.solve(density.total, tol=tol)
