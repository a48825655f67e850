"""Hybrid cylindrical grid: finite differences along z, a Laguerre mesh along rho.

Orbitals are stored as complex arrays of shape (n_z, n_rho) holding the value of
the 3D wavefunction on the phi = 0 half-plane; the azimuthal dependence
exp(i*m*phi)/sqrt(2*pi) is treated analytically, so |values|^2 is directly the
3D density contribution and the grid inner product is

    <f|g> = dz * sum_z sum_i w_i * conj(f) * g

with radial weights ``w_i`` that already contain the 2*pi*rho volume factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import eval_laguerre, roots_laguerre

SPINS = ("up", "down")


def laguerre_nodes_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw Gauss-Laguerre nodes and weights (roots of L_n, weight e^{-x})."""
    if n < 1:
        raise ValueError(f"need at least one radial point, got {n}")
    x, w = roots_laguerre(n)
    return x, w


def fd_second_derivative_coeffs(half_width: int, dz: float) -> np.ndarray:
    """Central finite-difference coefficients for d^2/dz^2.

    Returns the symmetric half [c_0, c_1, ..., c_q] such that
    f''(z_i) ~ c_0 f_i + sum_j c_j (f_{i+j} + f_{i-j}), accurate to O(dz^{2q}).
    """
    q = half_width
    if q < 1:
        raise ValueError("stencil half-width must be >= 1")
    offsets = np.arange(-q, q + 1, dtype=float)
    # match Taylor expansions: sum_j c_j j^p = p! * delta_{p,2} / dz^2
    a = np.vander(offsets, 2 * q + 1, increasing=True).T
    b = np.zeros(2 * q + 1)
    b[2] = 2.0
    coeffs = np.linalg.solve(a, b) / dz**2
    half = coeffs[q:].copy()
    # enforce exact symmetry and a vanishing row sum (derivative of a constant)
    half[0] = -2.0 * half[1:].sum()
    return half


@dataclass(frozen=True)
class GridSpec:
    """Discretization parameters for the cylindrical (z, rho) grid."""

    n_z: int
    dz: float
    n_rho: int
    h_rho: float
    fd_order: int = 2  # stencil half-width; accuracy O(dz^{2*fd_order})

    def __post_init__(self):
        if self.n_z < 3 or self.n_z % 2 == 0:
            raise ValueError(f"n_z must be odd and >= 3, got {self.n_z}")
        if self.dz <= 0:
            raise ValueError(f"dz must be positive, got {self.dz}")
        if self.n_rho < 1:
            raise ValueError(f"n_rho must be >= 1, got {self.n_rho}")
        if self.h_rho <= 0:
            raise ValueError(f"h_rho must be positive, got {self.h_rho}")
        if self.fd_order < 1:
            raise ValueError(f"fd_order must be >= 1, got {self.fd_order}")

    @property
    def z_half_extent(self) -> float:
        return 0.5 * (self.n_z - 1) * self.dz


@dataclass
class Grid:
    """Built grid with kinetic operators; immutable after construction."""

    spec: GridSpec
    z_points: np.ndarray
    rho_points: np.ndarray
    rho_weights: np.ndarray          # quadrature weights incl. the 2*pi*rho volume factor
    laguerre_x: np.ndarray           # unscaled nodes (roots of L_{n_rho})
    laguerre_w: np.ndarray           # unscaled Gauss-Laguerre weights
    z_stencil: np.ndarray            # symmetric half of the -1/2 d^2/dz^2 stencil
    kinetic_z: sp.csr_matrix         # banded -1/2 d^2/dz^2 with hard-wall edges
    kinetic_rho: dict = field(default_factory=dict)       # m -> value-space radial block
    kinetic_rho_sym: dict = field(default_factory=dict)   # m -> symmetric block (c-space)
    sqrt_w: np.ndarray = None        # sqrt(rho_weights), value <-> c-space scaling

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.n_z, self.spec.n_rho)

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """Grid inner product <f|g> with the cylindrical measure."""
        return self.spec.dz * np.sum(np.conj(f) * g * self.rho_weights)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.inner(f, f).real))

    def to_coeff(self, values: np.ndarray) -> np.ndarray:
        """Scale node values so the plain l2 norm equals the grid norm."""
        return values * (self.sqrt_w * np.sqrt(self.spec.dz))

    def from_coeff(self, coeff: np.ndarray) -> np.ndarray:
        return coeff / (self.sqrt_w * np.sqrt(self.spec.dz))

    def parity_flip(self, f: np.ndarray) -> np.ndarray:
        """Apply z -> -z (the grid maps to itself exactly)."""
        return f[::-1, :]


@dataclass
class Orbital:
    """One Kohn-Sham spin-orbital on the grid."""

    values: np.ndarray     # complex, shape (n_z, n_rho)
    spin: str              # "up" | "down"
    m: int                 # azimuthal quantum number (0 for sigma, +-1 for pi)
    label: str = ""        # symmetry tag, e.g. "3sg", "1pu"
    energy: float = 0.0

    def __post_init__(self):
        if self.spin not in SPINS:
            raise ValueError(f"spin must be one of {SPINS}, got {self.spin!r}")
        if abs(self.m) > 1:
            raise ValueError(f"|m| > 1 is not supported, got m={self.m}")


def _lagrange_derivative_matrix(x: np.ndarray) -> np.ndarray:
    """D[k, i] = P_i'(x_k) for the Lagrange cardinal polynomials on Laguerre roots."""
    n = len(x)
    # L_n'(x_i) = -n * L_{n-1}(x_i) / x_i at a root of L_n
    lp = -n * eval_laguerre(n - 1, x) / x
    d = np.zeros((n, n))
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (lp[:, None] / lp[None, :]) / diff
    np.fill_diagonal(d, (x - 1.0) / (2.0 * x))
    return d


def _radial_kinetic_sym(x: np.ndarray, lam: np.ndarray, h: float) -> np.ndarray:
    """Symmetric m=0 radial kinetic block -1/2 rho^-1 d_rho(rho d_rho) in c-space.

    Matrix elements are Gauss-Laguerre quadratures of derivative overlaps; the
    integrands are polynomials of degree <= 2*n-1 times e^{-x}, so the n-point
    rule is exact and the result is Hermitian by construction.
    """
    d = _lagrange_derivative_matrix(x)
    q = d - 0.5 * np.eye(len(x))          # Q_i(x_k) = P_i'(x_k) - P_i(x_k)/2
    a = np.sqrt(lam * x)[:, None] * q     # A[k, i] = sqrt(lam_k x_k) Q_i(x_k)
    t = (0.5 / h**2) * (a.T @ a) / np.sqrt(lam * x)[:, None] / np.sqrt(lam * x)[None, :]
    return 0.5 * (t + t.T)


def build_grid(spec: GridSpec) -> Grid:
    """Construct the grid, quadrature weights and Hermitian kinetic blocks."""
    n_z, dz = spec.n_z, spec.dz
    half = (n_z - 1) // 2
    z = dz * (np.arange(n_z) - half)

    x, lam = laguerre_nodes_weights(spec.n_rho)
    h = spec.h_rho
    rho = h * x
    # fold 2*pi*rho d_rho into the stored weights: integrate(F) = dz*sum w_i F_i
    w = 2.0 * np.pi * h**2 * lam * np.exp(x) * x
    if not (np.all(np.diff(rho) > 0) and np.all(rho > 0) and np.all(w > 0)):
        raise ValueError("radial mesh must be strictly positive and increasing")

    stencil = -0.5 * fd_second_derivative_coeffs(spec.fd_order, dz)
    offsets = list(range(-spec.fd_order, spec.fd_order + 1))
    bands = [np.full(n_z, stencil[abs(k)]) for k in offsets]
    kin_z = sp.diags(bands, offsets, shape=(n_z, n_z), format="csr")

    t_sym = _radial_kinetic_sym(x, lam, h)
    centrifugal = 0.5 / rho**2
    sqrt_w = np.sqrt(w)
    kin_rho_sym = {0: t_sym, 1: t_sym + np.diag(centrifugal)}
    # value-space blocks: similarity transform by the sqrt of the radial weights
    kin_rho = {
        m: (t / sqrt_w[:, None]) * sqrt_w[None, :] for m, t in kin_rho_sym.items()
    }

    return Grid(
        spec=spec,
        z_points=z,
        rho_points=rho,
        rho_weights=w,
        laguerre_x=x,
        laguerre_w=lam,
        z_stencil=stencil,
        kinetic_z=kin_z,
        kinetic_rho=kin_rho,
        kinetic_rho_sym=kin_rho_sym,
        sqrt_w=sqrt_w,
    )


def integrate(field_values: np.ndarray, grid: Grid) -> float:
    """Integral of a real field over the full cylindrical volume."""
    if field_values.shape != grid.shape:
        raise ValueError(
            f"field shape {field_values.shape} does not match grid {grid.shape}"
        )
    return float(grid.spec.dz * np.sum(field_values * grid.rho_weights))


def apply_kinetic(orbital: Orbital, grid: Grid) -> np.ndarray:
    """Apply -1/2 nabla^2 (with the m^2/(2 rho^2) centrifugal term) to an orbital."""
    v = orbital.values
    if v.shape != grid.shape:
        raise ValueError(f"orbital shape {v.shape} does not match grid {grid.shape}")
    m = abs(orbital.m)
    return grid.kinetic_z @ v + v @ grid.kinetic_rho[m].T


def apply_kinetic_z(values: np.ndarray, grid: Grid) -> np.ndarray:
    """The -1/2 d^2/dz^2 part alone (hard wall at the grid edges)."""
    return grid.kinetic_z @ values
