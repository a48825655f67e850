"""Real-time spin-density-functional dynamics of homonuclear diatomics in strong laser fields.

The package is organised around six building blocks:

- ``grid``:        hybrid finite-difference (z) / Laguerre-mesh (rho) cylindrical grid
- ``potentials``:  ionic, Hartree, exchange (xLDA) and laser contributions to V_eff
- ``groundstate``: self-consistent field solver and delta-SCF ionization potentials
- ``propagation``: Krylov exponential time stepping with absorbing boundaries
- ``observables``: analysis-box populations, ion probabilities, strong-field diagnostics
- ``runner``:      configuration, scenario sweeps, checkpoint/restart, CSV emission
"""

__version__ = "0.1.0"

from .grid import Grid, GridSpec, Orbital, build_grid, integrate, apply_kinetic

__all__ = [
    "Grid",
    "GridSpec",
    "Orbital",
    "build_grid",
    "integrate",
    "apply_kinetic",
    "__version__",
]
