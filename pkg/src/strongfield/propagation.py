"""Real-time propagation of the Kohn-Sham orbitals through a laser pulse.

Each step applies the Krylov (Lanczos) approximation of exp(-i H dt) to every
active orbital. Self-consistency in time uses one predictor pass: the density
is advanced half a step with the current potential, the electrostatic part of
V_eff is rebuilt at the midpoint, and the full step is taken from the original
orbitals with the midpoint Hamiltonian. All orbitals are stepped together as a
batch; the Hamiltonians differ only by the diagonal (spin of the exchange
potential, centrifugal term), so the kinetic work is shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import _kernels
from .grid import Grid, Orbital
from .groundstate import GroundState, OrbitalSet
from .observables import AnalysisBox, PopulationTrace
from .potentials import (
    HartreeSolver,
    LaserPulse,
    MoleculeSpec,
    SpinDensity,
    eval_ionic,
    eval_xlda,
    laser_amplitude,
)

_BREAKDOWN = 1e-13


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AbsorberSpec:
    """Smooth cos^p mask outside the analysis region; 1 inside the onset."""

    onset_z: float
    onset_rho: float
    exponent: float = 0.125

    def __post_init__(self):
        if self.onset_z <= 0 or self.onset_rho <= 0:
            raise ValueError("absorber onsets must be positive")
        if self.exponent <= 0:
            raise ValueError("absorber exponent must be positive")

    def mask(self, grid: Grid) -> np.ndarray:
        def ramp(coord, onset, edge):
            m = np.ones_like(coord)
            if onset < edge:
                out = coord > onset
                arg = 0.5 * math.pi * (coord[out] - onset) / (edge - onset)
                m[out] = np.clip(np.cos(arg), 0.0, 1.0) ** self.exponent
            return m

        mz = ramp(np.abs(grid.z_points), self.onset_z, grid.z_points[-1])
        mr = ramp(grid.rho_points, self.onset_rho, grid.rho_points[-1])
        return mz[:, None] * mr[None, :]

    def validate_outside(self, box: AnalysisBox) -> None:
        if self.onset_z <= box.z_half_extent or self.onset_rho <= box.rho_extent:
            raise ValueError(
                f"absorber onset (z={self.onset_z}, rho={self.onset_rho}) must lie "
                f"strictly outside the analysis box (z={box.z_half_extent}, "
                f"rho={box.rho_extent})"
            )


@dataclass(frozen=True)
class PropagatorSpec:
    dt: float
    krylov_order: int = 18
    update_scheme: str = "midpoint"
    absorber: AbsorberSpec | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.krylov_order < 2:
            raise ValueError("krylov_order must be >= 2")
        if self.update_scheme not in ("midpoint", "frozen"):
            raise ValueError(f"unknown update scheme {self.update_scheme!r}")


@dataclass(frozen=True)
class FreezeMask:
    """Labels of the spin-orbitals that respond to the field; None = all."""

    active_labels: tuple | None = None

    def flags(self, orbital_set: OrbitalSet) -> np.ndarray:
        if self.active_labels is None:
            return np.ones(len(orbital_set), dtype=bool)
        active = set(self.active_labels)
        flags = np.array(
            [
                (o.label in active) or (f"{o.label}.{o.spin}" in active)
                for o in orbital_set.orbitals
            ]
        )
        if not flags.any():
            raise ValueError(f"freeze mask {self.active_labels} leaves no active orbital")
        return flags


def apply_absorber(orbital: Orbital, absorber: AbsorberSpec, grid: Grid) -> Orbital:
    """Multiply by the absorber mask; the removed norm is the caller's to tally."""
    return Orbital(
        values=orbital.values * absorber.mask(grid),
        spin=orbital.spin,
        m=orbital.m,
        label=orbital.label,
        energy=orbital.energy,
    )


# ---------------------------------------------------------------------------
# batched Lanczos exponential
# ---------------------------------------------------------------------------

def _apply_h_batch(c: np.ndarray, vdiag: np.ndarray, grid: Grid) -> np.ndarray:
    """H c for a batch, in coefficient space: z stencil + radial block + diagonal."""
    s = grid.z_stencil
    out = s[0] * c + vdiag * c
    for j in range(1, len(s)):
        out[:, j:, :] += s[j] * c[:, :-j, :]
        out[:, :-j, :] += s[j] * c[:, j:, :]
    out += c @ grid.kinetic_rho_sym[0]
    return out


def lanczos_expm_batch(
    c0: np.ndarray, vdiag: np.ndarray, grid: Grid, dt: float, order: int,
    reorth: bool = True,
) -> np.ndarray:
    """Apply exp(-i H dt) to each orbital of the batch via its Krylov subspace.

    One full reorthogonalization pass keeps per-step norm drift at roundoff;
    predictor half-steps (whose only product is a density estimate) may turn
    it off. Happy breakdown (an exactly invariant subspace) truncates that
    orbital's recursion; a non-finite recurrence raises PropagationError.
    """
    if _kernels.HAVE_NUMBA:
        basis, alpha, beta, eff, norm0, ok = _kernels.lanczos_iterate(
            np.ascontiguousarray(c0),
            np.ascontiguousarray(vdiag),
            grid.z_stencil,
            grid.kinetic_rho_sym[0],
            order,
            _BREAKDOWN,
            reorth,
        )
        if not ok.all():
            raise PropagationError("Krylov recurrence lost finiteness")
        out = np.zeros_like(c0)
        for b in range(c0.shape[0]):
            if norm0[b] == 0.0:
                continue
            d = int(eff[b])
            vals, vecs = eigh_tridiagonal(alpha[b, :d], beta[b, : d - 1])
            u = vecs @ (np.exp(-1j * vals * dt) * vecs[0]) * norm0[b]
            out[b] = np.tensordot(u, basis[b, :d], axes=(0, 0))
        return out
    return _lanczos_expm_numpy(c0, vdiag, grid, dt, order, reorth)


def _lanczos_expm_numpy(
    c0: np.ndarray, vdiag: np.ndarray, grid: Grid, dt: float, order: int,
    reorth: bool = True,
) -> np.ndarray:
    nb = c0.shape[0]
    norms0 = np.sqrt(np.einsum("bij,bij->b", np.conj(c0), c0).real)
    live = norms0 > 0.0
    safe_norms = np.where(live, norms0, 1.0)

    basis = np.zeros((order,) + c0.shape, dtype=complex)
    alpha = np.zeros((order, nb))
    beta = np.zeros((max(order - 1, 1), nb))
    eff = np.full(nb, order, dtype=int)

    basis[0] = c0 / safe_norms[:, None, None]
    for j in range(order):
        w = _apply_h_batch(basis[j].copy(), vdiag, grid)
        alpha[j] = np.einsum("bij,bij->b", np.conj(basis[j]), w).real
        w -= alpha[j][:, None, None] * basis[j]
        if j > 0:
            w -= beta[j - 1][:, None, None] * basis[j - 1]
        if reorth:
            # full reorthogonalization against the existing basis
            proj = np.einsum("kbij,bij->kb", np.conj(basis[: j + 1]), w)
            w -= np.einsum("kb,kbij->bij", proj, basis[: j + 1])
        if j == order - 1:
            break
        b_j = np.sqrt(np.einsum("bij,bij->b", np.conj(w), w).real)
        if not np.all(np.isfinite(b_j)) or not np.all(np.isfinite(alpha[j])):
            raise PropagationError(f"Krylov recurrence lost finiteness at iteration {j}")
        grown = b_j > _BREAKDOWN
        newly_done = (~grown) & (eff == order)
        eff[newly_done] = j + 1
        beta[j] = np.where(grown, b_j, 0.0)
        scale = np.where(grown, b_j, 1.0)
        basis[j + 1] = np.where(grown[:, None, None], w / scale[:, None, None], 0.0)

    out = np.zeros_like(c0)
    for b in range(nb):
        if not live[b]:
            continue
        d = eff[b]
        vals, vecs = eigh_tridiagonal(alpha[:d, b], beta[: d - 1, b])
        phases = np.exp(-1j * vals * dt)
        u = vecs @ (phases * vecs[0, :]) * norms0[b]
        out[b] = np.tensordot(u, basis[:d, :, :, :][:, b], axes=(0, 0))
    return out


def _vdiag_batch(v_by_spin: dict, orbitals, grid: Grid) -> np.ndarray:
    cent = {0: 0.0, 1: 0.5 / grid.rho_points**2}
    parts = []
    for orb in orbitals:
        v = v_by_spin[orb.spin]
        m = abs(orb.m)
        parts.append(v if m == 0 else v + cent[1][None, :])
    return np.stack(parts)


def krylov_step(
    orbital_set: OrbitalSet,
    potential,
    grid: Grid,
    spec: PropagatorSpec,
    dt: float | None = None,
) -> OrbitalSet:
    """Advance every orbital of the set by one step under a fixed potential.

    ``potential`` is a PotentialStack assembled at the reference time. Pass a
    negative ``dt`` to step backwards.
    """
    step = spec.dt if dt is None else dt
    v_by_spin = {
        "up": potential.total("up", grid),
        "down": potential.total("down", grid),
    }
    c0 = np.stack([grid.to_coeff(o.values) for o in orbital_set.orbitals])
    vdiag = _vdiag_batch(v_by_spin, orbital_set.orbitals, grid)
    c1 = lanczos_expm_batch(c0, vdiag, grid, step, spec.krylov_order)
    new_orbs = [
        Orbital(values=grid.from_coeff(c1[i]), spin=o.spin, m=o.m, label=o.label,
                energy=o.energy)
        for i, o in enumerate(orbital_set.orbitals)
    ]
    return OrbitalSet(orbitals=new_orbs, weights=orbital_set.weights.copy())


# ---------------------------------------------------------------------------
# full propagation loop
# ---------------------------------------------------------------------------

class _Engine:
    """Stateful propagation workspace; one instance per run (resumable)."""

    def __init__(
        self,
        initial: GroundState,
        molecule: MoleculeSpec | None,
        grid: Grid,
        pulse: LaserPulse,
        spec: PropagatorSpec,
        freeze: FreezeMask,
        box: AnalysisBox,
        observer_stride: int,
    ):
        box.validate_inside_grid(grid)
        if spec.absorber is not None:
            spec.absorber.validate_outside(box)
        self.grid = grid
        self.pulse = pulse
        self.spec = spec
        self.box = box
        self.observer_stride = max(1, int(observer_stride))

        oset = initial.orbital_set
        self.spin_folded = _foldable(oset, freeze)
        if self.spin_folded:
            keep = [i for i, o in enumerate(oset.orbitals) if o.spin == "up"]
            oset = OrbitalSet(
                orbitals=[oset.orbitals[i] for i in keep],
                weights=2.0 * oset.weights[keep],
            )
        self.labels = _column_labels(oset)
        self.weights = oset.weights.copy()
        self.m_abs = np.array([abs(o.m) for o in oset.orbitals])
        self.spins = [o.spin for o in oset.orbitals]
        self.active = freeze.flags(oset)

        self.c = np.stack([grid.to_coeff(o.values) for o in oset.orbitals])
        self.template = oset.orbitals
        self._initial_values = [o.values for o in oset.orbitals]

        if molecule is not None:
            self.v_ion = eval_ionic(molecule, grid)
        else:
            raise ValueError("propagation requires the molecule for the ionic potential")
        self.hartree = HartreeSolver(grid)
        self.one_electron = initial.occupation.n_electrons == 1

        self.inv_measure = 1.0 / (grid.rho_weights[None, :] * grid.spec.dz)
        box_mask = box.interior_mask(grid)
        self.box_w = (grid.spec.dz * grid.rho_weights[None, :]) * box_mask
        self.mask = None if spec.absorber is None else spec.absorber.mask(grid)

        self.n_steps = math.ceil(pulse.duration / spec.dt)
        self.step_index = 0
        self.absorbed = np.zeros(len(oset))
        self.samples = []

        cent = 0.5 / grid.rho_points**2
        self.cent_rows = np.where(
            self.m_abs[:, None] == 1, cent[None, :], 0.0
        )  # (nb, n_rho)

        self._record()  # t = 0 sample

    # -- helpers ---------------------------------------------------------

    def _densities(self, c: np.ndarray) -> SpinDensity:
        dens = (np.abs(c) ** 2) * self.inv_measure[None, :, :]
        up = np.zeros(self.grid.shape)
        down = np.zeros(self.grid.shape)
        for i, spin in enumerate(self.spins):
            if spin == "up":
                up += self.weights[i] * dens[i]
            else:
                down += self.weights[i] * dens[i]
        if self.spin_folded:
            # folded sets carry both spins in the "up" slots
            half = 0.5 * (up + down)
            return SpinDensity(up=half, down=half)
        return SpinDensity(up=up, down=down)

    def _electrostatic(self, density: SpinDensity) -> dict:
        if self.one_electron:
            return {"up": self.v_ion, "down": self.v_ion}
        v_h = self.hartree.solve(density.total)
        vx_up, vx_down = eval_xlda(density)
        return {"up": self.v_ion + v_h + vx_up, "down": self.v_ion + v_h + vx_down}

    def _vdiag(self, v_es: dict, e_field: float) -> np.ndarray:
        laser = e_field * self.grid.z_points[:, None]
        nb = self.c.shape[0]
        out = np.empty((nb,) + self.grid.shape)
        for i, spin in enumerate(self.spins):
            out[i] = v_es[spin] + laser
            out[i] += self.cent_rows[i][None, :]
        return out

    def _bound_fractions(self, c: np.ndarray) -> np.ndarray:
        dens = (np.abs(c) ** 2) * self.inv_measure[None, :, :]
        return np.einsum("bij,ij->b", dens, self.box_w)

    def _record(self):
        t = self.step_index * self.spec.dt
        self.samples.append(
            (
                t,
                laser_amplitude(self.pulse, min(t, self.pulse.duration)),
                self._bound_fractions(self.c),
                self.absorbed.copy(),
            )
        )

    # -- main loop -------------------------------------------------------

    def run(self, until_step: int | None = None, checkpoint_cb=None, checkpoint_stride=0):
        grid, spec = self.grid, self.spec
        order = spec.krylov_order
        dt = spec.dt
        stop = self.n_steps if until_step is None else min(until_step, self.n_steps)
        act = self.active

        frozen_v_es = None
        if spec.update_scheme == "frozen":
            frozen_v_es = self._electrostatic(self._densities(self.c))

        while self.step_index < stop:
            t = self.step_index * dt
            if spec.update_scheme == "frozen":
                v_es = frozen_v_es
            else:
                density = self._densities(self.c)
                v_es = self._electrostatic(density)
                # predictor: half step with the current potential, rebuild V_eff
                vdiag = self._vdiag(v_es, laser_amplitude(self.pulse, t))
                c_half = self.c.copy()
                c_half[act] = lanczos_expm_batch(
                    self.c[act], vdiag[act], grid, 0.5 * dt, order, reorth=False
                )
                v_es = self._electrostatic(self._densities(c_half))
            vdiag = self._vdiag(v_es, laser_amplitude(self.pulse, t + 0.5 * dt))

            self.c[act] = lanczos_expm_batch(self.c[act], vdiag[act], grid, dt, order)

            if self.mask is not None:
                before = np.einsum("bij,bij->b", np.conj(self.c[act]), self.c[act]).real
                self.c[act] *= self.mask[None, :, :]
                after = np.einsum("bij,bij->b", np.conj(self.c[act]), self.c[act]).real
                self.absorbed[act] += before - after

            self.step_index += 1
            if self.step_index % self.observer_stride == 0 or self.step_index == self.n_steps:
                self._record()
            if checkpoint_cb is not None and checkpoint_stride > 0:
                if self.step_index % checkpoint_stride == 0 or self.step_index == self.n_steps:
                    checkpoint_cb(self)
        return self

    # -- checkpoint state --------------------------------------------------

    def state_arrays(self) -> dict:
        """Everything needed to resume the run bit-for-bit (c, tallies, samples)."""
        return {
            "step_index": np.array(self.step_index),
            "c": self.c,
            "absorbed": self.absorbed,
            "sample_t": np.array([s[0] for s in self.samples]),
            "sample_e": np.array([s[1] for s in self.samples]),
            "sample_bound": np.stack([s[2] for s in self.samples]),
            "sample_abs": np.stack([s[3] for s in self.samples]),
        }

    def restore(self, arrays: dict) -> "_Engine":
        self.step_index = int(arrays["step_index"])
        self.c = np.array(arrays["c"], dtype=complex)
        self.absorbed = np.array(arrays["absorbed"], dtype=float)
        self.samples = [
            (float(t), float(e), b.copy(), a.copy())
            for t, e, b, a in zip(
                arrays["sample_t"], arrays["sample_e"],
                arrays["sample_bound"], arrays["sample_abs"],
            )
        ]
        return self

    # -- outputs ---------------------------------------------------------

    def trace(self) -> PopulationTrace:
        times = np.array([s[0] for s in self.samples])
        field = np.array([s[1] for s in self.samples])
        bound = np.stack([s[2] for s in self.samples])
        absorbed = np.stack([s[3] for s in self.samples])
        return PopulationTrace(
            times=times,
            field=field,
            labels=self.labels,
            weights=self.weights.copy(),
            bound=bound,
            absorbed=absorbed,
        )

    def orbital_set(self) -> OrbitalSet:
        orbs = []
        weights = []
        for i, o in enumerate(self.template):
            # frozen orbitals stay bit-identical to their ground-state form
            values = (
                self.grid.from_coeff(self.c[i]) if self.active[i]
                else self._initial_values[i]
            )
            if self.spin_folded:
                # unfold: both spins share the propagated spatial orbital
                for spin in ("up", "down"):
                    orbs.append(Orbital(values=values, spin=spin, m=o.m,
                                        label=o.label, energy=o.energy))
                    weights.append(0.5 * self.weights[i])
            else:
                orbs.append(Orbital(values=values, spin=o.spin, m=o.m, label=o.label,
                                    energy=o.energy))
                weights.append(self.weights[i])
        return OrbitalSet(orbitals=orbs, weights=np.array(weights))


def _column_labels(oset: OrbitalSet) -> list:
    """Disambiguate per-spin columns only when both spins are present separately."""
    plain = [o.label for o in oset.orbitals]
    if len(set(plain)) == len(plain):
        return plain
    return [f"{o.label}.{o.spin}" for o in oset.orbitals]


def _foldable(oset: OrbitalSet, freeze: FreezeMask) -> bool:
    """True when the set is exactly spin-symmetric and the mask is spin-blind."""
    if freeze.active_labels is not None and any("." in lab for lab in freeze.active_labels):
        return False
    ups = {(o.label, abs(o.m)): i for i, o in enumerate(oset.orbitals) if o.spin == "up"}
    downs = {(o.label, abs(o.m)): i for i, o in enumerate(oset.orbitals) if o.spin == "down"}
    if set(ups) != set(downs) or len(ups) + len(downs) != len(oset.orbitals):
        return False
    for key, iu in ups.items():
        idn = downs[key]
        if oset.weights[iu] != oset.weights[idn]:
            return False
        if oset.orbitals[iu].values is not oset.orbitals[idn].values and not np.array_equal(
            oset.orbitals[iu].values, oset.orbitals[idn].values
        ):
            return False
    return True


def propagate(
    initial: GroundState,
    molecule: MoleculeSpec,
    grid: Grid,
    pulse: LaserPulse,
    spec: PropagatorSpec,
    freeze: FreezeMask | None = None,
    box: AnalysisBox | None = None,
    observer_stride: int = 10,
    checkpoint_cb=None,
    checkpoint_stride: int = 0,
) -> tuple[PopulationTrace, OrbitalSet]:
    """Propagate the ground state through the pulse; returns trace and final orbitals."""
    engine = _Engine(
        initial,
        molecule,
        grid,
        pulse,
        spec,
        freeze or FreezeMask(),
        box or AnalysisBox(),
        observer_stride,
    )
    engine.run(checkpoint_cb=checkpoint_cb, checkpoint_stride=checkpoint_stride)
    return engine.trace(), engine.orbital_set()
