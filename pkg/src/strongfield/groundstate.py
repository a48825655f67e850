"""Self-consistent field solution of the static Kohn-Sham problem.

Each (|m|, spin) channel is an independent eigenproblem of the effective
Hamiltonian; channels are diagonalized with shift-inverted implicitly
restarted Lanczos (ARPACK) and coupled only through the density update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import units
from .grid import Grid, GridSpec, Orbital, build_grid
from .potentials import (
    HartreeSolver,
    MoleculeSpec,
    SpinDensity,
    eval_centers,
    eval_ionic,
    eval_xlda,
    exchange_energy,
)

CHECKPOINT_VERSION = 1

# sigma/pi states per spin channel for the neutral ground configurations;
# channel keys are (|m|, spin), values are electrons per ascending eigenstate
_NEUTRAL_CHANNELS = {
    ("N2", "singlet"): {
        (0, "up"): [1, 1, 1, 1, 1],
        (0, "down"): [1, 1, 1, 1, 1],
        (1, "up"): [2],
        (1, "down"): [2],
    },
    ("O2", "triplet"): {
        (0, "up"): [1, 1, 1, 1, 1],
        (0, "down"): [1, 1, 1, 1, 1],
        (1, "up"): [2, 2],
        (1, "down"): [2],
    },
    # spin-paired 1pi_g pair placed in a single m channel
    ("O2", "singlet"): {
        (0, "up"): [1, 1, 1, 1, 1],
        (0, "down"): [1, 1, 1, 1, 1],
        (1, "up"): [2, 1],
        (1, "down"): [2, 1],
    },
    ("F2", "singlet"): {
        (0, "up"): [1, 1, 1, 1, 1],
        (0, "down"): [1, 1, 1, 1, 1],
        (1, "up"): [2, 2],
        (1, "down"): [2, 2],
    },
}

# spin-orbital removed from the neutral configuration for the +1 cation.
# For O2/F2 this is the 1pi_g level. For N2 the reference ionization potential
# corresponds to a 1pi_u hole (the 3sigma_g/1pi_u valence ordering of xLDA is
# marginal and code-dependent); the sigma-hole cation remains reachable through
# a custom OccupationSpec.
_CATION_REMOVAL = {
    ("N2", "singlet"): (1, "down"),
    ("O2", "triplet"): (1, "up"),
    ("O2", "singlet"): (1, "down"),
    ("F2", "singlet"): (1, "down"),
}


@dataclass(frozen=True)
class OccupationEntry:
    label: str
    m: int
    spin: str
    occupation: int


@dataclass
class OccupationSpec:
    """Spin-orbital occupation list, organised into (|m|, spin) channels."""

    channels: dict
    multiplicity: str = "singlet"

    def __post_init__(self):
        for (m_abs, spin), weights in self.channels.items():
            if m_abs not in (0, 1) or spin not in ("up", "down"):
                raise ValueError(f"bad channel key {(m_abs, spin)}")
            if any(w < 1 or w > 2 for w in weights):
                raise ValueError("per-state weights must be 1 (one m value) or 2 (both)")
            if m_abs == 0 and any(w != 1 for w in weights):
                raise ValueError("sigma channels hold one electron per spin-orbital")

    @property
    def n_electrons(self) -> int:
        return int(sum(sum(w) for w in self.channels.values()))

    def entries(self) -> list[OccupationEntry]:
        """Explicit spin-orbital list (labels filled in after an SCF solve)."""
        out = []
        for (m_abs, spin), weights in sorted(self.channels.items()):
            for idx, w in enumerate(weights):
                ms = [0] if m_abs == 0 else ([+1, -1] if w == 2 else [+1])
                for m in ms:
                    out.append(OccupationEntry(label=f"state{idx}", m=m, spin=spin, occupation=1))
        return out

    @classmethod
    def for_molecule(cls, name: str, multiplicity: str = "auto", cation: bool = False):
        key = name.strip().upper().replace("_", "")
        if multiplicity == "auto":
            multiplicity = "triplet" if key == "O2" else "singlet"
        try:
            channels = {k: list(v) for k, v in _NEUTRAL_CHANNELS[(key, multiplicity)].items()}
        except KeyError:
            raise ValueError(f"no configuration for {name!r} with multiplicity {multiplicity!r}")
        if cation:
            ch = _CATION_REMOVAL[(key, multiplicity)]
            weights = channels[ch]
            weights[-1] -= 1
            if weights[-1] == 0:
                weights.pop()
        return cls(channels=channels, multiplicity=multiplicity)


@dataclass
class ScfParams:
    mixing: float = 0.3
    max_iter: int = 200
    energy_tol: float = 1e-8
    density_tol: float = 1e-7
    one_electron: bool = False
    # evaluate exchange on spin-averaged densities (restricted-style SCF)
    spin_restricted: bool = False

    def __post_init__(self):
        if not (0.0 < self.mixing <= 1.0):
            raise ValueError("mixing must lie in (0, 1]")
        if self.energy_tol <= 0 or self.density_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class OrbitalSet:
    """Unique spatial orbitals plus the number of electrons each one carries.

    Orbitals that are exact copies of one another (the two m = +-1 partners of
    a pi level, and the two spins of a closed shell when folded) are stored
    once with the corresponding weight.
    """

    orbitals: list[Orbital]
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.orbitals)

    def density(self, grid: Grid) -> SpinDensity:
        up = np.zeros(grid.shape)
        down = np.zeros(grid.shape)
        for orb, w in zip(self.orbitals, self.weights):
            target = up if orb.spin == "up" else down
            target += w * np.abs(orb.values) ** 2
        return SpinDensity(up=up, down=down)


@dataclass
class GroundState:
    orbital_set: OrbitalSet
    total_energy: float
    density: SpinDensity
    molecule: MoleculeSpec | None
    occupation: OccupationSpec
    grid_spec: GridSpec
    converged: bool
    n_iterations: int
    energy_history: list = field(default_factory=list)
    one_electron: bool = False

    @property
    def orbitals(self) -> list[Orbital]:
        return self.orbital_set.orbitals

    @property
    def orbital_energies(self) -> np.ndarray:
        return np.array([o.energy for o in self.orbitals])


class ScfError(RuntimeError):
    pass


def kinetic_operator(grid: Grid, m_abs: int) -> sp.csr_matrix:
    """Full kinetic matrix in coefficient space for one |m| channel."""
    n_z, n_rho = grid.shape
    return (
        sp.kron(grid.kinetic_z, sp.identity(n_rho), format="csr")
        + sp.kron(sp.identity(n_z), grid.kinetic_rho_sym[m_abs], format="csr")
    )


def _parity_resolve(grid: Grid, vecs: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Rotate (near-)degenerate eigenvectors into z-parity eigenstates."""
    n_states = vecs.shape[1]
    order = np.argsort(vals)
    vecs = vecs[:, order]
    vals = vals[order]
    shape = grid.shape
    i = 0
    while i < n_states:
        j = i + 1
        while j < n_states and vals[j] - vals[i] < 1e-5 * max(1.0, abs(vals[i])):
            j += 1
        if j - i > 1:
            block = vecs[:, i:j]
            flipped = np.stack(
                [block[:, k].reshape(shape)[::-1, :].ravel() for k in range(j - i)], axis=1
            )
            p_small = block.T @ flipped
            _, rot = np.linalg.eigh(0.5 * (p_small + p_small.T))
            vecs[:, i:j] = block @ rot
        i = j
    return vals, vecs


def _assign_labels(grid: Grid, m_abs: int, orbitals: list[Orbital]) -> None:
    """Name states by symmetry: count within each (sigma/pi, g/u) family."""
    counters = {}
    for orb in orbitals:
        v = orb.values
        flip = v[::-1, :]
        p = grid.inner(v, flip).real  # z-parity expectation, +-1 for parity eigenstates
        z_even = p > 0.0
        if m_abs == 0:
            family = "sg" if z_even else "su"
        else:
            # full inversion parity of a pi orbital is (z-parity) * (-1)
            family = "pu" if z_even else "pg"
        counters[family] = counters.get(family, 0) + 1
        orb.label = f"{counters[family]}{family}"


def solve_channel(
    grid: Grid,
    v_eff: np.ndarray,
    m_abs: int,
    n_states: int,
    sigma_shift: float,
    kinetic: sp.csr_matrix | None = None,
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Occupied eigenpairs of T + V for one channel; returns (energies, coeff vectors).

    With a ``reference`` block of previously occupied vectors, states are
    selected by maximum overlap with that subspace instead of strictly by
    energy. This pins hole configurations (cation SCF) that would otherwise
    flip between near-degenerate fillings from one iteration to the next.
    """
    if kinetic is None:
        kinetic = kinetic_operator(grid, m_abs)
    h = (kinetic + sp.diags(v_eff.ravel())).tocsc()
    k_solve = n_states if reference is None else n_states + 2
    k_solve = min(k_solve, h.shape[0] - 1)
    # fixed ARPACK start vector: keeps converged states reproducible bit-for-bit
    v0 = np.random.default_rng(1905).standard_normal(h.shape[0])
    try:
        vals, vecs = eigsh(h, k=k_solve, sigma=sigma_shift, which="LM", v0=v0)
    except Exception as exc:  # ARPACK failures surface with context
        raise ScfError(f"channel (|m|={m_abs}) eigensolve failed: {exc}") from exc
    vals, vecs = _parity_resolve(grid, vecs, vals)
    if reference is not None and k_solve > n_states:
        scores = np.sum(np.abs(reference.T @ vecs) ** 2, axis=0)
        picked = np.sort(np.argsort(scores)[::-1][:n_states])
        # ambiguous overlap (fresh start, drifting states): fall back to aufbau
        if scores[picked].min() < 0.5:
            picked = np.arange(n_states)
        vals, vecs = vals[picked], vecs[:, picked]
    return vals, vecs


def _initial_density(centers, grid: Grid, occupation: OccupationSpec) -> SpinDensity:
    """Superposition of nucleus-centred exponentials, split core/valence."""
    zz, rr = grid.z_points[:, None], grid.rho_points[None, :]
    n_by_spin = {"up": 0.0, "down": 0.0}
    for (m_abs, spin), weights in occupation.channels.items():
        n_by_spin[spin] += sum(weights)
    total = sum(n_by_spin.values())
    seed = np.zeros(grid.shape)
    for z_i, pos in centers:
        r = np.sqrt((zz - pos) ** 2 + rr**2)
        core = min(2.0, z_i)
        kap_c = max(z_i - 0.3, 1.0)
        kap_v = 1.25
        seed += core * kap_c**3 / np.pi * np.exp(-2.0 * kap_c * r)
        seed += (z_i - core) * kap_v**3 / np.pi * np.exp(-2.0 * kap_v * r)
    seed_total = max(float(np.sum(seed * grid.rho_weights) * grid.spec.dz), 1e-30)
    up = seed * (n_by_spin["up"] / seed_total)
    down = seed * (n_by_spin["down"] / seed_total)
    return SpinDensity(up=up, down=down)


def scf_solve(
    molecule: MoleculeSpec | None,
    occupation: OccupationSpec,
    grid: Grid,
    params: ScfParams,
    centers: list | None = None,
    reference: dict | None = None,
) -> GroundState:
    """Converge the Kohn-Sham ground state for the given occupation.

    ``centers`` overrides the molecule's nuclei (used by one-electron oracle
    setups with a single charge); exactly one of molecule/centers is required.

    ``reference`` maps (|m|, spin) channels to blocks of coefficient vectors;
    when given, occupied states are chosen by maximum overlap with (and then
    tracked from) that subspace instead of strictly by energy. Hole
    configurations in cation solves stay pinned this way instead of flipping
    between near-degenerate fillings.
    """
    if centers is None:
        if molecule is None:
            raise ValueError("either a molecule or explicit centers is required")
        centers = molecule.centers
        if occupation.n_electrons not in (
            molecule.n_electrons_neutral,
            molecule.n_electrons_neutral - 1,
        ):
            raise ScfError(
                f"occupation carries {occupation.n_electrons} electrons; molecule has "
                f"{molecule.n_electrons_neutral} (neutral) "
            )
    charges = [c for c, _ in centers]
    positions = [p for _, p in centers]
    v_ion = eval_centers(charges, positions, grid)

    kinetics = {m: kinetic_operator(grid, m) for m in {m for m, _ in occupation.channels}}
    hartree = None if params.one_electron else HartreeSolver(grid)

    density = _initial_density(centers, grid, occupation)
    z_max = max(charges)
    sigma_by_channel = {key: -0.6 * z_max**2 - 5.0 for key in occupation.channels}
    tracking = reference is not None
    reference_vecs: dict = dict(reference) if tracking else {}

    # closed-shell occupations stay spin-symmetric: solve one spin, mirror the other
    spin_symmetric = all(
        occupation.channels.get((m, "up")) == occupation.channels.get((m, "down"))
        for m in (0, 1)
    )

    e_prev = np.inf
    energy_history = []
    converged = False
    zero = np.zeros(grid.shape)
    n_iter = 0
    orbital_set = None
    e_total = np.nan
    alpha = params.mixing
    d_prev = np.inf
    worse_count = 0

    for n_iter in range(1, params.max_iter + 1):
        if params.one_electron:
            v_h = zero
            vx = (zero, zero)
            density_xc = density
        else:
            v_h = hartree.solve(density.total)
            if params.spin_restricted:
                avg = 0.5 * (density.up + density.down)
                density_xc = SpinDensity(up=avg, down=avg)
            else:
                density_xc = density
            vx = eval_xlda(density_xc)

        orbitals = []
        weights = []
        e_band = 0.0
        channel_order = sorted(
            occupation.channels.items(), key=lambda kv: (kv[0][0], kv[0][1] != "up")
        )
        for (m_abs, spin), occ_weights in channel_order:
            if spin_symmetric and spin == "down":
                mirrored = [o for o in orbitals if o.spin == "up" and abs(o.m) == m_abs]
                for k, w in enumerate(occ_weights):
                    src = mirrored[k]
                    orbitals.append(
                        Orbital(values=src.values, spin="down", m=src.m,
                                label=src.label, energy=src.energy)
                    )
                    weights.append(float(w))
                    e_band += w * src.energy
                continue
            v_eff = v_ion + v_h + (vx[0] if spin == "up" else vx[1])
            vals, vecs = solve_channel(
                grid, v_eff, m_abs, len(occ_weights), sigma_by_channel[(m_abs, spin)],
                kinetic=kinetics[m_abs],
                reference=reference_vecs.get((m_abs, spin)) if tracking else None,
            )
            sigma_by_channel[(m_abs, spin)] = vals[0] - 2.0
            if tracking:
                reference_vecs[(m_abs, spin)] = vecs
            channel_orbs = []
            for k, w in enumerate(occ_weights):
                values = grid.from_coeff(vecs[:, k].reshape(grid.shape)).astype(complex)
                orb = Orbital(values=values, spin=spin, m=0 if m_abs == 0 else 1,
                              energy=float(vals[k]))
                channel_orbs.append(orb)
                orbitals.append(orb)
                weights.append(float(w))
                e_band += w * vals[k]
            _assign_labels(grid, m_abs, channel_orbs)

        new_set = OrbitalSet(orbitals=orbitals, weights=np.array(weights))
        density_out = new_set.density(grid)

        # KS total energy with the input density that generated the eigenvalues
        if params.one_electron:
            e_total = e_band
        else:
            w_int = grid.spec.dz * grid.rho_weights
            e_hartree = 0.5 * float(np.sum(w_int * density.total * v_h))
            e_vxc = float(np.sum(w_int * (density.up * vx[0] + density.down * vx[1])))
            e_x = exchange_energy(density_xc, grid)
            e_total = e_band - e_hartree - e_vxc + e_x
        if molecule is not None:
            e_total += molecule.nuclear_repulsion
        elif len(centers) == 2:
            e_total += charges[0] * charges[1] / abs(positions[0] - positions[1])
        energy_history.append(e_total)

        # integrated |delta n| in electrons: well-scaled against nuclear peaks
        w_quad = grid.spec.dz * grid.rho_weights
        d_change = float(
            np.sum(w_quad * np.abs(density_out.up - density.up))
            + np.sum(w_quad * np.abs(density_out.down - density.down))
        )
        e_change = abs(e_total - e_prev)
        e_prev = e_total
        orbital_set = new_set

        if params.one_electron or (e_change < params.energy_tol and d_change < params.density_tol):
            converged = True
            density = density_out
            break

        # damp the mixing when the density residual stops shrinking (sloshing)
        if d_change > 0.97 * d_prev:
            worse_count += 1
            if worse_count >= 3:
                alpha = max(0.05, 0.5 * alpha)
                worse_count = 0
        else:
            worse_count = 0
        d_prev = d_change

        density = SpinDensity(
            up=(1.0 - alpha) * density.up + alpha * density_out.up,
            down=(1.0 - alpha) * density.down + alpha * density_out.down,
        )

    if not converged:
        raise ScfError(
            f"SCF did not converge in {params.max_iter} iterations "
            f"(last energy change {abs(energy_history[-1] - energy_history[-2]):.3e})"
        )

    return GroundState(
        orbital_set=orbital_set,
        total_energy=e_total,
        density=density,
        molecule=molecule,
        occupation=occupation,
        grid_spec=grid.spec,
        converged=converged,
        n_iterations=n_iter,
        energy_history=energy_history,
        one_electron=params.one_electron,
    )


def ks_energy(orbital_set: OrbitalSet, molecule: MoleculeSpec | None, grid: Grid,
              one_electron: bool = False) -> float:
    """Kohn-Sham energy of an arbitrary (possibly time-evolved) orbital set.

    E = sum_j w_j <psi_j|T|psi_j> + int n V_ion + E_H + E_x (+ E_nn); evaluated
    from the orbitals directly, not from stored eigenvalues.
    """
    from .grid import apply_kinetic

    w_int = grid.spec.dz * grid.rho_weights
    e_kin = 0.0
    for orb, w in zip(orbital_set.orbitals, orbital_set.weights):
        e_kin += w * grid.inner(orb.values, apply_kinetic(orb, grid)).real
    density = orbital_set.density(grid)
    if molecule is not None:
        v_ion = eval_ionic(molecule, grid)
        e_ext = float(np.sum(w_int * density.total * v_ion))
        e_nn = molecule.nuclear_repulsion
    else:
        e_ext = 0.0
        e_nn = 0.0
    if one_electron:
        return e_kin + e_ext + e_nn
    v_h = HartreeSolver(grid).solve(density.total)
    e_h = 0.5 * float(np.sum(w_int * density.total * v_h))
    return e_kin + e_ext + e_h + exchange_energy(density, grid) + e_nn


def total_energy(state: GroundState, molecule: MoleculeSpec | None, grid: Grid) -> float:
    """Kohn-Sham total energy recomputed from the converged state."""
    e_band = float(np.sum(state.orbital_set.weights * state.orbital_energies))
    density = state.density
    w_int = grid.spec.dz * grid.rho_weights
    if state.one_electron or np.all(density.total == 0.0):
        e = e_band
    else:
        solver = HartreeSolver(grid)
        v_h = solver.solve(density.total)
        vx = eval_xlda(density)
        e_hartree = 0.5 * float(np.sum(w_int * density.total * v_h))
        e_vxc = float(np.sum(w_int * (density.up * vx[0] + density.down * vx[1])))
        e = e_band - e_hartree - e_vxc + exchange_energy(density, grid)
    if molecule is not None:
        e += molecule.nuclear_repulsion
    return e


def channel_reference(state: GroundState, grid: Grid, occupation: OccupationSpec) -> dict:
    """Occupied coefficient vectors per channel, truncated to a target occupation.

    The cation SCF uses the neutral's occupied subspace (minus the removed
    HOMO, which is the top state of its channel) as the configuration to
    track.
    """
    by_channel: dict = {}
    for orb in state.orbitals:
        key = (abs(orb.m), orb.spin)
        by_channel.setdefault(key, []).append(grid.to_coeff(orb.values).real.ravel())
    out = {}
    for key, weights in occupation.channels.items():
        vecs = by_channel.get(key)
        if vecs is None:
            continue
        out[key] = np.stack(vecs[: len(weights)], axis=1)
    return out


def ionization_potential(
    molecule: MoleculeSpec,
    neutral_occ: OccupationSpec,
    cation_occ: OccupationSpec,
    grid: Grid,
    params: ScfParams,
) -> float:
    """Delta-SCF ionization potential in eV (hole pinned to the neutral's HOMO)."""
    if cation_occ.n_electrons != neutral_occ.n_electrons - 1:
        raise ValueError("cation occupation must remove exactly one spin-orbital")
    neutral = scf_solve(molecule, neutral_occ, grid, params)
    reference = channel_reference(neutral, grid, cation_occ)
    cation = scf_solve(molecule, cation_occ, grid, params, reference=reference)
    return (cation.total_energy - neutral.total_energy) * units.HARTREE_TO_EV


# ---------------------------------------------------------------------------
# ground-state checkpoints
# ---------------------------------------------------------------------------

def save_ground_state(state: GroundState, path) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "ground_state",
        "grid_spec": vars(state.grid_spec),
        "molecule": None
        if state.molecule is None
        else {"charges": list(state.molecule.charges), "bond_length": state.molecule.bond_length},
        "occupation": {
            "channels": [[m, s, list(w)] for (m, s), w in sorted(state.occupation.channels.items())],
            "multiplicity": state.occupation.multiplicity,
        },
        "total_energy": state.total_energy,
        "orbital_energies": [o.energy for o in state.orbitals],
        "orbital_labels": [o.label for o in state.orbitals],
        "orbital_spins": [o.spin for o in state.orbitals],
        "orbital_m": [o.m for o in state.orbitals],
        "weights": state.orbital_set.weights.tolist(),
        "converged": state.converged,
        "n_iterations": state.n_iterations,
        "one_electron": state.one_electron,
    }
    arrays = {f"orbital_{i}": o.values for i, o in enumerate(state.orbitals)}
    np.savez_compressed(path, header=json.dumps(header), **arrays)


def load_ground_state(path, grid: Grid) -> GroundState:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION or header.get("kind") != "ground_state":
            raise ValueError(f"unsupported checkpoint header in {path}")
        stored_spec = GridSpec(**header["grid_spec"])
        if stored_spec != grid.spec:
            raise ValueError(
                f"checkpoint grid {stored_spec} does not match requested grid {grid.spec}"
            )
        orbitals = []
        for i, (e, lab, spin, m) in enumerate(
            zip(
                header["orbital_energies"],
                header["orbital_labels"],
                header["orbital_spins"],
                header["orbital_m"],
            )
        ):
            orbitals.append(
                Orbital(values=data[f"orbital_{i}"], spin=spin, m=m, label=lab, energy=e)
            )
    occupation = OccupationSpec(
        channels={(m, s): list(w) for m, s, w in header["occupation"]["channels"]},
        multiplicity=header["occupation"]["multiplicity"],
    )
    molecule = None
    if header["molecule"] is not None:
        molecule = MoleculeSpec(
            charges=tuple(header["molecule"]["charges"]),
            bond_length=header["molecule"]["bond_length"],
        )
    orbital_set = OrbitalSet(orbitals=orbitals, weights=np.array(header["weights"]))
    return GroundState(
        orbital_set=orbital_set,
        total_energy=header["total_energy"],
        density=orbital_set.density(grid),
        molecule=molecule,
        occupation=occupation,
        grid_spec=grid.spec,
        converged=header["converged"],
        n_iterations=header["n_iterations"],
        one_electron=header.get("one_electron", False),
    )
