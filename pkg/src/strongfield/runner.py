"""Scenario configuration, sweep orchestration, checkpoint/restart and CSV output.

Configuration files are flat ``key = value`` text under ``[section]`` headers
(full grammar in the README). Every run of a scenario is tracked in a JSON
manifest keyed by the canonical config hash, which makes re-runs idempotent
and interrupted runs resumable from their latest checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, units
from .grid import GridSpec, build_grid
from .groundstate import (
    OccupationSpec,
    ScfParams,
    load_ground_state,
    save_ground_state,
    scf_solve,
)
from .observables import AnalysisBox, PopulationTrace, IonYieldRecord, charge_state_split, expand_populations
from .potentials import MoleculeSpec, LaserPulse
from .propagation import AbsorberSpec, FreezeMask, PropagatorSpec, _Engine

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

def _parse_float_list(raw: str):
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _parse_str_list(raw: str):
    return [tok for tok in raw.replace(",", " ").split() if tok]


_SCHEMA = {
    "grid": {
        "n_z": int,
        "dz": float,
        "n_rho": int,
        "h_rho": float,
        "fd_order": int,
    },
    "molecule": {
        "species": str,
        "multiplicity": str,
        "bond_length": float,
    },
    "laser": {
        "wavelength_nm": float,
        "intensities": _parse_float_list,
        "n_cycles": int,
    },
    "propagation": {
        "dt": float,
        "krylov_order": int,
        "absorber": str,          # "on" | "off"
        "absorber_z_onset": float,
        "absorber_rho_onset": float,
        "absorber_exponent": float,
    },
    "box": {
        "z_half_extent": float,
        "rho_extent": float,
    },
    "scf": {
        "mixing": float,
        "max_iter": int,
        "energy_tol": float,
        "density_tol": float,
    },
    "run": {
        "out_dir": str,
        "observer_stride": int,
        "seed": int,
        "threads": int,
        "freeze": _parse_str_list,  # "all" or labels
    },
}

PRESETS = {
    # desk scale: reduced grid and pulse, minutes per run on a workstation
    "desk": {
        "grid": {"n_z": 641, "dz": 0.1, "n_rho": 20, "h_rho": 0.30, "fd_order": 2},
        "molecule": {"species": "N2", "multiplicity": "auto"},
        "laser": {"wavelength_nm": 390.0, "intensities": [1e14], "n_cycles": 6},
        "propagation": {
            "dt": 0.05,
            "krylov_order": 18,
            "absorber": "on",
            "absorber_z_onset": 25.5,
            "absorber_rho_onset": 16.0,
            "absorber_exponent": 0.125,
        },
        "box": {"z_half_extent": 20.0, "rho_extent": 12.0},
        "scf": {"mixing": 0.3, "max_iter": 300, "energy_tol": 1e-8, "density_tol": 1e-5},
        "run": {"out_dir": "runs", "observer_stride": 10, "seed": 0, "threads": 1,
                "freeze": ["all"]},
    },
    # converged parameters of the reference calculations
    "production": {
        "grid": {"n_z": 2291, "dz": 0.05, "n_rho": 43, "h_rho": 0.28838771, "fd_order": 2},
        "molecule": {"species": "N2", "multiplicity": "auto"},
        "laser": {"wavelength_nm": 390.0, "intensities": [1e14], "n_cycles": 24},
        "propagation": {
            "dt": 0.02,
            "krylov_order": 18,
            "absorber": "on",
            "absorber_z_onset": 51.5,
            "absorber_rho_onset": 40.0,
            "absorber_exponent": 0.125,
        },
        "box": {"z_half_extent": 20.0, "rho_extent": 12.0},
        "scf": {"mixing": 0.3, "max_iter": 400, "energy_tol": 1e-9, "density_tol": 1e-6},
        "run": {"out_dir": "runs", "observer_stride": 25, "seed": 0, "threads": 1,
                "freeze": ["all"]},
    },
}


@dataclass
class ScenarioConfig:
    grid_spec: GridSpec
    molecule: MoleculeSpec
    species: str
    multiplicity: str
    pulses: list
    prop_spec: PropagatorSpec
    box: AnalysisBox
    freeze: FreezeMask
    scf: ScfParams
    out_dir: Path
    observer_stride: int
    seed: int
    threads: int
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def occupation(self) -> OccupationSpec:
        return OccupationSpec.for_molecule(self.species, self.multiplicity)


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    path: Path
    runs: dict = field(default_factory=dict)

    def artifact_paths(self) -> list:
        out = []
        for info in self.runs.values():
            out.extend(info.get("artifacts", []))
        return out

    def save(self) -> None:
        payload = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "runs": self.runs,
        }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
        os.replace(tmp, self.path)

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(
            config_hash=data["config_hash"],
            code_version=data["code_version"],
            path=Path(path),
            runs=data["runs"],
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _raw_from_text(text: str) -> dict:
    """Parse section-headed key=value lines, tracking line numbers for errors."""
    raw = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            raw.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        parser = _SCHEMA[section][key]
        try:
            raw[section][key] = parser(value)
        except ConfigError:
            raise
        except Exception:
            raise ConfigError(f"line {lineno}: cannot parse {key} = {value!r}")
    return raw


def _merged(preset: str | None, overrides: dict) -> dict:
    base = {}
    source = PRESETS[preset if preset is not None else "desk"]
    for section, entries in source.items():
        base[section] = dict(entries)
    for section, entries in overrides.items():
        base.setdefault(section, {}).update(entries)
    return base


def parse_config(text: str, preset: str | None = None) -> ScenarioConfig:
    """Build a validated ScenarioConfig from config text over a preset base."""
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    raw = _merged(preset, _raw_from_text(text))

    g = raw["grid"]
    try:
        grid_spec = GridSpec(
            n_z=g["n_z"], dz=g["dz"], n_rho=g["n_rho"], h_rho=g["h_rho"],
            fd_order=g.get("fd_order", 2),
        )
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}")

    msec = raw["molecule"]
    species = msec["species"].upper().replace("_", "")
    try:
        molecule = MoleculeSpec.from_name(species)
        if "bond_length" in msec:
            molecule = MoleculeSpec(charges=molecule.charges, bond_length=msec["bond_length"])
    except ValueError as exc:
        raise ConfigError(f"[molecule] {exc}")
    multiplicity = msec.get("multiplicity", "auto")
    try:
        OccupationSpec.for_molecule(species, multiplicity)
    except ValueError as exc:
        raise ConfigError(f"[molecule] {exc}")

    lsec = raw["laser"]
    try:
        pulses = [
            LaserPulse(
                wavelength_nm=lsec["wavelength_nm"],
                intensity_wcm2=i,
                n_cycles=lsec["n_cycles"],
            )
            for i in lsec["intensities"]
        ]
    except ValueError as exc:
        raise ConfigError(f"[laser] {exc}")
    if not pulses:
        raise ConfigError("[laser] at least one intensity is required")

    psec = raw["propagation"]
    absorber = None
    if psec.get("absorber", "on") != "off":
        try:
            absorber = AbsorberSpec(
                onset_z=psec["absorber_z_onset"],
                onset_rho=psec["absorber_rho_onset"],
                exponent=psec.get("absorber_exponent", 0.125),
            )
        except ValueError as exc:
            raise ConfigError(f"[propagation] {exc}")
    try:
        prop_spec = PropagatorSpec(
            dt=psec["dt"], krylov_order=psec["krylov_order"], absorber=absorber
        )
    except ValueError as exc:
        raise ConfigError(f"[propagation] {exc}")

    bsec = raw["box"]
    try:
        box = AnalysisBox(z_half_extent=bsec["z_half_extent"], rho_extent=bsec["rho_extent"])
    except ValueError as exc:
        raise ConfigError(f"[box] {exc}")

    ssec = raw["scf"]
    try:
        scf = ScfParams(
            mixing=ssec["mixing"], max_iter=ssec["max_iter"],
            energy_tol=ssec["energy_tol"], density_tol=ssec["density_tol"],
        )
    except ValueError as exc:
        raise ConfigError(f"[scf] {exc}")

    rsec = raw["run"]
    freeze_tokens = rsec.get("freeze", ["all"])
    freeze = FreezeMask() if freeze_tokens == ["all"] else FreezeMask(tuple(freeze_tokens))

    cfg = ScenarioConfig(
        grid_spec=grid_spec,
        molecule=molecule,
        species=species,
        multiplicity=multiplicity,
        pulses=pulses,
        prop_spec=prop_spec,
        box=box,
        freeze=freeze,
        scf=scf,
        out_dir=Path(rsec.get("out_dir", "runs")),
        observer_stride=rsec.get("observer_stride", 10),
        seed=rsec.get("seed", 0),
        threads=rsec.get("threads", 1),
        raw=raw,
    )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ScenarioConfig) -> None:
    z_edge = cfg.grid_spec.z_half_extent
    if cfg.box.z_half_extent >= z_edge:
        raise ConfigError(
            f"analysis box z extent {cfg.box.z_half_extent} must be inside the grid "
            f"(half extent {z_edge})"
        )
    # radial edge requires the built mesh; approximate check deferred to runtime
    absorber = cfg.prop_spec.absorber
    if absorber is not None:
        try:
            absorber.validate_outside(cfg.box)
        except ValueError as exc:
            raise ConfigError(str(exc))
        if absorber.onset_z >= z_edge:
            raise ConfigError(
                f"absorber z onset {absorber.onset_z} must be inside the grid edge {z_edge}"
            )


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical config text: sorted sections and keys; parse -> serialize is stable."""
    lines = []
    for section in sorted(cfg.raw):
        lines.append(f"[{section}]")
        for key in sorted(cfg.raw[section]):
            value = cfg.raw[section][key]
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# scenario execution
# ---------------------------------------------------------------------------

def _run_id(cfg: ScenarioConfig, pulse: LaserPulse) -> str:
    mult = cfg.occupation.multiplicity
    return f"{cfg.species}_{mult}_{pulse.intensity_wcm2:.2e}".replace("+", "")


def _ground_state_path(cfg: ScenarioConfig) -> Path:
    mult = cfg.occupation.multiplicity
    return cfg.out_dir / f"ground_{cfg.species}_{mult}.npz"


def ensure_ground_state(cfg: ScenarioConfig, grid=None):
    """Solve (or load a cached) SCF ground state for the scenario."""
    if grid is None:
        grid = build_grid(cfg.grid_spec)
    path = _ground_state_path(cfg)
    if path.exists():
        try:
            return load_ground_state(path, grid), grid
        except ValueError:
            pass  # stale checkpoint from another grid: recompute
    state = scf_solve(cfg.molecule, cfg.occupation, grid, cfg.scf)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_ground_state(state, path)
    return state, grid


def _checkpoint_path(cfg: ScenarioConfig, run_id: str) -> Path:
    return cfg.out_dir / f"chk_{run_id}.npz"


def _save_run_checkpoint(engine: _Engine, path: Path, chash: str, run_id: str) -> None:
    header = {"version": CHECKPOINT_VERSION, "kind": "propagation", "config_hash": chash,
              "run_id": run_id}
    arrays = engine.state_arrays()
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, header=json.dumps(header), **arrays)
    os.replace(tmp, path)


def _execute_run(cfg: ScenarioConfig, pulse: LaserPulse, chash: str):
    """Propagate one sweep point; resumes from its checkpoint when present."""
    grid = build_grid(cfg.grid_spec)
    state, _ = ensure_ground_state(cfg, grid)
    run_id = _run_id(cfg, pulse)
    engine = _Engine(
        state, cfg.molecule, grid, pulse, cfg.prop_spec, cfg.freeze, cfg.box,
        cfg.observer_stride,
    )
    chk = _checkpoint_path(cfg, run_id)
    if chk.exists():
        with np.load(chk, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("config_hash") == chash and header.get("run_id") == run_id:
                engine.restore(data)
    steps_per_cycle = max(1, round(2.0 * math.pi / pulse.omega / cfg.prop_spec.dt))
    engine.run(
        checkpoint_cb=lambda e: _save_run_checkpoint(e, chk, chash, run_id),
        checkpoint_stride=steps_per_cycle,
    )
    trace = engine.trace()
    final = engine.orbital_set()
    record = yield_record(cfg, pulse, trace)
    return run_id, trace, record, final


def yield_record(cfg: ScenarioConfig, pulse: LaserPulse, trace: PopulationTrace) -> IonYieldRecord:
    expanded_final = expand_populations(trace.bound[-1], trace.weights)
    p0, p1, p2 = charge_state_split(np.clip(expanded_final, 0.0, 1.0))
    p1_max = 0.0
    for row in trace.bound:
        _, p1_t, _ = charge_state_split(np.clip(expand_populations(row, trace.weights), 0.0, 1.0))
        p1_max = max(p1_max, p1_t)
    return IonYieldRecord(
        intensity_wcm2=pulse.intensity_wcm2,
        wavelength_nm=pulse.wavelength_nm,
        molecule=cfg.species,
        occupation=cfg.occupation.multiplicity,
        p0=p0,
        p1=p1,
        p2plus=p2,
        p1_max=p1_max,
    )


def _pool_entry(args):
    serialized, preset, intensity, chash = args
    cfg = parse_config(serialized, preset=None)
    pulse = next(p for p in cfg.pulses if p.intensity_wcm2 == intensity)
    run_id, trace, record, _ = _execute_run(cfg, pulse, chash)
    return run_id, trace, record


def run_scenario(cfg: ScenarioConfig, resume_only: bool = False) -> RunManifest:
    """Execute every sweep point, emit traces and yields, update the manifest."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    manifest_path = cfg.out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = RunManifest.load(manifest_path)
        if manifest.config_hash != chash:
            manifest = RunManifest(config_hash=chash, code_version=__version__,
                                   path=manifest_path)
    else:
        manifest = RunManifest(config_hash=chash, code_version=__version__, path=manifest_path)

    (cfg.out_dir / "config.txt").write_text(serialize_config(cfg))

    pending = []
    for pulse in cfg.pulses:
        run_id = _run_id(cfg, pulse)
        info = manifest.runs.get(run_id)
        if info and info.get("status") == "complete" and all(
            Path(p).exists() for p in info.get("artifacts", [])
        ):
            continue  # manifest hit: no recomputation
        if resume_only and not _checkpoint_path(cfg, run_id).exists():
            continue
        pending.append(pulse)

    records = _load_existing_yields(cfg, manifest)
    serialized = serialize_config(cfg)

    def finish(run_id: str, trace, record):
        trace_path = cfg.out_dir / f"trace_{run_id}.csv"
        emit_trace_csv(trace, trace_path)
        records[run_id] = record
        manifest.runs[run_id] = {
            "status": "complete",
            "artifacts": [str(trace_path)],
        }
        manifest.save()

    try:
        if cfg.threads > 1 and len(pending) > 1:
            ensure_ground_state(cfg)  # shared across workers
            args = [(serialized, None, p.intensity_wcm2, chash) for p in pending]
            with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
                for run_id, trace, record in pool.map(_pool_entry, args):
                    finish(run_id, trace, record)
        else:
            for pulse in pending:
                run_id = _run_id(cfg, pulse)
                manifest.runs.setdefault(run_id, {"status": "incomplete", "artifacts": []})
                manifest.save()
                run_id, trace, record, _ = _execute_run(cfg, pulse, chash)
                finish(run_id, trace, record)
    except Exception:
        manifest.save()  # partial results preserved with status incomplete
        raise

    if records:
        yields_path = cfg.out_dir / "yields.csv"
        summary_path = cfg.out_dir / "summary.txt"
        emit_yields_csv(list(records.values()), yields_path)
        emit_summary(list(records.values()), summary_path)
        extra = [str(yields_path), str(summary_path)]
        for run_id in records:
            arts = manifest.runs[run_id]["artifacts"]
            for p in extra:
                if p not in arts:
                    arts.append(p)
    manifest.save()
    return manifest


def _load_existing_yields(cfg: ScenarioConfig, manifest: RunManifest) -> dict:
    """Rebuild yield records of already-complete runs from their trace files."""
    records = {}
    for pulse in cfg.pulses:
        run_id = _run_id(cfg, pulse)
        info = manifest.runs.get(run_id)
        if not info or info.get("status") != "complete":
            continue
        trace_path = cfg.out_dir / f"trace_{run_id}.csv"
        if trace_path.exists():
            trace = read_trace_csv(trace_path)
            records[run_id] = yield_record(cfg, pulse, trace)
    return records


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_trace_csv(trace: PopulationTrace, path) -> None:
    cols = [lab.replace(".", "_") for lab in trace.labels]
    lines = ["time_au,E_t," + ",".join(f"N_{c}" for c in cols) + ","
             + ",".join(f"w_{c}" for c in cols)]
    for i in range(len(trace.times)):
        row = [_fmt(trace.times[i]), _fmt(trace.field[i])]
        row += [_fmt(v) for v in trace.bound[i]]
        row += [_fmt(w) for w in trace.weights]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> PopulationTrace:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    n_cols = len(header)
    labels = [h[2:] for h in header if h.startswith("N_")]
    n_orb = len(labels)
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if data.shape[1] != n_cols:
        raise ValueError(f"malformed trace CSV {path}")
    times = data[:, 0]
    field = data[:, 1]
    bound = data[:, 2 : 2 + n_orb]
    weights = data[0, 2 + n_orb : 2 + 2 * n_orb]
    return PopulationTrace(
        times=times, field=field, labels=labels, weights=weights,
        bound=bound, absorbed=np.zeros_like(bound),
    )


def emit_yields_csv(records: list, path) -> None:
    records = sorted(records, key=lambda r: (r.molecule, r.occupation, r.intensity_wcm2))
    lines = ["intensity_Wcm2,wavelength_nm,molecule,occupation,P0,P1,P2plus,P1_max"]
    for r in records:
        lines.append(
            ",".join(
                [
                    _fmt(r.intensity_wcm2),
                    _fmt(r.wavelength_nm),
                    r.molecule,
                    r.occupation,
                    _fmt(r.p0),
                    _fmt(r.p1),
                    _fmt(r.p2plus),
                    _fmt(r.p1_max),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def emit_summary(records: list, path) -> None:
    """Plain-text ion-yield table per molecule/occupation, keyed by intensity."""
    by_series = {}
    for r in records:
        by_series.setdefault((r.molecule, r.occupation), []).append(r)
    lines = ["Ion yields P1 at end of pulse", "=" * 46]
    for (mol, occ), rows in sorted(by_series.items()):
        lines.append(f"\n{mol} ({occ}), lambda = {rows[0].wavelength_nm:g} nm")
        lines.append(f"{'I (W/cm^2)':>14} {'P1':>12} {'P0':>12} {'P2+':>12}")
        for r in sorted(rows, key=lambda r: r.intensity_wcm2):
            lines.append(
                f"{r.intensity_wcm2:14.3e} {r.p1:12.7f} {r.p0:12.7f} {r.p2plus:12.7f}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def emit_results(traces: dict, records: list, out_dir, manifest: RunManifest) -> list:
    """Write trace CSVs plus the yield table; returns the emitted paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    try:
        for run_id, trace in traces.items():
            p = out_dir / f"trace_{run_id}.csv"
            emit_trace_csv(trace, p)
            paths.append(str(p))
            manifest.runs.setdefault(run_id, {"status": "complete", "artifacts": []})
            if str(p) not in manifest.runs[run_id]["artifacts"]:
                manifest.runs[run_id]["artifacts"].append(str(p))
        if records:
            p = out_dir / "yields.csv"
            emit_yields_csv(records, p)
            paths.append(str(p))
            s = out_dir / "summary.txt"
            emit_summary(records, s)
            paths.append(str(s))
    except OSError as exc:
        manifest.save()
        raise IOError(f"failed to emit results: {exc}") from exc
    manifest.save()
    return paths
