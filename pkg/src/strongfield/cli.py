"""Command-line entry point: ground / run / resume / report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import units
from .grid import build_grid
from .groundstate import OccupationSpec, ScfError, scf_solve
from .propagation import PropagationError
from .runner import (
    ConfigError,
    RunManifest,
    emit_summary,
    emit_yields_csv,
    parse_config,
    run_scenario,
    yield_record,
    read_trace_csv,
    _run_id,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _load_config(args) -> "ScenarioConfig":
    text = ""
    if args.config:
        text = Path(args.config).read_text()
    cfg = parse_config(text, preset=args.preset)
    # keep raw in sync so serialize/hash reflect the effective configuration
    if args.out:
        cfg.out_dir = Path(args.out)
        cfg.raw["run"]["out_dir"] = str(args.out)
    if args.threads:
        cfg.threads = args.threads
        cfg.raw["run"]["threads"] = args.threads
    return cfg


def cmd_ground(args) -> int:
    cfg = _load_config(args)
    grid = build_grid(cfg.grid_spec)
    neutral = scf_solve(cfg.molecule, cfg.occupation, grid, cfg.scf)
    cation_occ = OccupationSpec.for_molecule(cfg.species, cfg.multiplicity, cation=True)
    cation = scf_solve(cfg.molecule, cation_occ, grid, cfg.scf)
    ip = (cation.total_energy - neutral.total_energy) * units.HARTREE_TO_EV
    print(f"molecule            : {cfg.species} ({cfg.occupation.multiplicity})")
    print(f"E(neutral)  [Ha]    : {neutral.total_energy:.6f}")
    print(f"E(cation)   [Ha]    : {cation.total_energy:.6f}")
    print(f"ionization potential: {ip:.2f} eV")
    print("occupied orbitals   :")
    for o, w in zip(neutral.orbitals, neutral.orbital_set.weights):
        print(f"  {o.label:5s} spin={o.spin:5s} m={o.m:+d} n_e={w:g} eps={o.energy:.6f} Ha")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    manifest = run_scenario(cfg)
    done = sum(1 for r in manifest.runs.values() if r["status"] == "complete")
    print(f"{done}/{len(manifest.runs)} runs complete; manifest at {manifest.path}")
    return EXIT_OK


def cmd_resume(args) -> int:
    cfg = _load_config(args)
    manifest = run_scenario(cfg, resume_only=False)
    print(f"resumed; manifest at {manifest.path}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args)
    manifest_path = cfg.out_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest at {manifest_path}", file=sys.stderr)
        return EXIT_IO
    manifest = RunManifest.load(manifest_path)
    records = []
    for pulse in cfg.pulses:
        run_id = _run_id(cfg, pulse)
        trace_path = cfg.out_dir / f"trace_{run_id}.csv"
        if trace_path.exists():
            records.append(yield_record(cfg, pulse, read_trace_csv(trace_path)))
    if not records:
        print("no completed traces to report", file=sys.stderr)
        return EXIT_IO
    emit_yields_csv(records, cfg.out_dir / "yields.csv")
    emit_summary(records, cfg.out_dir / "summary.txt")
    print((cfg.out_dir / "summary.txt").read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strongfield",
        description="Real-time Kohn-Sham dynamics of diatomics in strong laser fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [
        ("ground", cmd_ground, "SCF only; print total energies and the ionization potential"),
        ("run", cmd_run, "run the configured scenario sweep"),
        ("resume", cmd_resume, "resume an interrupted scenario from its checkpoints"),
        ("report", cmd_report, "regenerate yield tables from completed traces"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="path to a config file (overrides the preset)")
        p.add_argument("--preset", choices=["desk", "production"], default="desk")
        p.add_argument("--threads", type=int, default=0, help="sweep workers")
        p.add_argument("--out", help="output directory (overrides config)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScfError, PropagationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
