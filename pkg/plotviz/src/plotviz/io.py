"""Readers for the runner's CSV schemas, with explicit validation errors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    pass


TRACE_REQUIRED = ("time_au", "E_t")
YIELD_REQUIRED = (
    "intensity_Wcm2",
    "wavelength_nm",
    "molecule",
    "occupation",
    "P0",
    "P1",
    "P2plus",
)


@dataclass
class TraceFile:
    path: str
    times: np.ndarray
    field: np.ndarray
    labels: list
    populations: np.ndarray  # (n_samples, n_orbitals)


@dataclass
class YieldSeries:
    molecule: str
    occupation: str
    intensities: np.ndarray
    p1: np.ndarray


def read_trace(path) -> TraceFile:
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    for col in TRACE_REQUIRED:
        if col not in header:
            raise SchemaError(f"{path}: missing required column {col!r}")
    pop_idx = [i for i, h in enumerate(header) if h.startswith("N_")]
    if not pop_idx:
        raise SchemaError(f"{path}: no orbital population columns (N_<label>)")
    labels = [header[i][2:] for i in pop_idx]
    t_idx = header.index("time_au")
    e_idx = header.index("E_t")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
        try:
            rows.append([float(parts[t_idx]), float(parts[e_idx])]
                        + [float(parts[i]) for i in pop_idx])
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric value")
    data = np.array(rows)
    times = data[:, 0]
    if np.any(np.diff(times) <= 0):
        raise SchemaError(f"{path}: time_au must be strictly increasing")
    return TraceFile(
        path=str(path), times=times, field=data[:, 1], labels=labels,
        populations=data[:, 2:],
    )


def read_yields(paths) -> list:
    """Parse one or more yield CSVs into per-(molecule, occupation) series."""
    series: dict = {}
    for path in paths:
        path = Path(path)
        lines = path.read_text().strip().splitlines()
        if not lines:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in lines[0].split(",")]
        for col in YIELD_REQUIRED:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        idx = {col: header.index(col) for col in YIELD_REQUIRED}
        for lineno, line in enumerate(lines[1:], start=2):
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                intensity = float(parts[idx["intensity_Wcm2"]])
                p1 = float(parts[idx["P1"]])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric value")
            key = (parts[idx["molecule"]], parts[idx["occupation"]])
            series.setdefault(key, []).append((intensity, p1))
    out = []
    for (mol, occ), rows in sorted(series.items()):
        rows.sort()
        out.append(
            YieldSeries(
                molecule=mol,
                occupation=occ,
                intensities=np.array([r[0] for r in rows]),
                p1=np.array([r[1] for r in rows]),
            )
        )
    return out
