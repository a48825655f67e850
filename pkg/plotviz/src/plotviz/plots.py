"""Figure rendering: per-orbital populations vs time, ion yield vs intensity."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import TraceFile, YieldSeries, read_trace, read_yields

# stable ids inside SVG output so identical input gives identical bytes
matplotlib.rcParams["svg.hashsalt"] = "plotviz"

_GREEK = {"s": "σ", "p": "π"}
AU_TIME_FS = 0.02418884326586


def pretty_label(label: str) -> str:
    """'3sg' -> '3σ_g', '1pu.up' -> '1π_u ↑'. Unknown forms pass through."""
    spin = ""
    core = label
    for sep in (".", "_"):
        if sep in label:
            core, tail = label.split(sep, 1)
            if tail in ("up", "down"):
                spin = " ↑" if tail == "up" else " ↓"
            else:
                core = label
            break
    if len(core) >= 3 and core[0].isdigit() and core[1] in _GREEK and core[2] in "gu":
        return f"{core[0]}{_GREEK[core[1]]}$_{core[2]}${spin}"
    return label


def _save(fig, out_path) -> str:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if out_path.suffix == ".svg" else None
    fig.savefig(out_path, metadata=metadata)
    plt.close(fig)
    return str(out_path)


def plot_populations(trace_paths, out_path, floor: float = 1e-8) -> str:
    """One panel per trace file, one curve per orbital, logarithmic ordinate."""
    traces = [t if isinstance(t, TraceFile) else read_trace(t) for t in trace_paths]
    n = len(traces)
    fig, axes = plt.subplots(1, n, figsize=(5.2 * n, 4.0), squeeze=False, sharey=True)
    panel_tags = "abcdefgh"
    for k, (ax, tr) in enumerate(zip(axes[0], traces)):
        t_fs = tr.times * AU_TIME_FS
        for j, lab in enumerate(tr.labels):
            ax.plot(t_fs, np.maximum(tr.populations[:, j], floor),
                    label=pretty_label(lab), lw=1.4)
        ax.set_yscale("log")
        ax.set_xlabel("time (fs)")
        if n > 1:
            ax.set_title(f"({panel_tags[k]})", loc="left")
        ax.legend(fontsize=8, loc="lower left")
    axes[0][0].set_ylabel("orbital population $N_j(t)$")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_yields(yield_paths, out_path) -> str:
    """Ion yield vs intensity per molecule/occupation series, log-log axes."""
    series = read_yields(yield_paths)
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    markers = "osd^v<>"
    for k, s in enumerate(series):
        style = dict(marker=markers[k % len(markers)],
                     label=f"{s.molecule} ({s.occupation})")
        if len(s.intensities) == 1:
            ax.plot(s.intensities, s.p1, linestyle="none", **style)
        else:
            ax.plot(s.intensities, s.p1, **style)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("intensity (W/cm$^2$)")
    ax.set_ylabel("ion yield $P^1$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)
