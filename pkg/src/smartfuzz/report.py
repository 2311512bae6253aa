"""Read ``plot_data`` files and render them as figures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

PANELS = (
    ("paths_total", "paths"),
    ("map_density_pct", "map density (%)"),
    ("unique_crashes", "unique crashes"),
    ("execs_per_sec", "execs / s"),
)


def read_plot_data(path) -> list:
    """Rows of a plot_data file as dicts of floats."""
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def render_plot_data(path, out: Optional[str] = None, title: Optional[str] = None) -> Path:
    """Draw the campaign progress panels into a PNG next to the data by default."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    rows = read_plot_data(path)
    if not rows:
        raise ValueError(f"{path} has no data rows")
    t0 = rows[0]["unix_time"]
    t = [r["unix_time"] - t0 for r in rows]

    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, (col, label) in zip(axes.flat, PANELS):
        ax.step(t, [r[col] for r in rows], where="post")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("campaign time (s)")
    fig.suptitle(title or path.parent.name or "campaign")
    fig.tight_layout()
    out_path = Path(out) if out else path.with_name(path.name + ".png")
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path
