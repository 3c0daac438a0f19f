"""Generation of standalone matplotlib scripts for the emitted CSV files.

The scripts are plain text that depends only on the arguments, so
regenerating them from the same CSVs gives identical bytes. Rendered images
are saved with the PNG ``Software`` tag stripped; other renderer metadata is
outside this guarantee.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

LAYOUTS = {
    "single": None,
    "two_panel": ("mean_frobenius", "mean_estimation_error"),
}

_TEMPLATE = '''\
"""Plot generated by opeval. Re-run with: python {script_name}"""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CURVES = {curves!r}
PANELS = {panels!r}
XLABEL = {xlabel!r}
YLABELS = {ylabels!r}
LOG_Y = {log_y!r}


def read(path):
    with open(os.path.join(HERE, path), newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


fig, axes = plt.subplots(1, len(PANELS), figsize=(6 * len(PANELS), 4.5), squeeze=False)
for (path, label, xcol) in CURVES:
    rows = read(path)
    x = [float(r[xcol]) for r in rows]
    for ax, col in zip(axes[0], PANELS):
        ax.plot(x, [float(r[col]) for r in rows], label=label)
for ax, ylabel in zip(axes[0], YLABELS):
    ax.set_xlabel(XLABEL)
    ax.set_ylabel(ylabel)
    if LOG_Y:
        ax.set_yscale("log")
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, {image!r}), dpi=120, metadata={{"Software": None}})
'''


def _read_header(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            return row
    raise ValueError(f"{path}: empty CSV")


def emit_plot_script(
    csv_paths,
    out_path,
    layout: str = "single",
    labels=None,
    log_y: bool | None = None,
) -> Path:
    """Write a plotting script for ``csv_paths`` to ``out_path``.

    ``single`` draws every CSV as one curve on one panel using its first two
    columns (``round,rmse`` or ``t,frobenius_norm``). ``two_panel`` draws two
    panels, the mean Frobenius norm and the mean estimation error, from
    simulation CSVs.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    out_path = Path(out_path)
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise ValueError("need at least one CSV")
    labels = list(labels) if labels is not None else [p.stem for p in paths]
    if len(labels) != len(paths):
        raise ValueError("one label per CSV is required")
    curves, header0 = [], None
    for p, label in zip(paths, labels):
        if not p.is_file():
            raise FileNotFoundError(p)
        header = _read_header(p)
        if len(header) < 2:
            raise ValueError(f"{p}: need at least two columns, got {header}")
        if LAYOUTS[layout] and not set(LAYOUTS[layout]) <= set(header):
            raise ValueError(f"{p}: missing columns {LAYOUTS[layout]} for layout {layout}")
        if header0 is None:
            header0 = header
        rel = os.path.relpath(p.resolve(), out_path.parent.resolve())
        curves.append((Path(rel).as_posix(), label, header[0]))
    if layout == "single":
        panels = [header0[1]]
        ylabels = ["RMSE of V estimates" if header0[1] == "rmse" else header0[1]]
        xlabel = "FQI round" if header0[0] == "round" else header0[0]
        log_y = bool(log_y) if log_y is not None else header0[1] != "rmse"
    else:
        panels = list(LAYOUTS[layout])
        ylabels = ["mean Frobenius norm of L^t", "mean ||theta_t - theta*||_2"]
        xlabel = "FQI round t"
        log_y = True if log_y is None else bool(log_y)
    text = _TEMPLATE.format(
        script_name=out_path.name, curves=curves, panels=panels, xlabel=xlabel,
        ylabels=ylabels, log_y=log_y, image=out_path.with_suffix(".png").name,
    )
    out_path.write_text(text)
    return out_path
