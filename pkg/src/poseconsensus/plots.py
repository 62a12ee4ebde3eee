"""Plot data and SVG renderings from a results directory.

Recognised series: ``bias_density.csv`` (bias-norm density), ``sweep.csv``
(error versus group size) and ``report.json`` (per-joint errors). SVGs are
written with a fixed hash salt and no date so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .io import atomic_path

SVG_SALT = "poseconsensus"


class MissingSeriesError(FileNotFoundError):
    pass


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise ValueError(f"{path} has no data rows")
    return rows[0], np.array(rows[1:], dtype=float)


def _write_csv(path: Path, header, rows) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def _save(fig, path: Path) -> None:
    import matplotlib.pyplot as plt

    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = SVG_SALT
    import matplotlib.pyplot as plt

    return plt.subplots(figsize=(5, 3.5))


def bias_density(results: Path, out: Path) -> list[Path]:
    _, data = _read_csv(results / "bias_density.csv")
    grid, dens = data[:, 0], data[:, 1]
    # renormalise on the stored grid so the emitted curve integrates to one there
    dens = dens / np.trapezoid(dens, grid)
    csv_path, svg_path = out / "bias_density.csv", out / "bias_density.svg"
    _write_csv(csv_path, ["bias_px", "density"], zip(grid.tolist(), dens.tolist()))
    fig, ax = _figure()
    ax.plot(grid, dens, color="k", lw=1)
    ax.axvline(1.0, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("soft-argmax bias norm (px)")
    ax.set_ylabel("density")
    _save(fig, svg_path)
    return [csv_path, svg_path]


def ng_sweep(results: Path, out: Path) -> list[Path]:
    header, data = _read_csv(results / "sweep.csv")
    col = {h: i for i, h in enumerate(header)}
    written = []
    for row in data:
        n_g = int(row[col["n_g"]])
        p = out / f"sweep_ng{n_g}.csv"
        _write_csv(p, header, [[int(row[col["n_g"]]), int(row[col["n_t"]])] + row[2:].tolist()])
        written.append(p)
    fig, ax = _figure()
    labels = [f"{int(r[col['n_g']])}" for r in data]
    ax.bar(labels, data[:, col["mpjpe_p1"]], color="0.4")
    ax.set_xlabel("n_g")
    ax.set_ylabel("MPJPE (protocol 1)")
    svg = out / "sweep_ng.svg"
    _save(fig, svg)
    return written + [svg]


def per_joint(results: Path, out: Path) -> list[Path]:
    report = json.loads((results / "report.json").read_text())
    errs = report["protocol1"]["per_joint"]
    p = out / "per_joint_error.csv"
    _write_csv(p, ["joint", "mpjpe_p1"], [[j, float(e)] for j, e in enumerate(errs)])
    fig, ax = _figure()
    ax.bar([str(j) for j in range(len(errs))], errs, color="0.4")
    ax.set_xlabel("joint")
    ax.set_ylabel("error (protocol 1)")
    svg = out / "per_joint_error.svg"
    _save(fig, svg)
    return [p, svg]


SERIES = {"bias_density.csv": bias_density, "sweep.csv": ng_sweep, "report.json": per_joint}


def emit_plots(results: Path, out: Path | None = None) -> list[Path]:
    """Render every recognised series under ``results``; errors if there is none."""
    results = Path(results)
    if not results.is_dir():
        raise MissingSeriesError(f"results directory {results} does not exist")
    present = [name for name in SERIES if (results / name).is_file()]
    if not present:
        raise MissingSeriesError(f"no plottable series in {results} (expected one of {sorted(SERIES)})")
    out = Path(out) if out is not None else results / "plots"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in present:
        written += SERIES[name](results, out)
    return written
