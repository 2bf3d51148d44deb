"""CSV tables, SVG figures and run manifests."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .noise import RNG_ID
from .observables import CurveRow, EnergyCurve, ErrorRow, ErrorTable

ERROR_COLUMNS = ("scheme", "h", "k", "component", "rmse", "stderr", "M")
CURVE_COLUMNS = ("scheme", "t", "energy", "stderr", "exact_energy")
DEFECT_COLUMNS = ("k", "n", "d1_msq", "d2_msq", "d1_stderr")
STABILITY_COLUMNS = ("scheme", "k", "cfl_number", "guard_tripped", "exploded", "max_norm")


class PlotError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _columns_for(data):
    if isinstance(data, ErrorTable):
        return ERROR_COLUMNS, data.rows
    if isinstance(data, EnergyCurve):
        return CURVE_COLUMNS, data.rows
    rows = list(data)
    if not rows:
        raise TypeError("cannot infer columns of an empty list")
    cols = DEFECT_COLUMNS if hasattr(rows[0], "d1_msq") else STABILITY_COLUMNS
    return cols, rows


def emit_csv(data, path) -> Path:
    """Write an error table, energy curve, defect list or stability report.

    Floats use 17 significant digits so that reading back is exact.
    """
    cols, rows = _columns_for(data)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])
    return path


def read_csv(path):
    """Parse a file written by :func:`emit_csv` back into a table or curve."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        body = list(reader)
    if header == ERROR_COLUMNS:
        return ErrorTable("k", [ErrorRow(r[0], float(r[1]), float(r[2]), int(r[3]), float(r[4]),
                                         float(r[5]), int(r[6])) for r in body])
    if header == CURVE_COLUMNS:
        return EnergyCurve([CurveRow(r[0], *map(float, r[1:])) for r in body])
    raise ValueError(f"unrecognized header {header}")


# ---------------------------------------------------------------------------
# figures

@dataclass
class PlotSpec:
    """Figure description.

    ``series`` maps a label to ``(x, y)`` sequences. Points with a
    non-finite ``y`` are exploded cells: the line stops and a marker is
    drawn at the top edge. ``slopes`` adds guide lines through the
    geometric midpoint of the finite data (log-log only).
    """

    title: str = ""
    xlabel: str = "k"
    ylabel: str = "error"
    loglog: bool = True
    series: dict = field(default_factory=dict)
    slopes: list = field(default_factory=list)
    markers: bool = True


def _checked_series(spec: PlotSpec):
    if not spec.series:
        raise PlotError("plot needs at least one series")
    out = {}
    for label, (x, y) in spec.series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size == 0 or x.shape != y.shape:
            raise PlotError(f"series {label!r} is empty or ragged")
        if not np.all(np.isfinite(x)):
            raise PlotError(f"series {label!r} has non-finite abscissae")
        ok = np.isfinite(y)
        if spec.loglog and (np.any(x <= 0) or np.any(y[ok] <= 0)):
            raise PlotError(f"series {label!r} has points <= 0 on a log axis")
        out[label] = (x, y, ok)
    if not any(ok.any() for _, _, ok in out.values()):
        raise PlotError("no finite points to draw")
    return out


def _decade_limits(values: np.ndarray):
    lo, hi = np.log10(values.min()), np.log10(values.max())
    return 10.0 ** math.floor(lo), 10.0 ** math.ceil(hi if hi > math.floor(lo) else lo + 1)


def guide_line(x: np.ndarray, y: np.ndarray, slope: float):
    """Endpoints of a line of ``slope`` through the geometric midpoint."""
    xm, ym = np.exp(np.mean(np.log(x))), np.exp(np.mean(np.log(y)))
    xs = np.array([x.min(), x.max()])
    return xs, ym * (xs / xm) ** slope


def build_figure(spec: PlotSpec):
    """Matplotlib figure for ``spec`` (not attached to any GUI backend)."""
    from matplotlib.figure import Figure
    from matplotlib.ticker import LogLocator

    data = _checked_series(spec)
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot()
    xs_all = np.concatenate([x[ok] for x, _, ok in data.values()])
    ys_all = np.concatenate([y[ok] for _, y, ok in data.values()])
    exploded = []
    for label, (x, y, ok) in data.items():
        (line,) = ax.plot(x[ok], y[ok], "o-" if spec.markers else "-", label=label,
                          markersize=4)
        if not ok.all():
            exploded.append((x[~ok], line.get_color()))
    if spec.loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
        for p in spec.slopes:
            gx, gy = guide_line(xs_all, ys_all, p)
            ax.plot(gx, gy, "k--", linewidth=0.8, gid=f"guide-{p:g}")
            ax.annotate(f"slope {p:g}", (gx[1], gy[1]), fontsize=8,
                        xytext=(3, 0), textcoords="offset points")
        ax.set_xlim(*_decade_limits(np.concatenate([x for x, _, _ in data.values()])))
        ax.set_ylim(*_decade_limits(ys_all))
        for axis in (ax.xaxis, ax.yaxis):
            axis.set_major_locator(LogLocator(base=10.0))
    top = ax.get_ylim()[1]
    for i, (xe, color) in enumerate(exploded):
        ax.plot(xe, np.full(xe.shape, top), "x", color=color, markersize=8, clip_on=False,
                label="exploded" if i == 0 else None)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, which="major", linewidth=0.3)
    ax.legend(fontsize=8)
    return fig


def emit_svg(spec: PlotSpec, path) -> Path:
    """Render ``spec`` to a standalone SVG file; output is byte-stable."""
    import matplotlib

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "stochwave", "svg.fonttype": "none",
                                "path.simplify": False}):
        fig = build_figure(spec)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


# ---------------------------------------------------------------------------
# manifest

def write_manifest(path, cfg, outputs, timings, summary=None) -> Path:
    import matplotlib
    import scipy

    manifest = {
        "version": __version__,
        "study": cfg.verb,
        "seed": cfg.seed,
        "rng": RNG_ID,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "threads": cfg.threads,
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "timings_s": timings,
        "summary": summary or {},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "matplotlib": matplotlib.__version__},
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return path


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
