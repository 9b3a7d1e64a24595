"""The five figure kinds.

Rendering is deterministic: fixed style, fixed svg hash salt, no
timestamps. Re-running on identical inputs produces identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .csvio import SchemaMismatch, column, read_csv  # noqa: E402

KINDS = ("sweep", "trajectory", "raster", "sad_profile", "bounds_table")

SWEEP_SCHEMA = "deffuant-sweep v1"
EVENTLOG_SCHEMA = "deffuant-eventlog v1"
PROFILE_SCHEMA = "deffuant-sadprofile v1"
BOUNDS_SCHEMA = "deffuant-bounds v1"

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "svg.hashsalt": "deffuant-plots",
    "svg.fonttype": "none",
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@dataclass(frozen=True)
class FigureRequest:
    """What to draw: a figure kind, its input CSV, and the output path.

    ``bounds`` optionally points at a bounds CSV used for threshold
    annotations (the sweep falls back to its own header otherwise).
    """

    kind: str
    source: str
    out: str
    bounds: str | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r} "
                             f"(one of: {', '.join(KINDS)})")


def _save(fig, out: str) -> None:
    if out.endswith(".svg"):
        fig.savefig(out, metadata={"Date": None})
    elif out.endswith(".png"):
        fig.savefig(out, metadata={"Software": "deffuant-plots"})
    else:
        fig.savefig(out)
    plt.close(fig)


def _no_data(ax) -> None:
    ax.text(0.5, 0.5, "no data", transform=ax.transAxes,
            ha="center", va="center", fontsize=16, color="0.4")


def _theta_c_annotation(request: FigureRequest, meta: dict) -> float | None:
    """Theoretical threshold: the bounds CSV wins, else the sweep header."""
    if request.bounds is not None:
        _, cols, rows = read_csv(request.bounds, BOUNDS_SCHEMA)
        if rows:
            value = column(cols, rows, "theta_c")[0]
            return None if math.isnan(value) else value
        return None
    value = float(meta.get("theta_c", "nan"))
    return None if math.isnan(value) else value


def _sweep(request: FigureRequest, ax) -> None:
    meta, cols, rows = read_csv(request.source, SWEEP_SCHEMA)
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("fraction of replicas")
    ax.set_ylim(-0.02, 1.02)
    if not rows:
        _no_data(ax)
        return
    theta = column(cols, rows, "theta")
    blocked = column(cols, rows, "blocked_replica_fraction")
    strong = column(cols, rows, "strong_fraction")
    ax.plot(theta, blocked, "o-", color="#b23a48", label="blocked edges")
    ax.plot(theta, strong, "s--", color="#2a6f4e", label="strong consensus")
    crossing = float(meta.get("crossing", "nan"))
    if not math.isnan(crossing):
        ax.axvline(crossing, color="#b23a48", lw=0.8, ls=":",
                   label=f"crossing = {crossing:.3g}")
    theta_c = _theta_c_annotation(request, meta)
    if theta_c is not None:
        ax.axvline(theta_c, color="0.2", lw=1.2, ls="--")
        ax.annotate(f"theta_c = {theta_c:g}", xy=(theta_c, 0.5),
                    xytext=(4, 0), textcoords="offset points", rotation=90,
                    va="center", fontsize=9, color="0.2")
    ax.legend(loc="center right", fontsize=8)


def _event_series(request: FigureRequest):
    meta, cols, rows = read_csv(request.source, EVENTLOG_SCHEMA)
    if "u" not in cols or "v" not in cols:
        raise SchemaMismatch(
            f"{request.source}: trace lacks endpoint columns u,v "
            "(write it with vertex resolution enabled)")
    times = np.array(column(cols, rows, "time")) if rows else np.empty(0)
    u = np.array(column(cols, rows, "u", int), dtype=np.int64) if rows else \
        np.empty(0, dtype=np.int64)
    v = np.array(column(cols, rows, "v", int), dtype=np.int64) if rows else \
        np.empty(0, dtype=np.int64)
    pre_u = np.array(column(cols, rows, "pre_u")) if rows else np.empty(0)
    pre_v = np.array(column(cols, rows, "pre_v")) if rows else np.empty(0)
    return times, u, v, pre_u, pre_v


def _trajectory(request: FigureRequest, ax, max_lines: int = 40) -> None:
    times, u, v, pre_u, pre_v = _event_series(request)
    ax.set_xlabel("time")
    ax.set_ylabel("opinion")
    if times.size == 0:
        _no_data(ax)
        return
    vertices = np.unique(np.concatenate([u, v]))
    if vertices.size > max_lines:
        step = vertices.size / max_lines
        vertices = vertices[(np.arange(max_lines) * step).astype(np.int64)]
    chosen = set(int(x) for x in vertices)
    series: dict[int, list] = {w: [] for w in chosen}
    for i in range(times.size):
        if int(u[i]) in chosen:
            series[int(u[i])].append((times[i], pre_u[i]))
        if int(v[i]) in chosen:
            series[int(v[i])].append((times[i], pre_v[i]))
    for w in sorted(series):
        pts = series[w]
        if not pts:
            continue
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        # a vertex holds each logged value until the event that logged it
        ax.step(xs, ys, where="pre", lw=0.7)


def _raster(request: FigureRequest, ax, fig, n_bins: int = 160) -> None:
    times, u, v, pre_u, pre_v = _event_series(request)
    ax.set_xlabel("vertex")
    ax.set_ylabel("time")
    if times.size == 0:
        _no_data(ax)
        return
    n = int(max(u.max(), v.max())) + 1
    t_max = float(times[-1])
    grid = np.full((n_bins, n), np.nan)
    scale = n_bins / t_max if t_max > 0 else 0.0
    bins = np.minimum((times * scale).astype(np.int64), n_bins - 1)
    for i in range(times.size):
        grid[bins[i], u[i]] = pre_u[i]
        grid[bins[i], v[i]] = pre_v[i]
    for k in range(1, n_bins):  # values persist between a vertex's events
        row = grid[k]
        grid[k] = np.where(np.isnan(row), grid[k - 1], row)
    masked = np.ma.masked_invalid(grid)
    image = ax.imshow(masked, origin="lower", aspect="auto",
                      extent=(-0.5, n - 0.5, 0.0, t_max),
                      cmap="viridis", interpolation="nearest")
    fig.colorbar(image, ax=ax, label="opinion")


def _sad_profile(request: FigureRequest, ax) -> None:
    meta, cols, rows = read_csv(request.source, PROFILE_SCHEMA)
    ax.set_xlabel("vertex")
    ax.set_ylabel("weight")
    if not rows:
        _no_data(ax)
        return
    vertices = column(cols, rows, "vertex", int)
    weights = column(cols, rows, "weight")
    ax.bar(vertices, weights, width=0.9, color="#31708e")
    target = meta.get("target")
    if target is not None:
        ax.axvline(int(target), color="#b23a48", lw=1.0, ls="--")
        ax.annotate(f"target {target}", xy=(int(target), max(weights)),
                    xytext=(4, -2), textcoords="offset points", fontsize=9,
                    color="#b23a48")


def _bounds_table(request: FigureRequest, ax) -> None:
    _, cols, rows = read_csv(request.source, BOUNDS_SCHEMA)
    ax.set_axis_off()
    if not rows:
        _no_data(ax)
        return
    show = [c for c in ("distribution", "theta_c", "bound_abs", "bound_opt")
            if c in cols]
    idx = [cols.index(c) for c in show]
    cells = [[r[k] for k in idx] for r in rows]
    table = ax.table(cellText=cells, colLabels=show, loc="center",
                     cellLoc="center")
    table.auto_set_font_size(False)
    table.set_fontsize(8)
    table.scale(1.0, 1.4)


def render(request: FigureRequest) -> str:
    """Draw the requested figure; returns the output path."""
    request.validate()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if request.kind == "sweep":
            _sweep(request, ax)
        elif request.kind == "trajectory":
            _trajectory(request, ax)
        elif request.kind == "raster":
            _raster(request, ax, fig)
        elif request.kind == "sad_profile":
            _sad_profile(request, ax)
        else:
            _bounds_table(request, ax)
        fig.tight_layout()
        _save(fig, request.out)
    return request.out
