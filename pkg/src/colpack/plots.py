"""Figures for analyzed sweeps and configuration snapshots.

SVG is always written; pass ``raster=True`` to also write PNG next to it.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402
from scipy.spatial import ConvexHull  # noqa: E402

from . import engine, stats, workflow  # noqa: E402
from . import geometry as geo  # noqa: E402
from .analysis import _fibonacci_sphere  # noqa: E402
from .errors import ColpackError  # noqa: E402

PLOT_KINDS = ("eta_vs_P", "psi6_vs_P", "rdf", "eta_traces", "config")
RDF_PRESSURES = (6.5, 9.2, 10.4)


def _save(fig, working_dir, stem, raster):
    paths = [os.path.join(working_dir, f"{stem}.svg")]
    fig.savefig(paths[0])
    if raster:
        paths.append(os.path.join(working_dir, f"{stem}.png"))
        fig.savefig(paths[1], dpi=150)
    plt.close(fig)
    return paths


def _load_analysis(working_dir):
    path = os.path.join(working_dir, workflow.ANALYSIS_FILE)
    if not os.path.exists(path):
        raise ColpackError("missing_analysis", f"no {workflow.ANALYSIS_FILE} in {working_dir}; run analysis first")
    return workflow.read_json(path)


def _x_param(record):
    params = [r.get("parameters", {}) for r in record["runs"]]
    for key in ("P", "volume_fraction"):
        vals = {p.get(key) for p in params}
        if None not in vals and len(vals) > 1:
            return key
    return "P" if all("P" in p for p in params) else "volume_fraction"


def _sweep(record, order_series):
    key = _x_param(record)
    rows = []
    for run in record["runs"]:
        cut = run["equilibrium"]["eq_start_index"]
        phi = np.asarray(run["series"]["system.volume_fraction"][cut:], float)
        psi = run["series"].get(order_series)
        psi = None if psi is None else np.asarray(psi[cut:], float)
        rows.append((float(run["parameters"][key]), phi, psi, run))
    rows.sort(key=lambda r: r[0])
    return key, rows


def _sigma(tail):
    if len(tail) < 2:
        return 0.0
    cfg = stats.BootstrapConfig(min(50, len(tail)), 500, 0)
    return stats.block_bootstrap_sigma(tail, cfg)


def _try(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ColpackError:
        return None


def plot_eta_vs_P(record, working_dir, order_series="disk_0.hexatic_6", raster=False):
    key, rows = _sweep(record, order_series)
    x = np.array([r[0] for r in rows])
    y = np.array([r[1].mean() for r in rows])
    err = np.array([_sigma(r[1]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.axhspan(stats.PHI_L, stats.PHI_H, color="0.85", label=f"coexistence {stats.PHI_L:.3f}-{stats.PHI_H:.3f}")
    ax.axhline(stats.PHI_MID, color="0.5", ls=":", lw=1)
    ax.errorbar(x, y, yerr=err, fmt="o-", ms=4, capsize=2, label="simulation")
    if key == "P":
        cr = _try(stats.crossing_interpolate, x, y, stats.PHI_MID)
        if cr is not None:
            ax.axvline(cr.P_star, color="C3", ls="--", lw=1, label=f"P* crossing = {cr.P_star:.3f}")
        ax.axvline(stats.P_STAR_LITERATURE, color="k", ls=":", lw=1,
                   label=f"P* literature = {stats.P_STAR_LITERATURE}")
    ax.set_xlabel("pressure P" if key == "P" else "target volume fraction")
    ax.set_ylabel("volume fraction")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, working_dir, "fig_eta_vs_P", raster)


def plot_psi6_vs_P(record, working_dir, order_series="disk_0.hexatic_6", raster=False):
    key, rows = _sweep(record, order_series)
    rows = [r for r in rows if r[2] is not None]
    if not rows:
        raise ColpackError("missing_series", f"analysis has no series {order_series!r}")
    x = np.array([r[0] for r in rows])
    y = np.array([r[2].mean() for r in rows])
    err = np.array([_sigma(r[2]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(x, y, yerr=err, fmt="o", ms=4, capsize=2, label="simulation")
    fit = _try(stats.fit_sigmoid, x, y) if len(x) >= 5 else None
    if fit is not None:
        xs = np.linspace(x.min(), x.max(), 200)
        ax.plot(xs, stats.sigmoid(xs, fit.A, fit.B, fit.k, fit.x0), "C1-", label="sigmoid fit")
        ax.axvline(fit.x0, color="C1", ls="--", lw=1, label=f"x0 = {fit.x0:.3f}")
    ax.set_xlabel("pressure P" if key == "P" else "target volume fraction")
    ax.set_ylabel("hexatic order |psi6|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, working_dir, "fig_psi6_vs_P", raster)


def plot_rdf(record, working_dir, at=RDF_PRESSURES, raster=False):
    key, rows = _sweep(record, "")
    xs = np.array([r[0] for r in rows])
    picks = []
    for target in at:
        i = int(np.argmin(abs(xs - target)))
        if i not in picks:
            picks.append(i)
    if len(rows) < len(at):
        picks = list(range(len(rows)))
    fig, axes = plt.subplots(1, len(picks), figsize=(4 * len(picks), 3.2), squeeze=False)
    for ax, i in zip(axes[0], picks):
        run = rows[i][3]
        for entry in run["rdf"]:
            if entry["name"] == "rdf":
                ax.plot(entry["r"], entry["g"], lw=1, label=entry["label"])
        ax.axhline(1.0, color="0.6", lw=0.8)
        ax.set_title(f"{key} = {xs[i]:g}")
        ax.set_xlabel("r")
        ax.set_ylabel("g(r)")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, working_dir, "fig_rdf", raster)


def plot_eta_traces(record, working_dir, raster=False):
    key, rows = _sweep(record, "")
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, (x, _, _, run) in enumerate(rows):
        series = run["series"]["system.volume_fraction"]
        color = f"C{k % 10}"
        ax.plot(np.arange(len(series)), series, color=color, lw=1, label=f"{key} = {x:g}")
        ax.axvline(run["equilibrium"]["eq_start_index"], color=color, ls="--", lw=0.8)
    ax.set_xlabel("frame")
    ax.set_ylabel("volume fraction")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, working_dir, "fig_eta_traces", raster)


# -- snapshots ---------------------------------------------------------------------------

def outline_2d(shape, n=48):
    """Body-frame boundary polygon of a 2D shape."""
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    p = shape.params
    if shape.kind == "disk":
        r = p["diameter"] / 2
        return np.column_stack([r * np.cos(t), r * np.sin(t)])
    if shape.kind == "ellipse":
        return np.column_stack([p["a"] * np.cos(t), p["b"] * np.sin(t)])
    if shape.kind == "capsule2d":
        r, h = p["width"] / 2, p["length"] / 2
        a = np.linspace(-np.pi / 2, np.pi / 2, n // 2 + 1)  # odd count keeps the cap tip
        right = np.column_stack([h + r * np.cos(a), r * np.sin(a)])
        left = np.column_stack([-h - r * np.cos(a), -r * np.sin(a)])
        return np.vstack([right, left])
    return geo.hull_rep(shape).vertices


def surface_points_3d(shape, n=96):
    """Body-frame points whose convex hull is the shape (exact for polytopes)."""
    s = _fibonacci_sphere(n)
    if shape.kind in geo.ROUND_KINDS:
        return s * shape.params["diameter"] / 2
    if shape.kind == "ellipsoid":
        return s * geo.semi_axes(shape)
    rep = geo.hull_rep(shape)
    if rep.rounding_radius > 0:
        return np.vstack([v + rep.rounding_radius * s for v in rep.vertices])
    return rep.vertices


def draw_configuration(ax, config):
    """One filled glyph per particle plus the box outline; returns the glyph count."""
    d = config.dimension
    edges = config.box.edges
    ax.add_patch(Rectangle((0, 0), edges[0], edges[1], fill=False, lw=1, color="k"))
    pos = np.mod(config.positions[:, :2], edges[:2])
    count = 0
    if d == 2:
        outlines = [outline_2d(sp) for sp in config.species]
        angles = config.orientation_record()
        for i, t in enumerate(config.types):
            c, s = np.cos(angles[i]), np.sin(angles[i])
            pts = outlines[t] @ np.array([[c, s], [-s, c]]) + pos[i]
            ax.add_patch(Polygon(pts, closed=True, fc=f"C{t % 10}", ec="k", lw=0.3, alpha=0.8))
            count += 1
    else:
        bodies = [surface_points_3d(sp) for sp in config.species]
        order = np.argsort(config.positions[:, 2])  # far to near along z
        for i in order:
            t = config.types[i]
            R = geo.quat_to_matrix(config.orientations[i])
            pts = (bodies[t] @ R.T)[:, :2] + pos[i]
            hull = pts[ConvexHull(pts).vertices] if len(pts) > 2 else pts
            ax.add_patch(Polygon(hull, closed=True, fc=f"C{t % 10}", ec="k", lw=0.3, alpha=0.7))
            count += 1
    pad = 0.05 * max(edges[:2])
    ax.set_xlim(-pad, edges[0] + pad)
    ax.set_ylim(-pad, edges[1] + pad)
    ax.set_aspect("equal")
    return count


def plot_configuration(run_dir, out_dir=None, raster=False, stem=None):
    path = os.path.join(run_dir, "final_config.json")
    if not os.path.exists(path):
        raise ColpackError("missing_execution", f"no final_config.json in {run_dir}")
    config = engine.Configuration.from_record(workflow.read_json(path))
    fig, ax = plt.subplots(figsize=(5, 5))
    n = draw_configuration(ax, config)
    proj = "" if config.dimension == 2 else " (xy projection)"
    ax.set_title(f"{os.path.basename(run_dir)}: {n} particles, phi = {config.phi:.3f}{proj}", fontsize=9)
    fig.tight_layout()
    stem = stem or f"fig_config_{os.path.basename(os.path.normpath(run_dir))}"
    return _save(fig, out_dir or run_dir, stem, raster)


def emit_plots(working_dir, kinds=None, raster=False, order_series="disk_0.hexatic_6"):
    """Render the requested figures into ``working_dir``; returns the written paths."""
    kinds = list(kinds or PLOT_KINDS)
    for k in kinds:
        if k not in PLOT_KINDS:
            raise ColpackError("unknown_plot", f"unknown plot kind {k!r}", supported=list(PLOT_KINDS))
    record = _load_analysis(working_dir)
    if not record.get("runs"):
        raise ColpackError("missing_analysis", "analysis results contain no runs")
    out = []
    if "eta_vs_P" in kinds:
        out += plot_eta_vs_P(record, working_dir, order_series, raster)
    if "psi6_vs_P" in kinds and any(order_series in r["series"] for r in record["runs"]):
        out += plot_psi6_vs_P(record, working_dir, order_series, raster)
    if "rdf" in kinds:
        out += plot_rdf(record, working_dir, raster=raster)
    if "eta_traces" in kinds:
        out += plot_eta_traces(record, working_dir, raster)
    if "config" in kinds:
        for run in record["runs"]:
            k = run["run_index"]
            out += plot_configuration(os.path.join(working_dir, f"run_{k}"), working_dir, raster)
    return out
