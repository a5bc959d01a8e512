"""Order parameters, pair correlations and equilibration detection for recorded runs."""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from . import engine
from . import geometry as geo
from .errors import ColpackError

ORDER_PARAM_TYPES = ("Hexatic", "Nematic", "Cubatic", "ContinuousCoordination", "RDF")
CUBIC_KINDS = frozenset({"cube", "octahedron"})
HEXATIC_KINDS = frozenset({"disk", "triangle", "square", "rectangle"})
NEMATIC_KINDS = frozenset({"ellipse", "capsule2d", "rectangle", "ellipsoid", "capsule3d"})
MIN_SERIES = 20


# -- periodic helpers -------------------------------------------------------------

def _wrap_into(pos, box):
    pos = np.mod(pos, box)
    return np.where(pos >= box, pos - box, pos)


def _tree(pos, box):
    return cKDTree(_wrap_into(np.asarray(pos, float), box), boxsize=box)


def _min_image(d, box):
    return d - box * np.floor(d / box + 0.5)


# -- hexatic -------------------------------------------------------------------------

def hexatic_psi(positions, box, k=6, subset=None):
    """Bond-orientational order with the ``k`` nearest periodic neighbours.

    Returns ``(psi, magnitude)``: per-particle complex values for ``subset``
    (all particles by default) and ``|mean(psi)|``.
    """
    pos = np.asarray(positions, float)[:, :2]
    box = np.asarray(box, float)[:2]
    k = int(k)
    if k < 2:
        raise ColpackError("invalid_order_param", "Hexatic needs k >= 2")
    if len(pos) <= k:
        raise ColpackError("too_few_particles", f"Hexatic k={k} needs more than {k} particles")
    idx = np.arange(len(pos)) if subset is None else np.asarray(subset)
    tree = _tree(pos, box)
    _, nbr = tree.query(_wrap_into(pos[idx], box), k=k + 1)
    nbr = nbr[:, 1:]
    # the query point itself is always nearest (distance 0); drop it robustly
    self_hit = nbr == idx[:, None]
    if self_hit.any():
        _, nbr2 = tree.query(_wrap_into(pos[idx], box), k=k + 2)
        nbr = np.array([[j for j in row if j != i][:k] for i, row in zip(idx, nbr2)])
    d = _min_image(pos[nbr] - pos[idx][:, None, :], box)
    theta = np.arctan2(d[..., 1], d[..., 0])
    psi = np.exp(1j * k * theta).mean(axis=1)
    return psi, float(abs(psi.mean()))


# -- nematic ---------------------------------------------------------------------------

def nematic_order(axes):
    """Largest eigenvalue of the orientation tensor and its director."""
    u = np.asarray(axes, float)
    if u.ndim != 2 or len(u) == 0:
        raise ColpackError("no_orientable_species", "nematic order needs particle axes")
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    d = u.shape[1]
    outer = np.einsum("ni,nj->ij", u, u) / len(u)
    if d == 2:
        Q = 2 * outer - np.eye(2)
    else:
        Q = 1.5 * outer - 0.5 * np.eye(3)
    w, v = np.linalg.eigh(Q)
    return float(w[-1]), v[:, -1]


def long_axes(shape, orientations, dimension):
    """World-frame long axes for particles of one species."""
    body = geo.long_axis_body(shape)
    if dimension == 2:
        ang = np.asarray(orientations, float)
        c, s = np.cos(ang), np.sin(ang)
        return np.column_stack([c * body[0] - s * body[1], s * body[0] + c * body[1]])
    rot = Rotation.from_quat(np.asarray(orientations, float)[:, [1, 2, 3, 0]])
    return rot.apply(body)


# -- cubatic ------------------------------------------------------------------------------

def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = math.pi * (3 - math.sqrt(5)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _frame_grid(n_dirs=48, n_spin=12):
    frames = []
    for a in _fibonacci_sphere(n_dirs):
        t = np.cross(a, [1.0, 0, 0] if abs(a[0]) < 0.9 else [0, 1.0, 0])
        t /= np.linalg.norm(t)
        b = np.cross(a, t)
        for ang in np.arange(n_spin) * (math.pi / 2) / n_spin:  # in-plane angles modulo cube symmetry
            c, s = math.cos(ang), math.sin(ang)
            e1 = c * t + s * b
            e2 = np.cross(a, e1)
            frames.append(np.stack([a, e1, e2]))
    return np.array(frames)


def _p4_of_frames(U, frames):
    # U: (N, 3, 3) particle axes as rows; frames: (M, 3, 3) as rows
    dots = np.einsum("nai,mbi->mnab", U, frames)
    F = (dots ** 4).sum(axis=(2, 3)).mean(axis=1)
    return (5 * F - 9) / 6


def cubatic_p4(particle_axes, n_dirs=48, n_spin=12, starts=3):
    """Cubatic order of cube-symmetric particle frames, maximized over global frames.

    ``particle_axes`` has shape (N, 3, 3): three orthonormal body axes per
    particle (rows). Identical orientations give 1; isotropic ones give ~0.
    """
    U = np.asarray(particle_axes, float)
    grid = _frame_grid(n_dirs, n_spin)
    vals = _p4_of_frames(U, grid)
    best = float(vals.max())
    for m in np.argsort(vals)[::-1][:starts]:
        base = Rotation.from_matrix(grid[m].T)

        def neg(x, base=base):
            fr = (Rotation.from_rotvec(x) * base).as_matrix().T[None]
            return -float(_p4_of_frames(U, fr)[0])

        res = minimize(neg, np.zeros(3), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000,
                                "initial_simplex": 0.05 * np.vstack([np.zeros(3), np.eye(3)])})
        best = max(best, -float(res.fun))
    return best


def particle_frames(orientations):
    """(N, 3, 3) body axes as rows from (N, 4) quaternions."""
    R = Rotation.from_quat(np.asarray(orientations, float)[:, [1, 2, 3, 0]]).as_matrix()
    return np.transpose(R, (0, 2, 1))


# -- pair structure -----------------------------------------------------------------------

def rdf(frames, r_max, bins=100, sel_a=None, sel_b=None):
    """g(r) between two particle selections, averaged over ``frames``.

    ``frames`` is a sequence of ``(positions, box_edges)``; ``sel_a`` and
    ``sel_b`` are index arrays (all particles by default).
    """
    frames = list(frames)
    if not frames:
        raise ColpackError("no_frames", "rdf needs at least one frame")
    edges = np.linspace(0.0, r_max, bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    g = np.zeros(bins)
    for pos, box in frames:
        box = np.asarray(box, float)
        d = len(box)
        if r_max > box.min() / 2 + 1e-12:
            raise ColpackError("r_max_too_large", f"r_max {r_max} exceeds half the smallest box edge {box.min() / 2}")
        pos = np.asarray(pos, float)[:, :d]
        a = np.arange(len(pos)) if sel_a is None else np.asarray(sel_a)
        b = np.arange(len(pos)) if sel_b is None else np.asarray(sel_b)
        ta, tb = _tree(pos[a], box), _tree(pos[b], box)
        sp = ta.sparse_distance_matrix(tb, r_max, output_type="ndarray")
        dist = sp["v"]
        same = a[sp["i"]] == b[sp["j"]]
        dist = dist[~same]
        hist, _ = np.histogram(dist, bins=edges)
        n_b = len(b) - (1 if np.array_equal(a, b) else 0)
        rho = n_b / float(np.prod(box))
        if d == 2:
            shell = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
        else:
            shell = 4.0 / 3.0 * math.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
        g += hist / (len(a) * rho * shell)
    return {"r": centers, "g": g / len(frames), "edges": edges}


def continuous_coordination(positions, box, r_c, width=None):
    """Logistic-weighted neighbour count per particle and its mean."""
    if not r_c > 0:
        raise ColpackError("invalid_order_param", "r_c must be > 0")
    width = 0.05 * r_c if width is None else float(width)
    box = np.asarray(box, float)
    pos = np.asarray(positions, float)[:, : len(box)]
    cutoff = min(r_c + 40 * width, box.min() / 2)
    tree = _tree(pos, box)
    pairs = tree.query_pairs(cutoff, output_type="ndarray")
    c = np.zeros(len(pos))
    if len(pairs):
        r = np.linalg.norm(_min_image(pos[pairs[:, 1]] - pos[pairs[:, 0]], box), axis=1)
        z = np.clip((r - r_c) / width, -700, 700)
        w = 1.0 / (1.0 + np.exp(z))
        np.add.at(c, pairs[:, 0], w)
        np.add.at(c, pairs[:, 1], w)
    return c, float(c.mean()) if len(c) else 0.0


# -- equilibration ----------------------------------------------------------------------------

def statistical_inefficiency(x):
    """g = 1 + 2 sum_t (1 - t/n) C(t), summed until the autocorrelation first drops to <= 0."""
    x = np.asarray(x, float)
    n = len(x)
    dx = x - x.mean()
    var = float(dx @ dx) / n
    if n < 2 or var <= 0.0:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(dx, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / np.arange(n, 0, -1)
    c = acov / var
    g = 1.0
    for t in range(1, n - 1):
        if c[t] <= 0.0:
            break
        g += 2.0 * c[t] * (1.0 - t / n)
    return max(1.0, g)


def blocked_se(x, block):
    x = np.asarray(x, float)
    block = max(1, min(int(block), len(x) // 2))
    m = len(x) // block
    if m < 2:
        return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    means = x[: m * block].reshape(m, block).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(m))


def tail_is_stable(tail, g):
    tail = np.asarray(tail, float)
    if len(tail) < 10:
        return False
    h = len(tail) // 2
    first, second = tail[:h], tail[len(tail) - h:]
    block = math.ceil(2 * g)
    se = math.hypot(blocked_se(first, block), blocked_se(second, block))
    return bool(abs(first.mean() - second.mean()) <= 2.0 * se)


def detect_equilibration(values, start=None):
    """Max-N_eff equilibration cut with a tail-stability gate.

    Returns ``{equilibrated, eq_start_index, eq_mean, eq_std, g}``. Passing
    ``start`` skips the search and evaluates the block at that cut.
    """
    x = np.asarray(values, float)
    T = len(x)
    if T < MIN_SERIES:
        raise ColpackError("series_too_short", f"equilibration detection needs >= {MIN_SERIES} frames, got {T}")
    if start is None:
        best = None
        for frac in np.arange(0, 46) * 0.02:
            t0 = int(math.floor(frac * T + 1e-9))
            g = statistical_inefficiency(x[t0:])
            neff = (T - t0) / g
            if best is None or neff > best[0]:
                best = (neff, t0, g)
        _, t0, g = best
    else:
        t0 = int(start)
        g = statistical_inefficiency(x[t0:])
    tail = x[t0:]
    return {
        "equilibrated": tail_is_stable(tail, g),
        "eq_start_index": t0,
        "eq_mean": float(tail.mean()),
        "eq_std": float(tail.std(ddof=1)) if len(tail) > 1 else 0.0,
        "g": float(g),
    }


# -- request handling ------------------------------------------------------------------------

def _species_labels(problem):
    return [f"{sp['shape']}_{i}" for i, sp in enumerate(problem["particle_specs"])]


def default_requests(problem):
    """Per-shape default order parameters: (scope index, type, name, params)."""
    out = []
    dim = problem["dimension"]
    for i, sp in enumerate(problem["particle_specs"]):
        kind = sp["kind"]
        if dim == 2 and kind in HEXATIC_KINDS:
            out.append({"type": "Hexatic", "name": "hexatic_6", "params": {"k": 6}, "species": i})
        if kind in NEMATIC_KINDS:
            out.append({"type": "Nematic", "name": "nematic", "params": {}, "species": i})
        if dim == 3 and kind in CUBIC_KINDS:
            out.append({"type": "Cubatic", "name": "cubatic_p4", "params": {}, "species": i})
    return out


def _canon_type(t):
    for name in ORDER_PARAM_TYPES:
        if str(t).replace("_", "").lower() == name.lower():
            return name
    raise ColpackError("unknown_order_param_type", f"unknown order parameter type {t!r}",
                       supported=list(ORDER_PARAM_TYPES))


def validate_requests(problem, extras):
    """Check extra order-parameter requests against the problem; returns expanded requests."""
    dim = problem["dimension"]
    specs = problem["particle_specs"]
    reqs = list(default_requests(problem))
    seen = set()
    for raw in extras or []:
        if not isinstance(raw, dict) or "type" not in raw:
            raise ColpackError("invalid_order_param", f"order parameter request needs a type: {raw!r}")
        typ = _canon_type(raw["type"])
        params = dict(raw.get("params") or {})
        name = raw.get("name")
        if typ == "Hexatic":
            if dim != 2:
                raise ColpackError("invalid_for_system", "Hexatic bond order is defined for 2D systems")
            k = params.get("k", 6)
            if int(k) != k or int(k) < 2:
                raise ColpackError("invalid_order_param", f"Hexatic k must be an integer >= 2, got {k!r}")
            params["k"] = int(k)
            name = name or f"hexatic_{params['k']}"
            targets = list(range(len(specs)))
        elif typ == "Nematic":
            targets = [i for i, sp in enumerate(specs) if sp["kind"] in NEMATIC_KINDS]
            if not targets:
                raise ColpackError("invalid_for_system",
                                   "Nematic order needs an anisotropic species (ellipse, capsule, rectangle, ellipsoid)")
            name = name or "nematic"
        elif typ == "Cubatic":
            targets = [i for i, sp in enumerate(specs) if sp["kind"] in CUBIC_KINDS]
            if dim != 3 or not targets:
                raise ColpackError("invalid_for_system",
                                   "Cubatic order measures cubic symmetry of 3D particle frames; "
                                   "this system has no cube-symmetric 3D species")
            name = name or "cubatic_p4"
        elif typ == "ContinuousCoordination":
            if "r_c" in params and not float(params["r_c"]) > 0:
                raise ColpackError("invalid_order_param", "r_c must be > 0")
            name = name or "continuous_coordination"
            targets = [None]
        else:  # RDF
            name = name or "rdf"
            targets = ["rdf"]
        if name in seen:
            raise ColpackError("duplicate_order_param_name", f"order parameter name {name!r} used twice")
        seen.add(name)
        for t in targets:
            req = {"type": typ, "name": name, "params": params, "species": t}
            if not any(r["name"] == name and r["species"] == t for r in reqs):
                reqs.append(req)
    return reqs


# -- per-run analysis ---------------------------------------------------------------------------

def _frame_arrays(header, frame):
    dim = header["dimension"]
    pos = np.asarray(frame["positions"], float)[:, :dim]
    box = np.asarray(frame["box_edges"], float)
    ori = np.asarray(frame["orientations"], float)
    return pos, box, ori


def evaluate_request(req, header, frame, species, types):
    pos, box, ori = _frame_arrays(header, frame)
    dim = header["dimension"]
    typ = req["type"]
    s = req["species"]
    sel = np.flatnonzero(types == s) if isinstance(s, int) else None
    if typ == "Hexatic":
        return hexatic_psi(pos, box, req["params"]["k"], subset=sel)[1]
    if typ == "Nematic":
        return nematic_order(long_axes(species[s], ori[sel], dim))[0]
    if typ == "Cubatic":
        return cubatic_p4(particle_frames(ori[sel]))
    if typ == "ContinuousCoordination":
        r_c = req["params"].get("r_c") or 1.4 * max(2 * geo.circumradius(sp) for sp in species)
        return continuous_coordination(pos, box, float(r_c), req["params"].get("width"))[1]
    raise ValueError(typ)


def _rdf_entries(header, frames, species, types, labels, r_max=None, bins=100, name="rdf"):
    boxes = np.array([f["box_edges"] for f in frames], float)
    cap = float(boxes.min()) / 2
    if r_max is None:
        r_max = min(cap, 10.0 * max(2 * geo.circumradius(sp) for sp in species))
    elif r_max > cap:
        raise ColpackError("r_max_too_large", f"r_max {r_max} exceeds half the smallest box edge {cap}")
    data = [(_frame_arrays(header, f)[0], _frame_arrays(header, f)[1]) for f in frames]
    out = []
    ns = len(species)
    for a in range(ns):
        for b in range(a, ns):
            sa, sb = np.flatnonzero(types == a), np.flatnonzero(types == b)
            res = rdf(data, r_max, bins, sa, sb)
            out.append({"name": name, "pair": [a, b], "label": f"{labels[a]}-{labels[b]}",
                        "r": res["r"].tolist(), "g": res["g"].tolist(), "n_frames": len(frames)})
    return out


def analyze_run(run_dir, problem, requests):
    header, frames = engine.read_trajectory(os.path.join(run_dir, "trajectory.cpt"))
    species = [geo.ShapeSpec.from_dict(s) for s in header["species"]]
    types = np.asarray(header["type_of"])
    labels = _species_labels(problem)
    series = {"system.volume_fraction": [float(f["phi"]) for f in frames]}
    for req in requests:
        if req["type"] == "RDF":
            continue
        scope = "system" if req["species"] is None else labels[req["species"]]
        series[f"{scope}.{req['name']}"] = [float(evaluate_request(req, header, f, species, types))
                                            for f in frames]
    per, notes = {}, []
    starts = {}
    for name, vals in series.items():
        if len(vals) >= MIN_SERIES:
            starts[name] = detect_equilibration(vals)["eq_start_index"]
    if len(starts) < len(series):
        notes.append(f"series shorter than {MIN_SERIES} frames: equilibration not assessed, whole series used")
    cut = max(starts.values()) if starts else 0
    all_eq = bool(starts) and len(starts) == len(series)
    for name, vals in series.items():
        if name in starts:
            blk = detect_equilibration(vals, start=cut)
            eq = blk["equilibrated"]
        else:
            tail = np.asarray(vals[cut:], float)
            blk = {"eq_mean": float(tail.mean()), "eq_std": float(tail.std(ddof=1)) if len(tail) > 1 else 0.0,
                   "g": 1.0}
            eq = False
        all_eq = all_eq and eq
        per[name] = {"eq_mean": blk["eq_mean"], "eq_std": blk["eq_std"], "equilibrated": eq,
                     "eq_start_index": cut,
                     "detected_start_index": starts.get(name), "statistical_inefficiency": blk["g"]}
    tail_frames = frames[cut:]
    rdfs = _rdf_entries(header, tail_frames, species, types, labels)
    for req in requests:
        if req["type"] == "RDF":
            p = req["params"]
            rdfs += _rdf_entries(header, tail_frames, species, types, labels,
                                 p.get("r_max"), int(p.get("bins", 100)), req["name"])
    out = {"series": series,
           "equilibrium": {"equilibrated": all_eq, "eq_start_index": cut, "per_parameter": per},
           "rdf": rdfs, "n_frames": len(frames)}
    if notes:
        out["notes"] = notes
    return out


def build_analysis_results(working_dir, requests, progress=None):
    """Analyze every executed run; writes analysis_results.json and returns (path, run_errors)."""
    from . import workflow

    problem = workflow.load_problem(working_dir)
    summary = workflow.read_json(os.path.join(working_dir, workflow.EXECUTION_FILE))
    runs, errors = [], {}
    entries = summary["runs"]
    for pos, entry in enumerate(entries):
        k = entry["run_index"]
        if entry.get("status") != "ok":
            errors[str(k)] = "run failed during execution"
            continue
        run_dir = os.path.join(working_dir, f"run_{k}")
        try:
            res = analyze_run(run_dir, problem, requests)
        except ColpackError as exc:
            errors[str(k)] = f"{exc.code}: {exc.message}"
            continue
        runs.append({"run_index": k, "parameters": entry.get("parameters", {}), **res})
        if progress:
            progress((pos + 1) / len(entries))
    record = {"format_version": workflow.FORMAT_VERSION,
              "order_parameters": [{k: r[k] for k in ("type", "name", "params", "species")} for r in requests],
              "runs": runs}
    if errors:
        record["run_errors"] = errors
    path = os.path.join(working_dir, workflow.ANALYSIS_FILE)
    workflow.write_json(path, record)
    return path, errors
