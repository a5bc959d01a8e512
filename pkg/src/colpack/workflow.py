"""Stage tools: setup, plan, execute, analyze, plus capabilities and job status.

Each stage persists a JSON artifact in the working directory and refuses to
run before the artifact of the previous stage exists.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import threading
import time
import traceback
import uuid
from dataclasses import asdict, dataclass, field

from . import analysis, engine, kernel
from . import geometry as geo
from .errors import ColpackError

PROBLEM_FILE = "simulation_problem.json"
PLAN_FILE = "simulation_plan.json"
EXECUTION_FILE = "execution_summary.json"
ANALYSIS_FILE = "analysis_results.json"
FORMAT_VERSION = 1

DEFAULT_RECORD_PERIOD = 100
DEFAULT_SEED = 0
DEFAULT_TUNING_SWEEPS = 2000

PATH_GRAMMAR = ("volume_fraction | P | particle_specs.<i>.<param> | "
                "particle_specs.<i>.relative_volume_fraction")
MIXTURE_RULE = ("ellipse/ellipsoid shapes cannot share a simulation with polygon, polyhedron or "
                "capsule shapes; disks/spheres mix with either family")


# -- artifact helpers ------------------------------------------------------------

def write_json(path, obj):
    tmp = f"{path}.tmp-{uuid.uuid4().hex[:8]}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require(working_dir, name, code, what):
    path = os.path.join(working_dir, name)
    if not os.path.isfile(path):
        raise ColpackError(code, f"{what} not found in {working_dir}")
    return read_json(path)


def load_problem(working_dir):
    return _require(working_dir, PROBLEM_FILE, "missing_setup", "simulation_problem.json")


def load_plan(working_dir):
    return _require(working_dir, PLAN_FILE, "missing_plan", "simulation_plan.json")


# -- capabilities ------------------------------------------------------------------

def capabilities():
    shapes = {}
    for dim, kinds in ((2, geo.SHAPES_2D), (3, geo.SHAPES_3D)):
        shapes[str(dim)] = [{"name": geo.public_name(k), "parameters": dict(geo.SHAPE_DEFAULTS[k]),
                             "orientable": k not in geo.ROUND_KINDS} for k in kinds]
    return {
        "dimensions": [2, 3],
        "shapes": shapes,
        "ensembles": ["NVT", "NPT"],
        "parameter_paths": PATH_GRAMMAR,
        "ensemble_targets": {"NVT": "volume_fraction", "NPT": "P"},
        "mixture_restriction": MIXTURE_RULE,
        "order_parameter_types": list(analysis.ORDER_PARAM_TYPES),
        "defaults": {"record_period": DEFAULT_RECORD_PERIOD, "seed": DEFAULT_SEED,
                     "tuning_sweeps": DEFAULT_TUNING_SWEEPS},
        "required": {"setup": ["dimension", "ensemble", "total_particle_number", "particle_shape_list"],
                     "plan": ["sample_steps", "ensemble target (baseline or tunable)"]},
        "geometry_units": "ellipse a, b are semi-axes; ellipsoid a, b, c are full axes; other lengths are full extents",
    }


# -- setup ---------------------------------------------------------------------------

def _split_counts(n, k):
    base, rem = divmod(n, k)
    return [base + (1 if i < rem else 0) for i in range(k)]


def _versioned_dir(working_dir):
    path = os.path.abspath(working_dir)
    if not os.path.exists(path) or (os.path.isdir(path) and not os.listdir(path)):
        return path
    k = 2
    while True:
        cand = f"{path}_v{k}"
        if not os.path.exists(cand) or (os.path.isdir(cand) and not os.listdir(cand)):
            return cand
        k += 1


def _resolve_shapes(particle_shape_list, dimension):
    if not particle_shape_list:
        raise ColpackError("empty_mixture", "particle_shape_list needs at least one shape")
    names = [str(s).strip().lower() for s in particle_shape_list]
    for nm in names:
        if nm != "capsule":
            geo.canonical_kind(nm)
    dims = {geo.shape_dimension(nm) for nm in names if nm != "capsule"}
    if len(dims) > 1:
        raise ColpackError("dimension_shape_mismatch",
                           f"shapes {names} belong to different dimensions; no single dimension fits",
                           shapes=names)
    if dimension is not None and dims and dims != {dimension}:
        raise ColpackError("dimension_shape_mismatch",
                           f"shapes {names} are not {dimension}D shapes", shapes=names)
    return [geo.canonical_kind(nm, dimension) for nm in names]


def setup_problem(dimension, ensemble, total_particle_number, particle_shape_list, working_dir,
                  particle_counts=None, particle_params=None):
    """Validate a problem statement and persist it; returns the stored record."""
    if dimension is not None:
        try:
            dimension = int(dimension)
        except (TypeError, ValueError):
            raise ColpackError("invalid_dimension", f"dimension must be 2 or 3, got {dimension!r}") from None
        if dimension not in (2, 3):
            raise ColpackError("invalid_dimension", f"dimension must be 2 or 3, got {dimension}")
    kinds = _resolve_shapes(particle_shape_list, dimension)
    if dimension is None:
        raise ColpackError("missing_parameter", "dimension is required")
    if ensemble is None:
        raise ColpackError("missing_parameter", "ensemble is required")
    ensemble = str(ensemble).upper()
    if ensemble not in ("NVT", "NPT"):
        raise ColpackError("invalid_ensemble", f"ensemble must be NVT or NPT, got {ensemble!r}")
    try:
        n = int(total_particle_number)
    except (TypeError, ValueError):
        raise ColpackError("invalid_particle_number", "total_particle_number must be an integer") from None
    if n != total_particle_number or n < 2:
        raise ColpackError("invalid_particle_number", f"total_particle_number must be an integer >= 2, got {total_particle_number!r}")
    params = list(particle_params) if particle_params else [None] * len(kinds)
    if len(params) != len(kinds):
        raise ColpackError("invalid_particle_specs", "particle_params must match particle_shape_list")
    shapes = [geo.ShapeSpec(k, dict(p) if p else {}) for k, p in zip(kinds, params)]
    family = geo.resolve_family(shapes)
    if particle_counts is not None:
        counts = [int(c) for c in particle_counts]
        if len(counts) != len(kinds) or sum(counts) != n or min(counts) < 1:
            raise ColpackError("invalid_particle_number",
                               f"particle_counts {list(particle_counts)} must give each species >= 1 and sum to {n}")
    else:
        if n < len(kinds):
            raise ColpackError("invalid_particle_number", "fewer particles than species")
        counts = _split_counts(n, len(kinds))
    if working_dir is None:
        raise ColpackError("missing_parameter", "working_dir is required")
    path = _versioned_dir(working_dir)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ColpackError("io_error", f"cannot create {path}: {exc}") from exc
    problem = {
        "format_version": FORMAT_VERSION,
        "dimension": dimension,
        "ensemble": ensemble,
        "total_particle_number": n,
        "particle_specs": [{"shape": geo.public_name(s.kind), "kind": s.kind, "count": c,
                            "params": dict(s.params)} for s, c in zip(shapes, counts)],
        "integrator_family": family.value,
        "working_dir": path,
        "requested_working_dir": os.path.abspath(working_dir),
    }
    write_json(os.path.join(path, PROBLEM_FILE), problem)
    return problem


# -- planning --------------------------------------------------------------------------

def _check_value(path, value):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ColpackError("invalid_parameter_value", f"{path} must be numeric, got {value!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise ColpackError("non_positive_value", f"{path} must be > 0, got {value!r}")
    if path == "volume_fraction" and v >= 1.0:
        raise ColpackError("invalid_parameter_value", f"volume_fraction must be < 1, got {value!r}")
    return v


def validate_path(problem, path):
    """Return the normalized parameter path or raise the taxonomy error."""
    ens = problem["ensemble"]
    if path == "volume_fraction":
        if ens != "NVT":
            raise ColpackError("invalid_tunable_for_ensemble",
                               "volume_fraction is fixed by the box only under NVT; this problem is NPT (use P)")
        return path
    if path in ("P", "pressure"):
        if ens != "NPT":
            raise ColpackError("invalid_tunable_for_ensemble",
                               "pressure is not a valid parameter under NVT; switch the ensemble to NPT or sweep volume_fraction")
        return "P"
    parts = path.split(".")
    if len(parts) == 3 and parts[0] == "particle_specs":
        try:
            i = int(parts[1])
        except ValueError:
            raise ColpackError("unknown_parameter_path", f"bad species index in {path!r}") from None
        specs = problem["particle_specs"]
        if not 0 <= i < len(specs):
            raise ColpackError("species_index_out_of_range",
                               f"{path!r}: species index {i} outside 0..{len(specs) - 1}")
        name = parts[2]
        if name == "relative_volume_fraction" or name in geo.SHAPE_PARAMS[specs[i]["kind"]]:
            return path
        raise ColpackError("unknown_parameter_path",
                           f"{specs[i]['shape']} has no parameter {name!r}",
                           allowed=list(geo.SHAPE_PARAMS[specs[i]["kind"]]) + ["relative_volume_fraction"])
    raise ColpackError("unknown_parameter_path", f"unknown parameter path {path!r}; grammar: {PATH_GRAMMAR}")


def resolve_counts(n, shapes, ratios):
    """Integer counts with N_i proportional to R_i / v_i, sum N, each >= 1 (largest remainder)."""
    w = [r / geo.shape_measure(s) for r, s in zip(ratios, shapes)]
    tot = sum(w)
    ideal = [n * x / tot for x in w]
    counts = [max(1, int(math.floor(x))) for x in ideal]
    while sum(counts) > n:
        j = max(range(len(counts)), key=lambda i: (counts[i] - ideal[i], counts[i]))
        counts[j] -= 1
    order = sorted(range(len(counts)), key=lambda i: -(ideal[i] - counts[i]))
    k = 0
    while sum(counts) < n:
        counts[order[k % len(order)]] += 1
        k += 1
    return counts


def _resolve_run(problem, params):
    specs = problem["particle_specs"]
    shapes = []
    resolved = {}
    ratios = [None] * len(specs)
    for i, sp in enumerate(specs):
        geom = dict(sp["params"])
        for name in geo.SHAPE_PARAMS[sp["kind"]]:
            key = f"particle_specs.{i}.{name}"
            if key in params:
                geom[name] = params[key]
            resolved[key] = geom[name]
        shapes.append(geo.ShapeSpec(sp["kind"], geom))
        key = f"particle_specs.{i}.relative_volume_fraction"
        if key in params:
            ratios[i] = params[key]
    counts = [sp["count"] for sp in specs]
    if any(r is not None for r in ratios):
        ratios = [1.0 if r is None else r for r in ratios]
        counts = resolve_counts(problem["total_particle_number"], shapes, ratios)
        for i, r in enumerate(ratios):
            resolved[f"particle_specs.{i}.relative_volume_fraction"] = r
    target_key = "volume_fraction" if problem["ensemble"] == "NVT" else "P"
    if target_key not in params:
        raise ColpackError("missing_parameter",
                           f"{target_key} must be given as a baseline or tunable parameter (no silent default)")
    resolved[target_key] = params[target_key]
    for i, c in enumerate(counts):
        resolved[f"particle_specs.{i}.count"] = c
    return shapes, counts, params[target_key], resolved


def plan_runs(working_dir, baseline_parameters=None, tunable_parameters=None, sample_steps=None,
              record_period=DEFAULT_RECORD_PERIOD, seed=DEFAULT_SEED, tuning_sweeps=DEFAULT_TUNING_SWEEPS):
    """Expand baseline + per-axis sweeps into concrete runs (union over axes, not a product)."""
    problem = load_problem(working_dir)
    baseline = {}
    for path, value in (baseline_parameters or {}).items():
        baseline[validate_path(problem, path)] = _check_value(path, value)
    axes = []
    for path, values in (tunable_parameters or {}).items():
        norm = validate_path(problem, path)
        if isinstance(values, (int, float)):
            values = [values]
        values = list(values or [])
        if not values:
            raise ColpackError("invalid_plan", f"tunable parameter {path!r} has no values")
        axes.append((norm, [_check_value(path, v) for v in values]))
    if sample_steps is None:
        raise ColpackError("missing_parameter", "sample_steps is required (no default sweep budget)")
    for name, v, lo in (("sample_steps", sample_steps, 1), ("record_period", record_period, 1),
                        ("tuning_sweeps", tuning_sweeps, 0)):
        if int(v) != v or int(v) < lo:
            raise ColpackError("non_positive_value", f"{name} must be an integer >= {lo}, got {v!r}")
    combos = []
    if not axes:
        combos.append(dict(baseline))
    for path, values in axes:
        for v in values:
            p = dict(baseline)
            p[path] = v
            combos.append(p)
    runs = []
    for k, params in enumerate(combos):
        shapes, counts, target, resolved = _resolve_run(problem, params)
        directive = engine.RunDirective(problem["ensemble"], target, int(sample_steps), int(record_period),
                                        int(seed), int(tuning_sweeps))
        runs.append({
            "run_index": k,
            "parameters": resolved,
            "dimension": problem["dimension"],
            "species": [s.to_dict() for s in shapes],
            "counts": counts,
            "directive": directive.to_dict(),
        })
    plan = {
        "format_version": FORMAT_VERSION,
        "working_dir": os.path.abspath(working_dir),
        "baseline_parameters": baseline,
        "tunable_parameters": {p: v for p, v in axes},
        "sample_steps": int(sample_steps),
        "record_period": int(record_period),
        "seed": int(seed),
        "tuning_sweeps": int(tuning_sweeps),
        "n_runs": len(runs),
        "runs": runs,
    }
    write_json(os.path.join(working_dir, PLAN_FILE), plan)
    return plan


def estimate_cost(working_dir, sweeps_per_second=None):
    """Rough wall-time estimate for a plan (particle-moves over a measured kernel rate)."""
    plan = load_plan(working_dir)
    rate = sweeps_per_second or 4e6  # particle moves / s on the compiled kernel
    moves = 0
    for r in plan["runs"]:
        n = sum(r["counts"])
        moves += n * (r["directive"]["sample_steps"] + r["directive"]["tuning_sweeps"])
    return {"n_runs": len(plan["runs"]), "particle_moves": moves, "estimated_seconds": moves / rate}


# -- jobs -----------------------------------------------------------------------------------

@dataclass
class JobRecord:
    job_id: str
    stage: str
    working_dir: str
    state: str = "pending"
    progress: float = 0.0
    error: str | None = None
    run_errors: dict = field(default_factory=dict)
    result: dict = field(default_factory=dict)
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)

    def to_dict(self):
        return asdict(self)


_ORDER = {"pending": 0, "running": 1, "done": 2, "done_with_errors": 2, "failed": 2}


class JobRegistry:
    """In-memory job table mirrored to ``<working_dir>/jobs/<id>.json``."""

    def __init__(self):
        self._lock = threading.RLock()
        self._jobs = {}
        self._active = {}
        self._threads = {}
        self._last_write = {}

    def _persist(self, job, force=False):
        now = time.time()
        if not force and now - self._last_write.get(job.job_id, 0.0) < 0.5:
            return
        self._last_write[job.job_id] = now
        d = os.path.join(job.working_dir, "jobs")
        os.makedirs(d, exist_ok=True)
        write_json(os.path.join(d, f"{job.job_id}.json"), job.to_dict())

    def update(self, job, **changes):
        with self._lock:
            state = changes.get("state")
            if state is not None and _ORDER[state] < _ORDER[job.state]:
                raise RuntimeError(f"job state cannot go from {job.state} to {state}")
            for k, v in changes.items():
                setattr(job, k, v)
            job.updated = time.time()
            self._persist(job, force="state" in changes or "result" in changes)
            if job.state in ("done", "done_with_errors", "failed"):
                self._active.pop(os.path.abspath(job.working_dir), None)

    def start(self, stage, working_dir, target, defer=False, job_id=None):
        key = os.path.abspath(working_dir)
        with self._lock:
            if key in self._active:
                other = self._jobs[self._active[key]]
                raise ColpackError("job_conflict",
                                   f"{other.stage} job {other.job_id} is still {other.state} for {working_dir}",
                                   job_id=other.job_id)
            job = JobRecord(job_id or new_job_id(), stage, key)
            self._jobs[job.job_id] = job
            self._active[key] = job.job_id
            self._persist(job, force=True)
        th = threading.Thread(target=self._run, args=(job, target), daemon=True,
                              name=f"colpack-{stage}-{job.job_id}")
        self._threads[job.job_id] = th
        if not defer:
            th.start()
        return job

    def launch(self, job_id):
        """Start a job created with ``defer=True``."""
        th = self._threads[job_id]
        if not th.is_alive() and th.ident is None:
            th.start()

    def _run(self, job, target):
        self.update(job, state="running")
        try:
            result, run_errors = target(job)
            state = "done_with_errors" if run_errors else "done"
            self.update(job, state=state, progress=1.0, result=result, run_errors=run_errors)
        except ColpackError as exc:
            self.update(job, state="failed", error=f"{exc.code}: {exc.message}")
        except Exception as exc:  # worker must never die silently
            self.update(job, state="failed", error=f"internal_error: {exc!r}\n{traceback.format_exc()}")

    def get(self, job_id, working_dir=None):
        with self._lock:
            if job_id in self._jobs:
                return self._jobs[job_id]
        if working_dir:
            path = os.path.join(working_dir, "jobs", f"{job_id}.json")
            if os.path.isfile(path):
                return JobRecord(**read_json(path))
        raise ColpackError("unknown_job", f"no job {job_id!r}")

    def wait(self, job_id, timeout=None):
        th = self._threads.get(job_id)
        if th is not None:
            th.join(timeout)
        return self.get(job_id)


REGISTRY = JobRegistry()


def new_job_id():
    return uuid.uuid4().hex[:12]


def active_job_on_disk(working_dir):
    """A pending or running job recorded under ``working_dir/jobs`` (possibly by another process)."""
    d = os.path.join(working_dir, "jobs")
    if not os.path.isdir(d):
        return None
    for name in sorted(os.listdir(d)):
        if name.endswith(".json"):
            try:
                rec = read_json(os.path.join(d, name))
            except (OSError, ValueError):
                continue
            if rec.get("state") in ("pending", "running"):
                return rec
    return None


def _replace_dir(tmp, final):
    if os.path.exists(final):
        old = f"{final}.old-{uuid.uuid4().hex[:6]}"
        os.rename(final, old)
        os.rename(tmp, final)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.rename(tmp, final)


def _execute_worker(working_dir, plan):
    runs = plan["runs"]

    def work(job):
        t0 = time.time()
        summary = []
        errors = {}
        for pos, run in enumerate(runs):
            k = run["run_index"]
            final = os.path.join(working_dir, f"run_{k}")
            tmp = os.path.join(working_dir, f".run_{k}.tmp-{job.job_id}")
            shutil.rmtree(tmp, ignore_errors=True)

            def progress(frac, pos=pos):
                REGISTRY.update(job, progress=(pos + frac) / len(runs))

            try:
                os.makedirs(tmp)
                write_json(os.path.join(tmp, "run_spec.json"), run)
                res = engine.run_simulation(run, tmp, progress=progress)
                _replace_dir(tmp, final)
                entry = res.to_dict()
                entry["output_dir"] = final
                entry.update(status="ok", parameters=run["parameters"])
            except ColpackError as exc:
                shutil.rmtree(tmp, ignore_errors=True)
                errors[str(k)] = f"{exc.code}: {exc.message}"
                entry = {"run_index": k, "status": "failed", "error": exc.to_dict(),
                         "parameters": run["parameters"]}
            summary.append(entry)
            REGISTRY.update(job, progress=(pos + 1) / len(runs))
        record = {"format_version": FORMAT_VERSION, "working_dir": working_dir, "backend": kernel.BACKEND,
                  "n_runs": len(runs), "n_failed": len(errors), "total_wall_time_s": time.time() - t0,
                  "runs": summary}
        path = os.path.join(working_dir, EXECUTION_FILE)
        write_json(path, record)
        return {"execution_summary": path,
                "run_dirs": [r.get("output_dir") for r in summary if r["status"] == "ok"]}, errors

    return work


def execute_runs(working_dir, wait=False, defer=False, job_id=None):
    working_dir = os.path.abspath(working_dir)
    plan = load_plan(working_dir)
    if not plan.get("runs"):
        raise ColpackError("invalid_plan", "the plan contains no runs")
    job = REGISTRY.start("execute", working_dir, _execute_worker(working_dir, plan), defer=defer and not wait,
                         job_id=job_id)
    if wait:
        job = REGISTRY.wait(job.job_id)
    return job


def analyze_runs(working_dir, extra_order_params=None, wait=False, defer=False, job_id=None):
    working_dir = os.path.abspath(working_dir)
    problem = load_problem(working_dir)
    _require(working_dir, EXECUTION_FILE, "missing_execution", "execution_summary.json")
    requests = analysis.validate_requests(problem, extra_order_params or [])

    def work(job):
        path, run_errors = analysis.build_analysis_results(
            working_dir, requests, progress=lambda f: REGISTRY.update(job, progress=f))
        return {"analysis_results": path}, run_errors

    job = REGISTRY.start("analyze", working_dir, work, defer=defer and not wait, job_id=job_id)
    if wait:
        job = REGISTRY.wait(job.job_id)
    return job


def job_status(job_id, working_dir=None):
    return REGISTRY.get(job_id, working_dir)
