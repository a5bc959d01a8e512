"""Working directories the planning and analysis prompts point at, built with the real pipeline."""

from __future__ import annotations

import hashlib
import json
import os
import shutil

from .. import __version__, workflow

MANIFEST = "fixtures_manifest.json"

# setup arguments, optional counts and (for fully-run fixtures) the sweep
FIXTURE_SPECS = {
    "2d_nvt_disk_capsule_setup": {"setup": [2, "NVT", 500, ["disk", "capsule"]]},
    "2d_npt_disk_capsule_setup": {"setup": [2, "NPT", 500, ["disk", "capsule"]]},
    "2d_nvt_disk_disk_setup": {"setup": [2, "NVT", 1000, ["disk", "disk"]]},
    "2d_nvt_disk": {"setup": [2, "NVT", 100, ["disk"]],
                    "sweep": {"volume_fraction": [0.3, 0.5, 0.7, 0.8]}},
    "2d_nvt_disk_capsule": {"setup": [2, "NVT", 100, ["disk", "capsule"]], "counts": [50, 50],
                            "sweep": {"volume_fraction": [0.4, 0.6]}},
}


def fixture_hash(name, spec, sample_steps, record_period, seed):
    blob = json.dumps({"name": name, "spec": spec, "sample_steps": sample_steps, "record_period": record_period,
                       "seed": seed, "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _build(path, spec, sample_steps, record_period, seed):
    dim, ens, n, shapes = spec["setup"]
    workflow.setup_problem(dim, ens, n, shapes, path, particle_counts=spec.get("counts"))
    if "sweep" not in spec:
        return
    workflow.plan_runs(path, tunable_parameters=spec["sweep"], sample_steps=sample_steps,
                       record_period=record_period, seed=seed)
    job = workflow.execute_runs(path, wait=True)
    if job.state != "done":
        raise RuntimeError(f"fixture execution ended {job.state}: {job.error or job.run_errors}")
    job = workflow.analyze_runs(path, wait=True)
    if job.state != "done":
        raise RuntimeError(f"fixture analysis ended {job.state}: {job.error or job.run_errors}")


def generate_fixtures(out_dir, names=None, sample_steps=2000, record_period=100, seed=0, log=None):
    """Build (or reuse, when the content hash matches) the named fixtures; returns {name: path}."""
    out_dir = os.path.abspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    mpath = os.path.join(out_dir, MANIFEST)
    manifest = workflow.read_json(mpath) if os.path.exists(mpath) else {}
    paths = {}
    for name in names or list(FIXTURE_SPECS):
        spec = FIXTURE_SPECS[name]
        digest = fixture_hash(name, spec, sample_steps, record_period, seed)
        path = os.path.join(out_dir, name)
        if manifest.get(name) == digest and os.path.exists(os.path.join(path, workflow.PROBLEM_FILE)):
            paths[name] = path
            continue
        if log:
            log(f"building fixture {name}")
        shutil.rmtree(path, ignore_errors=True)
        _build(path, spec, sample_steps, record_period, seed)
        manifest[name] = digest
        workflow.write_json(mpath, manifest)
        paths[name] = path
    return paths
