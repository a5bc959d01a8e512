"""The benchmark tasks replayed as direct tool-call scripts at the server boundary.

Each routine script receives a scratch root plus scratch copies of its
fixtures and raises AssertionError when the outcome differs from the expected
behaviour for that task. Adversarial entries hold the single tool call a
careless agent would make and the error code the boundary must return.
"""

import os
import time

from colpack import geometry as geo
from colpack import server, workflow
from colpack.bench.tasks import load_tasks


def call(name, args):
    payload, is_error = server.call_tool(name, args)
    assert not is_error, f"{name} failed: {payload}"
    return payload


def wait_job(job, timeout=300.0):
    t0 = time.time()
    while True:
        rec = call("colpack_job_status", {"job_id": job["job_id"], "working_dir": job["working_dir"]})
        if rec["state"] in ("done", "done_with_errors", "failed"):
            return rec
        assert time.time() - t0 < timeout, f"job {job['job_id']} still {rec['state']}"
        time.sleep(0.05)


def analyze(wd, extras=None):
    args = {"working_dir": wd}
    if extras is not None:
        args["extra_order_params"] = extras
    rec = wait_job(call("colpack_analyze", args))
    assert rec["state"] == "done", rec
    return workflow.read_json(rec["result"]["analysis_results"])


def eq_means(record, name):
    return [run["equilibrium"]["per_parameter"][name]["eq_mean"] for run in record["runs"]]


# -- setup ---------------------------------------------------------------------------------

def setup_2d_disk(root, fx):
    p = call("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 500,
                               "particle_shape_list": ["disk"], "working_dir": os.path.join(root, "w")})
    assert (p["dimension"], p["ensemble"], p["total_particle_number"]) == (2, "NVT", 500)
    assert [(s["shape"], s["count"]) for s in p["particle_specs"]] == [("disk", 500)]
    assert os.path.isfile(os.path.join(p["working_dir"], workflow.PROBLEM_FILE))


def setup_3d_sphere(root, fx):
    p = call("colpack_setup", {"dimension": 3, "ensemble": "NPT", "total_particle_number": 1000,
                               "particle_shape_list": ["sphere"], "working_dir": os.path.join(root, "w")})
    assert (p["dimension"], p["ensemble"], p["total_particle_number"]) == (3, "NPT", 1000)
    assert [s["shape"] for s in p["particle_specs"]] == ["sphere"]


def setup_2d_bidisperse_disks(root, fx):
    p = call("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 1000,
                               "particle_shape_list": ["disk", "disk"], "working_dir": os.path.join(root, "w")})
    assert [s["shape"] for s in p["particle_specs"]] == ["disk", "disk"]
    assert [s["count"] for s in p["particle_specs"]] == [500, 500]
    # no diameters invented at setup: both components carry the catalog default
    assert p["particle_specs"][0]["params"] == p["particle_specs"][1]["params"]


def setup_2d_disk_capsule(root, fx):
    p = call("colpack_setup", {"dimension": 2, "ensemble": "NPT", "total_particle_number": 800,
                               "particle_shape_list": ["disk", "capsule"], "working_dir": os.path.join(root, "w")})
    assert (p["dimension"], p["ensemble"], p["total_particle_number"]) == (2, "NPT", 800)
    assert sorted(s["shape"] for s in p["particle_specs"]) == ["capsule", "disk"]
    assert sum(s["count"] for s in p["particle_specs"]) == 800


# -- planning ----------------------------------------------------------------------------------

STEPS = 10_000


def plan_vf_sweep_nvt(root, fx):
    wd = fx["2d_nvt_disk_capsule_setup"]
    p = call("colpack_plan", {"working_dir": wd, "tunable_parameters": {"volume_fraction": [0.3, 0.5, 0.7]},
                              "sample_steps": STEPS})
    assert p["n_runs"] == 3
    assert [r["parameters"]["volume_fraction"] for r in p["runs"]] == [0.3, 0.5, 0.7]


def plan_p_sweep_npt(root, fx):
    wd = fx["2d_npt_disk_capsule_setup"]
    p = call("colpack_plan", {"working_dir": wd, "tunable_parameters": {"P": [1.0, 5.0, 10.0]},
                              "sample_steps": STEPS})
    assert p["n_runs"] == 3
    assert [r["parameters"]["P"] for r in p["runs"]] == [1.0, 5.0, 10.0]


def plan_diameter_sweep_bidisperse(root, fx):
    wd = fx["2d_nvt_disk_disk_setup"]
    p = call("colpack_plan", {"working_dir": wd,
                              "baseline_parameters": {"volume_fraction": 0.5, "particle_specs.1.diameter": 1.0},
                              "tunable_parameters": {"particle_specs.0.diameter": [0.5, 1.0, 1.5]},
                              "sample_steps": STEPS})
    assert p["n_runs"] == 3
    assert [r["parameters"]["particle_specs.0.diameter"] for r in p["runs"]] == [0.5, 1.0, 1.5]
    assert all(r["parameters"]["particle_specs.1.diameter"] == 1.0 for r in p["runs"])
    assert all(r["parameters"]["volume_fraction"] == 0.5 for r in p["runs"])


def plan_relative_vf_sweep(root, fx):
    wd = fx["2d_nvt_disk_capsule_setup"]
    ratios = [0.5, 1.0, 2.0]
    p = call("colpack_plan", {"working_dir": wd, "baseline_parameters": {"volume_fraction": 0.4},
                              "tunable_parameters": {"particle_specs.1.relative_volume_fraction": ratios},
                              "sample_steps": STEPS})
    assert p["n_runs"] == 3
    plan = workflow.load_plan(wd)
    for run, r in zip(plan["runs"], ratios):
        assert run["parameters"]["particle_specs.0.relative_volume_fraction"] == 1.0
        assert run["parameters"]["particle_specs.1.relative_volume_fraction"] == r
        counts = run["counts"]
        assert sum(counts) == 500 and min(counts) >= 1
        w = [q / geo.shape_measure(geo.ShapeSpec.from_dict(s)) for q, s in zip((1.0, r), run["species"])]
        # each species volume within one particle volume of the exact N_i ~ R_i / v_i split
        assert all(abs(c - 500 * x / sum(w)) < 1 for c, x in zip(counts, w))


def plan_two_axis_sweep(root, fx):
    wd = fx["2d_nvt_disk_capsule_setup"]
    p = call("colpack_plan", {"working_dir": wd, "baseline_parameters": {"volume_fraction": 0.5},
                              "tunable_parameters": {"volume_fraction": [0.3, 0.5, 0.7],
                                                     "particle_specs.1.length": [2.0, 3.0, 4.0]},
                              "sample_steps": STEPS})
    assert p["n_runs"] == 6
    pairs = [(r["parameters"]["volume_fraction"], r["parameters"]["particle_specs.1.length"]) for r in p["runs"]]
    base_len = workflow.load_problem(wd)["particle_specs"][1]["params"]["length"]
    assert pairs == [(0.3, base_len), (0.5, base_len), (0.7, base_len), (0.5, 2.0), (0.5, 3.0), (0.5, 4.0)]


# -- analysis ------------------------------------------------------------------------------------

def analyze_2d_disks_default(root, fx):
    rec = analyze(fx["2d_nvt_disk"])
    assert len(rec["runs"]) == 4
    psi6 = eq_means(rec, "disk_0.hexatic_6")
    assert len(psi6) == 4 and all(0.0 <= v <= 1.0 for v in psi6)


def analyze_2d_disks_interpret(root, fx):
    rec = analyze(fx["2d_nvt_disk"])
    phi = [run["parameters"]["volume_fraction"] for run in rec["runs"]]
    psi6 = eq_means(rec, "disk_0.hexatic_6")
    jumps = [b - a for a, b in zip(psi6, psi6[1:])]
    onset = phi[1 + max(range(len(jumps)), key=jumps.__getitem__)]
    assert onset == 0.7, (phi, psi6)


def analyze_2d_disks_extra_hexatic(root, fx):
    extras = [{"name": "hexatic_4", "type": "Hexatic", "params": {"k": 4}},
              {"name": "hexatic_3", "type": "Hexatic", "params": {"k": 3}}]
    rec = analyze(fx["2d_nvt_disk"], extras)
    for run in rec["runs"]:
        assert {"disk_0.hexatic_6", "disk_0.hexatic_4", "disk_0.hexatic_3"} <= set(run["series"])


def analyze_2d_mixture_per_shape(root, fx):
    rec = analyze(fx["2d_nvt_disk_capsule"], [{"type": "ContinuousCoordination"}])
    assert len(rec["runs"]) == 2
    for run in rec["runs"]:
        assert {"disk_0.hexatic_6", "capsule_1.nematic", "system.continuous_coordination"} <= set(run["series"])


ROUTINE = {f.__name__: f for f in (
    setup_2d_disk, setup_3d_sphere, setup_2d_bidisperse_disks, setup_2d_disk_capsule,
    plan_vf_sweep_nvt, plan_p_sweep_npt, plan_diameter_sweep_bidisperse, plan_relative_vf_sweep,
    plan_two_axis_sweep,
    analyze_2d_disks_default, analyze_2d_disks_interpret, analyze_2d_disks_extra_hexatic,
    analyze_2d_mixture_per_shape,
)}

# task id -> (tool, arguments with {root}/{fixture} placeholders resolved by the caller, error code)
ADVERSARIAL = {
    "setup_2d_incompatible_ellipse_capsule": (
        "colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 600,
                          "particle_shape_list": ["ellipse", "capsule"]}, "incompatible_mixture"),
    "setup_dim_mismatch_disk_cube": (
        "colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 500,
                          "particle_shape_list": ["disk", "cube"]}, "dimension_shape_mismatch"),
    "plan_invalid_p_on_nvt": (
        "colpack_plan", {"tunable_parameters": {"P": [1.0, 5.0, 10.0]}, "sample_steps": STEPS},
        "invalid_tunable_for_ensemble"),
    "analyze_2d_disks_cubatic_adversarial": (
        "colpack_analyze", {"extra_order_params": [{"type": "Cubatic"}]}, "invalid_for_system"),
}


def tasks_by_id():
    return {t.id: t for t in load_tasks()}


def run_adversarial(task_id, root, fx):
    """Make the careless call; return the error code the boundary reported (None if it succeeded)."""
    task = tasks_by_id()[task_id]
    tool, args, _ = ADVERSARIAL[task_id]
    args = dict(args)
    args["working_dir"] = fx[task.fixtures[0]] if task.fixtures else os.path.join(root, "w")
    payload, is_error = server.call_tool(tool, args)
    return payload["error"]["code"] if is_error else None
