"""Record the shipped replay traces by driving the real tools with scripted assistant turns.

Usage: python3 scripts/make_canned_traces.py [out_dir]
"""

import json
import os
import sys
import tempfile

from colpack import workflow
from colpack.bench import (AssistantTurn, LiveToolbox, ToolCall, generate_fixtures, load_tasks, run_task,
                           save_trace, score_trace)
from colpack.bench.tasks import task_by_id

MODEL = "scripted/reference"
WORK = "/work"


def usage(i):
    return {"fresh_input_tokens": 900 + 150 * i, "cache_read_input_tokens": 1800 if i else 0,
            "output_tokens": 120 + 40 * i, "cost": round(0.0015 + 0.0004 * i, 6)}


class ScriptedClient:
    model = MODEL

    def __init__(self, turns):
        self.turns = list(turns)
        self.i = 0

    def complete(self, messages, tools):
        text, calls = self.turns[self.i]
        turn = AssistantTurn(text, [ToolCall(f"call_{self.i}_{k}", n, a) for k, (n, a) in enumerate(calls)],
                             usage(self.i))
        self.i += 1
        return turn


class WaitingToolbox(LiveToolbox):
    """Lets background jobs finish before a status poll so the recording is deterministic."""

    def call(self, call):
        if call.name == "colpack_job_status":
            workflow.REGISTRY.wait(call.arguments["job_id"])
        return super().call(call)


def script_for(kind, fx):
    return {
        "setup_clean": ("setup_2d_disk", [
            ("", [("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 500,
                                     "particle_shape_list": ["disk"], "working_dir": "hard_disks_500"})]),
            ("The 2D NVT problem with 500 hard disks is set up in hard_disks_500. Stopping after setup.", [])]),
        "setup_off_rail": ("setup_2d_disk_capsule", [
            ("", [("colpack_setup", {"dimension": 2, "ensemble": "NPT", "total_particle_number": 800,
                                     "particle_shape_list": ["disk", "capsule"], "working_dir": "disk_capsule"})]),
            ("Setup done. I will also plan a pressure sweep.",
             [("colpack_plan", {"working_dir": "disk_capsule", "tunable_parameters": {"P": [1.0, 5.0]},
                                "sample_steps": 10000})]),
            ("Planned.", [])]),
        "setup_no_tool": ("setup_3d_sphere", [
            ("To simulate 1000 hard spheres in 3D at constant pressure you would choose a box, place the "
             "spheres on a lattice and run NPT Monte Carlo sweeps.", [])]),
        "setup_adversarial_refusal": ("setup_2d_incompatible_ellipse_capsule", [
            ("Ellipses cannot share a hard-particle simulation with capsules: ellipses need the ellipsoid "
             "overlap test while capsules need the convex-polytope one, so this mixture is not supported. "
             "Would you like to replace the ellipses with disks, or drop the capsules?", [])]),
        "planning_clean": ("plan_two_axis_sweep", [
            ("", [("colpack_plan", {"working_dir": fx["2d_nvt_disk_capsule_setup"],
                                    "baseline_parameters": {"volume_fraction": 0.5},
                                    "tunable_parameters": {"volume_fraction": [0.3, 0.5, 0.7],
                                                           "particle_specs.1.length": [2.0, 3.0, 4.0]},
                                    "sample_steps": 10000})]),
            ("Planned 6 runs: three volume fractions and three capsule lengths, each varied from the "
             "baseline volume_fraction 0.5.", [])]),
        "planning_off_rail": ("plan_vf_sweep_nvt", [
            ("", [("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 500,
                                     "particle_shape_list": ["disk", "capsule"],
                                     "working_dir": fx["2d_nvt_disk_capsule_setup"]})]),
            ("Re-created the problem.", [])]),
        "planning_no_tool": ("plan_p_sweep_npt", [
            ("A pressure sweep at P = 1, 5 and 10 gives three runs, one per pressure.", [])]),
        "planning_adversarial_refusal": ("plan_invalid_p_on_nvt", [
            ("This problem uses the NVT ensemble, where the box volume is fixed and pressure is not a "
             "tunable parameter. Should I set up an NPT version of the system instead, or sweep "
             "volume_fraction?", [])]),
        "analysis_clean": ("analyze_2d_disks_default", [
            ("", [("colpack_analyze", {"working_dir": fx["2d_nvt_disk"]})]),
            ("", [("colpack_job_status", {"job_id": None})]),  # id filled in at run time
            ("Analysis finished; hexatic_6 rises with volume fraction across the four runs.", [])]),
        "analysis_off_rail": ("analyze_2d_disks_extra_hexatic", [
            ("", [("colpack_execute", {"working_dir": fx["2d_nvt_disk"]})]),
            ("Re-ran the simulations.", [])]),
        "analysis_no_tool": ("analyze_2d_disks_interpret", [
            ("Hard disks usually develop hexagonal order around a volume fraction of 0.7.", [])]),
        "analysis_adversarial_refusal": ("analyze_2d_disks_cubatic_adversarial", [
            ("Cubatic order measures the alignment of cube-symmetric particle frames in 3D, so it is "
             "meaningless for isotropic 2D disks. Did you mean Hexatic with k = 4 to look for square "
             "order, or a 3D cube system?", [])]),
    }[kind]


# success, off_rail, no_expected_tool_call, needs_review, candidate_pass
EXPECTED = {
    "setup_clean": (True, False, False, False, None),
    "setup_off_rail": (False, True, False, False, None),
    "setup_no_tool": (False, False, True, False, None),
    "setup_adversarial_refusal": (True, False, True, True, True),
    "planning_clean": (True, False, False, False, None),
    "planning_off_rail": (False, True, True, False, None),
    "planning_no_tool": (False, False, True, False, None),
    "planning_adversarial_refusal": (True, False, True, True, True),
    "analysis_clean": (True, False, False, False, None),
    "analysis_off_rail": (False, True, True, False, None),
    "analysis_no_tool": (False, False, True, False, None),
    "analysis_adversarial_refusal": (True, False, True, True, True),
}
FLAGS = ("success", "off_rail", "no_expected_tool_call", "needs_review", "candidate_pass")


class JobAwareClient(ScriptedClient):
    """Fills the job id from the previous tool result into a status poll."""

    def complete(self, messages, tools):
        text, calls = self.turns[self.i]
        if calls and calls[0][0] == "colpack_job_status":
            last = json.loads(messages[-1]["content"])
            calls = [("colpack_job_status", {"job_id": last["job_id"]})]
            self.turns[self.i] = (text, calls)
        return super().complete(messages, tools)


def main(out_dir):
    tasks = load_tasks()
    expected = {}
    with tempfile.TemporaryDirectory() as root:
        fx = generate_fixtures(os.path.join(root, "fixtures"))
        for stage in ("setup", "planning", "analysis"):
            for flavour in ("clean", "off_rail", "no_tool", "adversarial_refusal"):
                kind = f"{stage}_{flavour}"
                task_id, turns = script_for(kind, fx)
                task = task_by_id(tasks, task_id)
                scratch = os.path.join(root, "scratch", kind)
                os.makedirs(scratch)
                trace = run_task(task, JobAwareClient(turns), WaitingToolbox(scratch), fx)
                path = os.path.join(out_dir, f"{kind}.jsonl")
                save_trace(trace, path)
                with open(path) as fh:
                    text = fh.read()
                text = text.replace(os.path.join(root, "scratch", kind), WORK).replace(
                    os.path.join(root, "fixtures"), "/fixtures")
                with open(path, "w") as fh:
                    fh.write(text)
                want = dict(zip(FLAGS, EXPECTED[kind]))
                got = score_trace(trace, task).to_dict()
                if any(got[k] != v for k, v in want.items()):
                    raise SystemExit(f"{kind}: scored {got}, expected {want}")
                expected[kind] = {"task_id": task_id, **want}
    with open(os.path.join(out_dir, "expected_verdicts.json"), "w") as fh:
        json.dump(expected, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "src", "colpack", "bench", "data", "traces"))
