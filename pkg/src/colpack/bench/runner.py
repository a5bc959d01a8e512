"""Tool-call loop for one benchmark task and the trace it records."""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

from .. import server
from .client import ReplayClient, empty_usage, openai_tools
from .tasks import TOOL_STAGE, render_prompt

STEP_CAP = 20


@dataclass
class Trace:
    task_id: str
    model: str
    status: str = "running"  # completed | off_rail | step_cap | errored
    events: list = field(default_factory=list)
    usage: dict = field(default_factory=empty_usage)

    def add_usage(self, u):
        for k in self.usage:
            self.usage[k] += u.get(k, 0)

    def to_dict(self):
        return {"task_id": self.task_id, "model": self.model, "status": self.status,
                "events": self.events, "usage": self.usage}

    def tool_calls(self):
        return [c for e in self.events if e["type"] == "assistant" for c in e.get("tool_calls", [])]

    def final_text(self):
        texts = [e.get("text", "") for e in self.events if e["type"] == "assistant"]
        return texts[-1] if texts else ""


def save_trace(trace, path):
    """Line-delimited records: a header, one line per event, then usage."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "header", "task_id": trace.task_id, "model": trace.model,
                             "status": trace.status}, sort_keys=True) + "\n")
        for ev in trace.events:
            fh.write(json.dumps({"record": "event", **ev}, sort_keys=True) + "\n")
        fh.write(json.dumps({"record": "usage", **trace.usage}, sort_keys=True) + "\n")
    return path


def load_trace(path):
    trace = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "header":
                trace = Trace(rec["task_id"], rec["model"], rec["status"])
            elif kind == "event":
                trace.events.append(rec)
            else:
                trace.usage = {**empty_usage(), **rec}
    if trace is None:
        raise ValueError(f"{path}: no header record")
    return trace


def canned_trace_paths():
    root = resources.files("colpack.bench").joinpath("data/traces")
    return sorted(str(p) for p in root.iterdir() if p.name.endswith(".jsonl"))


def canned_expectations():
    path = resources.files("colpack.bench").joinpath("data/traces/expected_verdicts.json")
    return json.loads(path.read_text(encoding="utf-8"))


class LiveToolbox:
    """Executes tool calls against the real workflow; relative paths resolve under ``root``."""

    def __init__(self, root):
        self.root = os.path.abspath(root)

    def call(self, call):
        args = dict(call.arguments)
        wd = args.get("working_dir")
        if isinstance(wd, str) and not os.path.isabs(wd):
            args["working_dir"] = os.path.join(self.root, wd)
        try:
            return server.call_tool(call.name, args)
        except server.InvalidArguments as exc:
            return {"error": {"code": "invalid_arguments", "message": str(exc)}}, True


class ReplayToolbox:
    """Returns the tool results recorded in a trace, matched by call id."""

    def __init__(self, trace):
        self._results = {e["id"]: e for e in trace.events if e["type"] == "tool_result"}

    def call(self, call):
        ev = self._results.get(call.id)
        if ev is None:
            return {"error": {"code": "replay_missing_result", "message": call.id}}, True
        return ev["content"], ev["is_error"]


def _system_prompt():
    return resources.files("colpack").joinpath("assets/colpack_skill.md").read_text(encoding="utf-8")


def run_task(task, client, toolbox, fixture_paths=None, boilerplate=None, step_cap=STEP_CAP,
             system_prompt=None, prompt=None):
    """Drive one task to completion, the step cap, an off-rail call or a transport error."""
    if prompt is None:
        prompt = render_prompt(task, fixture_paths, boilerplate)
    trace = Trace(task.id, client.model)
    trace.events.append({"type": "user", "text": prompt})
    messages = [{"role": "system", "content": system_prompt if system_prompt is not None else _system_prompt()},
                {"role": "user", "content": prompt}]
    tools = openai_tools(server.TOOL_SPECS)
    for _ in range(step_cap):
        try:
            turn = client.complete(messages, tools)
        except Exception as exc:  # transport or endpoint failure is part of the record
            trace.events.append({"type": "error", "message": f"{type(exc).__name__}: {exc}"})
            trace.status = "errored"
            return trace
        trace.add_usage(turn.usage)
        trace.events.append({"type": "assistant", "text": turn.text,
                             "tool_calls": [c.to_dict() for c in turn.tool_calls], "usage": turn.usage})
        if not turn.tool_calls:
            trace.status = "completed"
            return trace
        messages.append({"role": "assistant", "content": turn.text or None,
                         "tool_calls": [{"id": c.id, "type": "function",
                                         "function": {"name": c.name, "arguments": json.dumps(c.arguments)}}
                                        for c in turn.tool_calls]})
        for call in turn.tool_calls:
            stage = TOOL_STAGE.get(call.name)
            if stage is not None and stage != task.stage:
                trace.events.append({"type": "off_rail", "id": call.id, "name": call.name, "tool_stage": stage})
                trace.status = "off_rail"
                return trace
            payload, is_error = toolbox.call(call)
            trace.events.append({"type": "tool_result", "id": call.id, "name": call.name,
                                 "is_error": bool(is_error), "content": payload})
            messages.append({"role": "tool", "tool_call_id": call.id, "content": json.dumps(payload)})
    trace.status = "step_cap"
    return trace


def replay(trace, task):
    """Re-run ``task`` from a recorded trace without any network or simulation."""
    user = next((e["text"] for e in trace.events if e["type"] == "user"), None)
    return run_task(task, ReplayClient(trace), ReplayToolbox(trace), prompt=user)


def _scratch_fixtures(task, fixture_paths, scratch):
    local = {}
    for name in task.fixtures:
        dst = os.path.join(scratch, name)
        shutil.rmtree(dst, ignore_errors=True)
        shutil.copytree(fixture_paths[name], dst, ignore=shutil.ignore_patterns("jobs"))
        local[name] = dst
    return local


def run_bench(tasks, client_factory, models, fixture_paths, scratch_root, trace_dir,
              boilerplate=None, parallelism=4, step_cap=STEP_CAP):
    """Every task for every model; each task works on private copies of its fixtures."""
    os.makedirs(trace_dir, exist_ok=True)
    jobs = [(m, t) for m in models for t in tasks]

    def one(job):
        model, task = job
        safe = model.replace("/", "__")
        scratch = os.path.join(scratch_root, safe, task.id)
        os.makedirs(scratch, exist_ok=True)
        local = _scratch_fixtures(task, fixture_paths, scratch)
        client = client_factory(model)
        try:
            trace = run_task(task, client, LiveToolbox(scratch), local, boilerplate, step_cap)
        finally:
            close = getattr(client, "close", None)
            if close:
                close()
        path = os.path.join(trace_dir, f"{safe}__{task.id}.jsonl")
        save_trace(trace, path)
        return path

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(one, jobs))
