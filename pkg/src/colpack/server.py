"""JSON-RPC 2.0 tool server over newline-delimited stdio.

One JSON document per line in each direction. Methods: ``initialize``,
``tools/list``, ``tools/call`` (plus ``ping``). Workflow failures come back
as tool results with ``isError: true`` and a machine-readable error code;
only malformed requests produce JSON-RPC errors.
"""

from __future__ import annotations

import json
import sys
import threading

import jsonschema

from . import __version__, workflow
from .errors import ColpackError

PROTOCOL_VERSION = "2024-11-05"
SERVER_NAME = "colpack"

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

_NUM = {"type": "number"}
_DIR = {"type": "string", "description": "Simulation working directory."}

ORDER_PARAM_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "type": {"type": "string", "description": "Hexatic, Nematic, Cubatic, ContinuousCoordination or RDF."},
        "params": {"type": "object"},
    },
    "required": ["type"],
}

TOOL_SPECS = [
    {
        "name": "colpack_capabilities",
        "description": "List supported dimensions, shapes with default geometry, ensembles, tunable "
                       "parameter paths, the mixture restriction and order-parameter types.",
        "inputSchema": {"type": "object", "properties": {}, "additionalProperties": False},
    },
    {
        "name": "colpack_setup",
        "description": "Stage 1. Validate and persist a simulation problem (dimension, ensemble, "
                       "particle count, shape list) in a working directory.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "dimension": {"type": "integer", "enum": [2, 3]},
                "ensemble": {"type": "string", "enum": ["NVT", "NPT", "nvt", "npt"]},
                "total_particle_number": {"type": "integer", "minimum": 2},
                "particle_shape_list": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "working_dir": _DIR,
                "particle_counts": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "particle_params": {"type": "array", "items": {"type": ["object", "null"]}},
            },
            "required": ["dimension", "ensemble", "total_particle_number", "particle_shape_list", "working_dir"],
            "additionalProperties": False,
        },
    },
    {
        "name": "colpack_plan",
        "description": "Stage 2. Expand baseline parameters and per-axis sweeps into concrete runs. Each "
                       "tunable axis is varied independently from the baseline (union, not product).",
        "inputSchema": {
            "type": "object",
            "properties": {
                "working_dir": _DIR,
                "baseline_parameters": {"type": "object", "additionalProperties": _NUM},
                "tunable_parameters": {"type": "object",
                                       "additionalProperties": {"type": "array", "items": _NUM}},
                "sample_steps": {"type": "integer", "minimum": 1},
                "record_period": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "tuning_sweeps": {"type": "integer", "minimum": 0},
            },
            "required": ["working_dir"],
            "additionalProperties": False,
        },
    },
    {
        "name": "colpack_execute",
        "description": "Stage 3. Start all planned runs in the background; returns a job_id immediately.",
        "inputSchema": {"type": "object", "properties": {"working_dir": _DIR},
                        "required": ["working_dir"], "additionalProperties": False},
    },
    {
        "name": "colpack_analyze",
        "description": "Stage 4. Compute per-shape default order parameters plus any extras, detect "
                       "equilibration and write analysis_results.json; returns a job_id immediately.",
        "inputSchema": {
            "type": "object",
            "properties": {"working_dir": _DIR,
                           "extra_order_params": {"type": "array", "items": ORDER_PARAM_SCHEMA}},
            "required": ["working_dir"],
            "additionalProperties": False,
        },
    },
    {
        "name": "colpack_job_status",
        "description": "Poll an execute or analyze job: state, progress, errors and result artifact paths.",
        "inputSchema": {"type": "object",
                        "properties": {"job_id": {"type": "string"}, "working_dir": _DIR},
                        "required": ["job_id"], "additionalProperties": False},
    },
]

TOOL_NAMES = [t["name"] for t in TOOL_SPECS]
_SCHEMAS = {t["name"]: t["inputSchema"] for t in TOOL_SPECS}


def _plan_summary(plan):
    return {"working_dir": plan["working_dir"], "n_runs": plan["n_runs"],
            "sample_steps": plan["sample_steps"], "record_period": plan["record_period"],
            "runs": [{"run_index": r["run_index"], "parameters": r["parameters"]} for r in plan["runs"]]}


def _job_payload(job):
    return {"job_id": job.job_id, "stage": job.stage, "state": job.state, "working_dir": job.working_dir}


def _launching(job, launches):
    if launches is None:
        workflow.REGISTRY.launch(job.job_id)
    else:
        launches.append(lambda: workflow.REGISTRY.launch(job.job_id))
    return _job_payload(job)


def _handlers(launches=None):
    return {
        "colpack_capabilities": lambda a: workflow.capabilities(),
        "colpack_setup": lambda a: workflow.setup_problem(
            a["dimension"], a["ensemble"], a["total_particle_number"], a["particle_shape_list"],
            a["working_dir"], a.get("particle_counts"), a.get("particle_params")),
        "colpack_plan": lambda a: _plan_summary(workflow.plan_runs(
            a["working_dir"], a.get("baseline_parameters"), a.get("tunable_parameters"), a.get("sample_steps"),
            a.get("record_period", workflow.DEFAULT_RECORD_PERIOD), a.get("seed", workflow.DEFAULT_SEED),
            a.get("tuning_sweeps", workflow.DEFAULT_TUNING_SWEEPS))),
        "colpack_execute": lambda a: _launching(workflow.execute_runs(a["working_dir"], defer=True), launches),
        "colpack_analyze": lambda a: _launching(
            workflow.analyze_runs(a["working_dir"], a.get("extra_order_params"), defer=True), launches),
        "colpack_job_status": lambda a: workflow.job_status(a["job_id"], a.get("working_dir")).to_dict(),
    }


class InvalidArguments(ValueError):
    pass


def schema_problems(name, arguments):
    validator = jsonschema.Draft202012Validator(_SCHEMAS[name])
    return [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in validator.iter_errors(arguments)]


def call_tool(name, arguments, launches=None):
    """Run one tool; returns ``(payload, is_error)``. Raises InvalidArguments on schema violations.

    Background jobs start immediately unless ``launches`` is a list, in which
    case their start callables are appended for the caller to run.
    """
    if name not in _SCHEMAS:
        raise InvalidArguments(f"unknown tool {name!r}")
    problems = schema_problems(name, arguments)
    if problems:
        raise InvalidArguments("; ".join(problems))
    try:
        return _handlers(launches)[name](arguments), False
    except ColpackError as exc:
        return {"error": exc.to_dict()}, True


def tool_result(payload, is_error):
    return {"content": [{"type": "text", "text": json.dumps(payload, sort_keys=True)}],
            "structuredContent": payload, "isError": bool(is_error)}


class StdioServer:
    def __init__(self, stdin=None, stdout=None):
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self._write_lock = threading.Lock()

    def send(self, message):
        line = json.dumps(message, separators=(",", ":"))
        with self._write_lock:
            self.stdout.write(line + "\n")
            self.stdout.flush()

    @staticmethod
    def _error(id_, code, message, data=None):
        err = {"code": code, "message": message}
        if data is not None:
            err["data"] = data
        return {"jsonrpc": "2.0", "id": id_, "error": err}

    def handle(self, msg, launches=None):
        """Return the response for one decoded message, or None for notifications."""
        if not isinstance(msg, dict) or msg.get("jsonrpc") != "2.0" or not isinstance(msg.get("method"), str):
            rid = msg.get("id") if isinstance(msg, dict) else None
            return self._error(rid, INVALID_REQUEST, "invalid JSON-RPC 2.0 request")
        is_note = "id" not in msg
        rid = msg.get("id")
        method = msg["method"]
        params = msg.get("params", {})
        if is_note:
            return None
        if params is None:
            params = {}
        if not isinstance(params, dict):
            return self._error(rid, INVALID_PARAMS, "params must be an object")
        if method == "initialize":
            return {"jsonrpc": "2.0", "id": rid, "result": {
                "protocolVersion": PROTOCOL_VERSION,
                "serverInfo": {"name": SERVER_NAME, "version": __version__},
                "capabilities": {"tools": {"listChanged": False}}}}
        if method == "ping":
            return {"jsonrpc": "2.0", "id": rid, "result": {}}
        if method == "tools/list":
            return {"jsonrpc": "2.0", "id": rid, "result": {"tools": TOOL_SPECS}}
        if method == "tools/call":
            name = params.get("name")
            args = params.get("arguments", {})
            if args is None:
                args = {}
            if not isinstance(name, str) or not isinstance(args, dict):
                return self._error(rid, INVALID_PARAMS, "tools/call needs a tool name and an arguments object")
            try:
                payload, is_error = call_tool(name, args, launches)
            except InvalidArguments as exc:
                return self._error(rid, INVALID_PARAMS, str(exc))
            except Exception as exc:  # keep serving
                return self._error(rid, INTERNAL_ERROR, f"internal error: {exc!r}")
            return {"jsonrpc": "2.0", "id": rid, "result": tool_result(payload, is_error)}
        return self._error(rid, METHOD_NOT_FOUND, f"method not found: {method}")

    def handle_line(self, line, launches=None):
        line = line.strip()
        if not line:
            return None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(None, PARSE_ERROR, f"parse error: {exc.msg}")
        if isinstance(msg, list):
            if not msg:
                return self._error(None, INVALID_REQUEST, "empty batch")
            out = [r for r in (self.handle(m, launches) for m in msg) if r is not None]
            return out or None
        return self.handle(msg, launches)

    def serve(self):
        for line in self.stdin:
            launches = []
            resp = self.handle_line(line, launches)
            if resp is not None:
                self.send(resp)
            # workers start only after the job_id is on the wire
            for start in launches:
                start()


def serve_stdio(stdin=None, stdout=None):
    StdioServer(stdin, stdout).serve()
    return 0
