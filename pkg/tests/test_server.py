import io
import json
import os

import pytest

from colpack import server
from mcp_session import Session, scripted_session


@pytest.fixture(scope="module")
def live():
    with Session() as s:
        s.request("initialize", {"protocolVersion": server.PROTOCOL_VERSION, "capabilities": {}})
        yield s


def test_scripted_session(tmp_path):
    obs = scripted_session(str(tmp_path / "w"))
    assert obs["protocol"] == server.PROTOCOL_VERSION
    assert len(obs["tools"]) == 6
    assert obs["n_runs"] == 2
    assert obs["execute_initial_state"] == "pending"
    assert obs["execute_latency"] < 0.1
    assert obs["execute_final"] == obs["analyze_final"] == "done"
    assert os.path.isfile(obs["analysis_file"])


def test_tools_list_schemas(live):
    tools = live.request("tools/list")["result"]["tools"]
    assert sorted(t["name"] for t in tools) == sorted(server.TOOL_NAMES)
    assert all(t["inputSchema"]["type"] == "object" and t["description"] for t in tools)


def test_parse_error(live):
    resp = live.raw("{")
    assert resp["error"]["code"] == server.PARSE_ERROR and resp["id"] is None


def test_unknown_method(live):
    assert live.request("no/such")["error"]["code"] == server.METHOD_NOT_FOUND


def test_invalid_request(live):
    assert live.raw(json.dumps({"id": 5, "method": "ping"}))["error"]["code"] == server.INVALID_REQUEST
    assert live.raw("[]")["error"]["code"] == server.INVALID_REQUEST


@pytest.mark.parametrize("params", [
    {"name": "colpack_setup", "arguments": {"dimension": 2}},
    {"name": "colpack_setup", "arguments": {"dimension": "two", "ensemble": "NVT", "total_particle_number": 5,
                                            "particle_shape_list": ["disk"], "working_dir": "w"}},
    {"name": "colpack_nope", "arguments": {}},
    {"arguments": {}},
])
def test_invalid_params(live, params):
    assert live.request("tools/call", params)["error"]["code"] == server.INVALID_PARAMS


def test_domain_error_is_tool_result(live, tmp_path):
    payload, is_error = live.tool("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 10,
                                                    "particle_shape_list": ["cube"], "working_dir": str(tmp_path)})
    assert is_error and payload["error"]["code"] == "dimension_shape_mismatch"


def test_ping_and_notification_silent(live):
    live.notify("notifications/initialized")
    assert live.request("ping")["result"] == {}


def test_batch(tmp_path):
    srv = server.StdioServer(io.StringIO(), io.StringIO())
    out = srv.handle_line(json.dumps([{"jsonrpc": "2.0", "id": 1, "method": "ping"},
                                      {"jsonrpc": "2.0", "method": "notifications/initialized"},
                                      {"jsonrpc": "2.0", "id": 2, "method": "x"}]))
    assert [r["id"] for r in out] == [1, 2]
    assert out[1]["error"]["code"] == server.METHOD_NOT_FOUND


def test_job_conflict(live, tmp_path):
    wd = str(tmp_path / "w")
    live.ok("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 64,
                              "particle_shape_list": ["disk"], "working_dir": wd})
    live.ok("colpack_plan", {"working_dir": wd, "tunable_parameters": {"volume_fraction": [0.3, 0.4, 0.5]},
                             "sample_steps": 20_000, "record_period": 100})
    job = live.ok("colpack_execute", {"working_dir": wd})
    payload, is_error = live.tool("colpack_execute", {"working_dir": wd})
    assert is_error and payload["error"]["code"] == "job_conflict"
    assert live.poll(job)["state"] == "done"


def test_unknown_job(live, tmp_path):
    payload, is_error = live.tool("colpack_job_status", {"job_id": "nope", "working_dir": str(tmp_path)})
    assert is_error and payload["error"]["code"] == "unknown_job"


def test_launch_deferred_until_written():
    srv = server.StdioServer(io.StringIO(), io.StringIO())
    launches = []
    resp = srv.handle_line(json.dumps({"jsonrpc": "2.0", "id": 1, "method": "tools/call",
                                       "params": {"name": "colpack_capabilities", "arguments": {}}}), launches)
    assert resp["result"]["isError"] is False and launches == []
