"""A live ``colpack serve-mcp`` subprocess driven line by line over stdio."""

import json
import subprocess
import sys
import time


class Session:
    def __init__(self, cwd=None):
        self.proc = subprocess.Popen([sys.executable, "-m", "colpack", "serve-mcp"], cwd=cwd,
                                     stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1)
        self._id = 0

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=30)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def raw(self, line):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def request(self, method, params=None):
        self._id += 1
        msg = {"jsonrpc": "2.0", "id": self._id, "method": method}
        if params is not None:
            msg["params"] = params
        resp = self.raw(json.dumps(msg))
        assert resp["id"] == self._id
        return resp

    def notify(self, method):
        self.proc.stdin.write(json.dumps({"jsonrpc": "2.0", "method": method}) + "\n")
        self.proc.stdin.flush()

    def tool(self, name, args):
        """Returns (payload, isError); JSON-RPC level errors raise."""
        resp = self.request("tools/call", {"name": name, "arguments": args})
        assert "error" not in resp, resp
        res = resp["result"]
        return res["structuredContent"], res["isError"]

    def ok(self, name, args):
        payload, is_error = self.tool(name, args)
        assert not is_error, payload
        return payload

    def poll(self, job, timeout=600.0):
        t0 = time.time()
        while True:
            rec = self.ok("colpack_job_status", {"job_id": job["job_id"], "working_dir": job["working_dir"]})
            if rec["state"] in ("done", "done_with_errors", "failed"):
                return rec
            assert time.time() - t0 < timeout, rec
            time.sleep(0.1)


def scripted_session(workdir, sample_steps=400):
    """initialize, tools/list, then setup -> plan -> execute -> poll -> analyze -> poll.

    Returns a dict of observations for the caller to check.
    """
    out = {}
    with Session() as s:
        init = s.request("initialize", {"protocolVersion": "2024-11-05", "capabilities": {},
                                        "clientInfo": {"name": "test", "version": "0"}})
        out["protocol"] = init["result"]["protocolVersion"]
        s.notify("notifications/initialized")
        out["tools"] = [t["name"] for t in s.request("tools/list")["result"]["tools"]]
        s.ok("colpack_setup", {"dimension": 2, "ensemble": "NVT", "total_particle_number": 36,
                               "particle_shape_list": ["disk"], "working_dir": workdir})
        plan = s.ok("colpack_plan", {"working_dir": workdir, "tunable_parameters": {"volume_fraction": [0.3, 0.5]},
                                     "sample_steps": sample_steps, "record_period": 20, "tuning_sweeps": 100})
        out["n_runs"] = plan["n_runs"]
        t0 = time.perf_counter()
        job = s.ok("colpack_execute", {"working_dir": workdir})
        out["execute_latency"] = time.perf_counter() - t0
        out["execute_initial_state"] = job["state"]
        out["execute_final"] = s.poll(job)["state"]
        job = s.ok("colpack_analyze", {"working_dir": workdir})
        rec = s.poll(job)
        out["analyze_final"] = rec["state"]
        out["analysis_file"] = rec.get("result", {}).get("analysis_results")
    return out
