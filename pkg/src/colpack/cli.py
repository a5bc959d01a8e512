"""Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage error."""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

from . import workflow
from .errors import ColpackError


class UsageError(Exception):
    pass


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _number(text):
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def _assignments(items, multi):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected PATH=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        vals = [_number(v) for v in val.split(",") if v.strip()]
        if not vals:
            raise UsageError(f"no values given for {key!r}")
        if not multi and len(vals) != 1:
            raise UsageError(f"baseline {key!r} takes one value")
        out[key.strip()] = vals if multi else vals[0]
    return out


def _json_arg(text, what):
    if text is None:
        return None
    try:
        if os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                return json.load(fh)
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON: {exc.msg}") from None


# -- jobs ----------------------------------------------------------------------------------------

def _wait_with_progress(job):
    while True:
        job = workflow.REGISTRY.wait(job.job_id, timeout=0.5)
        if job.state in ("done", "done_with_errors", "failed"):
            break
        print(f"\r{job.stage}: {100 * job.progress:5.1f}%", end="", file=sys.stderr, flush=True)
    print(f"\r{job.stage}: {job.state}        ", file=sys.stderr)
    return job


def _finish(job):
    _emit(job.to_dict())
    if job.state == "failed":
        raise ColpackError(job.error.split(":", 1)[0] if job.error else "job_failed", job.error or "job failed")
    if job.state == "done_with_errors":
        raise ColpackError("run_errors", f"{len(job.run_errors)} run(s) failed", runs=job.run_errors)
    return 0


def _spawn_detached(stage, args):
    wd = os.path.abspath(args.dir)
    if stage == "execute":
        workflow.load_plan(wd)
    else:
        workflow.load_problem(wd)
        workflow._require(wd, workflow.EXECUTION_FILE, "missing_execution", "execution_summary.json")
        from .analysis import validate_requests

        validate_requests(workflow.load_problem(wd), args.extra or [])
    other = workflow.active_job_on_disk(wd)
    if other:
        raise ColpackError("job_conflict", f"{other['stage']} job {other['job_id']} is still {other['state']}",
                           job_id=other["job_id"])
    job_id = workflow.new_job_id()
    cmd = [sys.executable, "-m", "colpack", "_job", stage, "--dir", wd, "--job-id", job_id]
    if stage == "analyze" and args.extra:
        cmd += ["--extra", json.dumps(args.extra)]
    os.makedirs(os.path.join(wd, "jobs"), exist_ok=True)
    log = open(os.path.join(wd, "jobs", f"{job_id}.log"), "w")
    subprocess.Popen(cmd, stdout=log, stderr=subprocess.STDOUT, stdin=subprocess.DEVNULL, start_new_session=True)
    deadline = time.time() + 30
    path = os.path.join(wd, "jobs", f"{job_id}.json")
    while not os.path.exists(path) and time.time() < deadline:
        time.sleep(0.05)
    print(job_id)
    return 0


# -- subcommands ---------------------------------------------------------------------------------

def cmd_capabilities(args):
    _emit(workflow.capabilities())
    return 0


def cmd_setup(args):
    shapes = [s for part in args.shapes for s in part.split(",") if s]
    counts = [int(c) for c in args.counts.split(",")] if args.counts else None
    params = _json_arg(args.params, "--params")
    _emit(workflow.setup_problem(args.dim, args.ensemble, args.n, shapes, args.dir, counts, params))
    return 0


def cmd_plan(args):
    base = _assignments(args.base, multi=False)
    tune = _assignments(args.tune, multi=True)
    plan = workflow.plan_runs(args.dir, base, tune, args.steps, args.record_period, args.seed, args.tuning_sweeps)
    _emit({"working_dir": plan["working_dir"], "n_runs": plan["n_runs"],
           "runs": [{"run_index": r["run_index"], "parameters": r["parameters"]} for r in plan["runs"]]})
    return 0


def cmd_execute(args):
    if args.async_:
        return _spawn_detached("execute", args)
    return _finish(_wait_with_progress(workflow.execute_runs(args.dir)))


def cmd_analyze(args):
    args.extra = _json_arg(args.extra, "--extra")
    if args.async_:
        return _spawn_detached("analyze", args)
    return _finish(_wait_with_progress(workflow.analyze_runs(args.dir, args.extra)))


def cmd_job(args):
    extra = _json_arg(args.extra, "--extra") if args.stage == "analyze" else None
    if args.stage == "execute":
        job = workflow.execute_runs(args.dir, wait=True, job_id=args.job_id)
    else:
        job = workflow.analyze_runs(args.dir, extra, wait=True, job_id=args.job_id)
    return 0 if job.state == "done" else 1


def cmd_status(args):
    _emit(workflow.job_status(args.job, args.dir).to_dict())
    return 0


def _read_table(path):
    cols = {"P": [], "phi": [], "phi_sigma": [], "psi6": [], "psi6_sigma": []}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for k in cols:
                if row.get(k) not in (None, ""):
                    cols[k].append(float(row[k]))
    if not cols["P"] or len(cols["phi"]) != len(cols["P"]) or len(cols["psi6"]) != len(cols["P"]):
        raise UsageError("--table needs P, phi and psi6 columns")
    for k in ("phi_sigma", "psi6_sigma"):
        if len(cols[k]) != len(cols["P"]):
            cols[k] = None
    return cols


def _print_estimate(label, est, loo):
    if "error" in est:
        print(f"{label}: {est['error']['code']}: {est['error']['message']}")
        return
    line = f"{label} = {est['point']:.4f}"
    if "ci68" in est:
        line += f"  68% [{est['ci68'][0]:.4f}, {est['ci68'][1]:.4f}]  95% [{est['ci95'][0]:.4f}, {est['ci95'][1]:.4f}]"
    print(line)
    if loo and loo.get("range"):
        print(f"  leave-one-out range [{loo['range'][0]:.4f}, {loo['range'][1]:.4f}], "
              f"max shift {loo['max_shift']:.4f} (dropping P = {loo['worst_point']:g})")


def cmd_estimate(args):
    from . import stats

    cfg = stats.BootstrapConfig(args.block, args.n_boot, args.seed)
    if args.table:
        t = _read_table(args.table)
        report = stats.pstar_report(t["P"], t["phi"], t["psi6"], t["phi_sigma"], t["psi6_sigma"],
                                    level=args.crossing, config=cfg)
        out = os.path.join(args.dir, stats.PSTAR_FILE) if args.dir else None
        if out:
            os.makedirs(args.dir, exist_ok=True)
            stats.write_report(out, report)
    else:
        if not args.dir:
            raise UsageError("estimate needs --dir or --table")
        report = stats.estimate_from_analysis(args.dir, args.series, args.crossing, cfg)
        out = os.path.join(args.dir, stats.PSTAR_FILE)
    _print_estimate(f"P*_phi (crossing at {args.crossing})", report["estimates"]["P_star_phi"],
                    report["loo"].get("P_star_phi"))
    _print_estimate("P*_psi6 (sigmoid inflection)", report["estimates"]["P_star_psi6"],
                    report["loo"].get("P_star_psi6"))
    if out:
        print(f"wrote {out}")
    return 0


def cmd_plot(args):
    from . import plots

    kinds = [k for part in (args.kinds or []) for k in part.split(",") if k] or None
    for p in plots.emit_plots(args.dir, kinds, raster=args.png, order_series=args.series):
        print(p)
    return 0


def cmd_serve(args):
    from .server import serve_stdio

    return serve_stdio()


# -- bench ---------------------------------------------------------------------------------------

def cmd_bench_fixtures(args):
    from .bench import generate_fixtures

    names = [n for part in (args.names or []) for n in part.split(",") if n] or None
    paths = generate_fixtures(args.out, names, args.sample_steps, args.record_period,
                              log=lambda m: print(m, file=sys.stderr))
    _emit(paths)
    return 0


def _select_tasks(ids):
    from .bench import load_tasks

    tasks = load_tasks()
    if not ids:
        return tasks
    wanted = [i for part in ids for i in part.split(",") if i]
    known = {t.id for t in tasks}
    bad = [i for i in wanted if i not in known]
    if bad:
        raise UsageError(f"unknown task id(s): {', '.join(bad)}")
    return [t for t in tasks if t.id in wanted]


def cmd_bench_run(args):
    from .bench import (ChatCompletionsClient, ClientConfig, generate_fixtures, load_trace, replay, run_bench,
                        save_trace)
    from .bench.tasks import task_by_id

    tasks = _select_tasks(args.tasks)
    os.makedirs(args.out, exist_ok=True)
    if args.replay:
        written = []
        for name in sorted(os.listdir(args.replay)):
            if name.endswith(".jsonl"):
                trace = load_trace(os.path.join(args.replay, name))
                try:
                    task = task_by_id(tasks, trace.task_id)
                except KeyError:
                    continue
                written.append(save_trace(replay(trace, task), os.path.join(args.out, name)))
        _emit(written)
        return 0
    if not args.models:
        raise UsageError("bench run needs --models (or --replay)")
    boiler = _json_arg(args.boilerplate, "--boilerplate")
    needed = sorted({f for t in tasks for f in t.fixtures})
    fixtures = generate_fixtures(args.fixtures, needed) if needed else {}
    models = [m for part in args.models for m in part.split(",") if m]

    def factory(model):
        return ChatCompletionsClient(ClientConfig(model, args.base_url, args.api_key_env, args.provider,
                                                  args.temperature))

    scratch = args.scratch or os.path.join(args.out, "scratch")
    _emit(run_bench(tasks, factory, models, fixtures, scratch, args.out, boiler, args.parallel, args.step_cap))
    return 0


def _score_dir(trace_dir):
    from .bench import load_tasks, load_trace, score_trace
    from .bench.tasks import task_by_id

    tasks = load_tasks()
    scored = []
    for name in sorted(os.listdir(trace_dir)):
        if name.endswith(".jsonl"):
            trace = load_trace(os.path.join(trace_dir, name))
            task = task_by_id(tasks, trace.task_id)
            scored.append((task, trace, score_trace(trace, task)))
    if not scored:
        raise ColpackError("no_traces", f"no .jsonl traces in {trace_dir}")
    return scored


def cmd_bench_score(args):
    scored = _score_dir(args.traces)
    lines = [json.dumps({"stage": t.stage, **v.to_dict()}, sort_keys=True) for t, _, v in scored]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_bench_report(args):
    from .bench import aggregate, report_json, report_table
    from .bench.scoring import plot_report

    report = aggregate(_score_dir(args.traces))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bench_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report_json(report))
    with open(os.path.join(args.out, "bench_report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report_table(report))
    plot_report(report, os.path.join(args.out, "bench_report.svg"))
    sys.stdout.write(report_table(report))
    return 0


# -- parser --------------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="colpack", description="Hard-particle Monte Carlo packing workflows.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("capabilities", help="list shapes, ensembles, parameter paths and order parameters")
    s.set_defaults(func=cmd_capabilities)

    s = sub.add_parser("setup", help="create a simulation problem")
    s.add_argument("--dim", type=int, choices=(2, 3))
    s.add_argument("--ensemble", required=True, type=str.upper, choices=("NVT", "NPT"))
    s.add_argument("--n", type=int, required=True, help="total particle number")
    s.add_argument("--shapes", nargs="+", required=True, help="shape names, space or comma separated")
    s.add_argument("--counts", help="per-species counts, comma separated")
    s.add_argument("--params", help="JSON list of per-species geometry objects (or a file)")
    s.add_argument("--dir", required=True)
    s.set_defaults(func=cmd_setup)

    s = sub.add_parser("plan", help="expand sweeps into runs")
    s.add_argument("--dir", required=True)
    s.add_argument("--base", action="append", metavar="PATH=VALUE")
    s.add_argument("--tune", action="append", metavar="PATH=V1,V2,...")
    s.add_argument("--steps", type=int, required=True, help="sample sweeps per run")
    s.add_argument("--record-period", type=int, default=workflow.DEFAULT_RECORD_PERIOD)
    s.add_argument("--seed", type=int, default=workflow.DEFAULT_SEED)
    s.add_argument("--tuning-sweeps", type=int, default=workflow.DEFAULT_TUNING_SWEEPS)
    s.set_defaults(func=cmd_plan)

    for name, func in (("execute", cmd_execute), ("analyze", cmd_analyze)):
        s = sub.add_parser(name, help=f"{name} the planned runs")
        s.add_argument("--dir", required=True)
        s.add_argument("--async", dest="async_", action="store_true", help="print a job id and return")
        if name == "analyze":
            s.add_argument("--extra", help="JSON list of extra order parameters (or a file)")
        s.set_defaults(func=func)

    s = sub.add_parser("_job", help=argparse.SUPPRESS)
    s.add_argument("stage", choices=("execute", "analyze"))
    s.add_argument("--dir", required=True)
    s.add_argument("--job-id", required=True)
    s.add_argument("--extra")
    s.set_defaults(func=cmd_job)

    s = sub.add_parser("status", help="show a job record")
    s.add_argument("--job", required=True)
    s.add_argument("--dir")
    s.set_defaults(func=cmd_status)

    s = sub.add_parser("estimate", help="transition-pressure estimators with bootstrap intervals")
    s.add_argument("--dir")
    s.add_argument("--table", help="CSV with columns P, phi, psi6 and optional phi_sigma, psi6_sigma")
    s.add_argument("--crossing", type=float, default=0.708, help="volume-fraction level")
    s.add_argument("--series", default="disk_0.hexatic_6")
    s.add_argument("--n-boot", type=int, default=2000)
    s.add_argument("--block", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("plot", help="render figures from analysis results")
    s.add_argument("--dir", required=True)
    s.add_argument("--kinds", nargs="*", help="eta_vs_P psi6_vs_P rdf eta_traces config")
    s.add_argument("--png", action="store_true", help="also write PNG")
    s.add_argument("--series", default="disk_0.hexatic_6")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("serve-mcp", help="serve the tools over JSON-RPC on stdio")
    s.set_defaults(func=cmd_serve)

    b = sub.add_parser("bench", help="agent benchmark").add_subparsers(dest="bench_command", required=True)
    s = b.add_parser("fixtures", help="build fixture working directories")
    s.add_argument("--out", required=True)
    s.add_argument("--names", nargs="*")
    s.add_argument("--sample-steps", type=int, default=2000)
    s.add_argument("--record-period", type=int, default=100)
    s.set_defaults(func=cmd_bench_fixtures)

    s = b.add_parser("run", help="run tasks against models, or replay recorded traces")
    s.add_argument("--out", required=True, help="trace directory")
    s.add_argument("--tasks", nargs="*")
    s.add_argument("--models", nargs="*")
    s.add_argument("--replay", help="directory of recorded traces")
    s.add_argument("--fixtures", default="bench_fixtures")
    s.add_argument("--scratch")
    s.add_argument("--base-url", default="https://openrouter.ai/api/v1")
    s.add_argument("--api-key-env", default="OPENROUTER_API_KEY")
    s.add_argument("--provider")
    s.add_argument("--temperature", type=float)
    s.add_argument("--parallel", type=int, default=4)
    s.add_argument("--step-cap", type=int, default=20)
    s.add_argument("--boilerplate", help="JSON object of per-stage instructions (or a file)")
    s.set_defaults(func=cmd_bench_run)

    s = b.add_parser("score", help="score traces")
    s.add_argument("--traces", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench_score)

    s = b.add_parser("report", help="aggregate scored traces per model and stage")
    s.add_argument("--traces", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ColpackError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
