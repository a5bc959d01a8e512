"""Flag-based verdicts for traces and per-model aggregation."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field

from .tasks import STAGES, TOOL_STAGE

MAX_TOTAL = 17

_REFUSAL = re.compile(
    r"\b(cannot|can't|can not|unable|won't|will not|not (?:valid|supported|possible|compatible|meaningful)|"
    r"incompatible|clarify|clarification|which (?:one|did you|do you)|did you mean|do you want|"
    r"would you like|please confirm|instead)\b",
    re.IGNORECASE,
)


@dataclass
class Verdict:
    task_id: str
    model: str
    success: bool
    off_rail: bool
    no_expected_tool_call: bool
    needs_review: bool
    candidate_pass: bool | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def asks_or_refuses(text):
    return "?" in (text or "") or bool(_REFUSAL.search(text or ""))


def score_trace(trace, task):
    """Pure function of (trace, task).

    Routine tasks succeed when no tool result errored, the expected stage
    tool was called and nothing left the rail. Adversarial tasks are flagged
    for transcript review; the auto-annotation ``candidate_pass`` (no
    stage-bound tool called and the final reply asks or refuses) is advisory
    and also fills ``success``.
    """
    calls = trace.tool_calls()
    names = [c["name"] for c in calls]
    off_rail = any(TOOL_STAGE.get(n) not in (None, task.stage) for n in names if n in TOOL_STAGE)
    no_expected = task.expected_tool not in names
    tool_errors = [e for e in trace.events if e["type"] == "tool_result" and e["is_error"]]
    transport = [e for e in trace.events if e["type"] == "error"]
    notes = []
    if off_rail:
        bad = sorted({n for n in names if TOOL_STAGE.get(n) not in (None, task.stage) and n in TOOL_STAGE})
        notes.append(f"called outside stage {task.stage}: {', '.join(bad)}")
    if tool_errors:
        notes.append(f"{len(tool_errors)} tool result(s) with errors")
    if transport:
        notes.append("transport error: " + transport[-1]["message"])
    if trace.status == "step_cap":
        notes.append("step cap reached")
    if not task.adversarial:
        success = not tool_errors and not transport and not no_expected and not off_rail
        return Verdict(trace.task_id, trace.model, success, off_rail, no_expected, False, None, notes)
    staged = [n for n in names if TOOL_STAGE.get(n) is not None]
    candidate = not staged and not transport and asks_or_refuses(trace.final_text())
    notes.append("adversarial: transcript review required")
    return Verdict(trace.task_id, trace.model, bool(candidate and not off_rail), off_rail, no_expected, True,
                   bool(candidate), notes)


def aggregate(scored):
    """``scored``: iterable of (task, trace, verdict). Per model and stage: successes, cost, tokens."""
    models = {}
    for task, trace, verdict in scored:
        m = models.setdefault(trace.model, {s: {"successes": 0, "tasks": 0, "cost": 0.0, "effective_input_tokens": 0,
                                               "output_tokens": 0, "needs_review": 0} for s in STAGES})
        row = m[task.stage]
        row["tasks"] += 1
        row["successes"] += int(verdict.success)
        row["needs_review"] += int(verdict.needs_review)
        row["cost"] += float(trace.usage.get("cost", 0.0))
        row["effective_input_tokens"] += int(trace.usage.get("fresh_input_tokens", 0)) + \
            int(trace.usage.get("cache_read_input_tokens", 0))
        row["output_tokens"] += int(trace.usage.get("output_tokens", 0))
    entries = []
    for model, stages in models.items():
        total = {k: sum(stages[s][k] for s in STAGES) for k in
                 ("successes", "tasks", "cost", "effective_input_tokens", "output_tokens", "needs_review")}
        total["successes"] = min(total["successes"], MAX_TOTAL)
        entries.append({"model": model, "stages": stages, "total": total})
    # descending successes; cheaper model first on ties; then by name for a stable report
    entries.sort(key=lambda e: (-e["total"]["successes"], e["total"]["cost"], e["model"]))
    return {"max_total": MAX_TOTAL, "stages": list(STAGES), "models": entries}


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_table(report):
    """CSV with one row per model and stage, plot-ready."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "stage", "successes", "tasks", "cost", "effective_input_tokens", "output_tokens"])
    for e in report["models"]:
        for s in report["stages"]:
            r = e["stages"][s]
            w.writerow([e["model"], s, r["successes"], r["tasks"], f"{r['cost']:.6f}",
                        r["effective_input_tokens"], r["output_tokens"]])
    return buf.getvalue()


def plot_report(report, path):
    """Stacked bars of successes by stage with the 17-task ceiling."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    models = [e["model"] for e in report["models"]]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(models) + 2), 4))
    bottom = [0] * len(models)
    for s in report["stages"]:
        vals = [e["stages"][s]["successes"] for e in report["models"]]
        ax.bar(models, vals, bottom=bottom, label=s)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.axhline(report["max_total"], ls="--", color="k", lw=1)
    ax.set_ylabel("successful tasks")
    ax.set_ylim(0, report["max_total"] + 1)
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
