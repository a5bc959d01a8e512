"""Stage-aware agent benchmark: tasks, fixtures, clients, tool-call loop and scoring."""

from .client import AssistantTurn, ChatCompletionsClient, ClientConfig, ReplayClient, ToolCall
from .fixtures import FIXTURE_SPECS, generate_fixtures
from .runner import (STEP_CAP, LiveToolbox, ReplayToolbox, Trace, canned_expectations, canned_trace_paths,
                     load_trace, replay, run_bench, run_task, save_trace)
from .scoring import MAX_TOTAL, Verdict, aggregate, report_json, report_table, score_trace
from .tasks import CONTROLLED_TOOLS, DEFAULT_BOILERPLATE, STAGE_TOOL, TOOL_STAGE, BenchTask, load_tasks, render_prompt

__all__ = [
    "AssistantTurn", "BenchTask", "CONTROLLED_TOOLS", "ChatCompletionsClient", "ClientConfig", "DEFAULT_BOILERPLATE",
    "FIXTURE_SPECS", "LiveToolbox", "MAX_TOTAL", "ReplayClient", "ReplayToolbox", "STAGE_TOOL", "STEP_CAP",
    "TOOL_STAGE", "ToolCall", "Trace", "Verdict", "aggregate", "canned_expectations", "canned_trace_paths",
    "generate_fixtures", "load_trace", "load_tasks", "render_prompt", "replay", "report_json", "report_table",
    "run_bench", "run_task", "save_trace", "score_trace",
]
