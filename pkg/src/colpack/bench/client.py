"""Agent clients: a live chat-completions endpoint with tool calling, and a replay source."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import httpx


@dataclass
class ToolCall:
    id: str
    name: str
    arguments: dict

    def to_dict(self):
        return {"id": self.id, "name": self.name, "arguments": self.arguments}


@dataclass
class AssistantTurn:
    text: str = ""
    tool_calls: list = field(default_factory=list)
    usage: dict = field(default_factory=dict)


def empty_usage():
    return {"fresh_input_tokens": 0, "cache_read_input_tokens": 0, "output_tokens": 0, "cost": 0.0}


@dataclass
class ClientConfig:
    model: str
    base_url: str = "https://openrouter.ai/api/v1"
    api_key_env: str = "OPENROUTER_API_KEY"
    provider: str | None = None  # pin one upstream provider to limit variation
    temperature: float | None = None
    timeout_s: float = 300.0
    max_tokens: int | None = None


def openai_tools(tool_specs):
    return [{"type": "function", "function": {"name": t["name"], "description": t["description"],
                                              "parameters": t["inputSchema"]}} for t in tool_specs]


def parse_usage(raw):
    raw = raw or {}
    prompt = int(raw.get("prompt_tokens") or 0)
    cached = int((raw.get("prompt_tokens_details") or {}).get("cached_tokens") or 0)
    return {"fresh_input_tokens": max(prompt - cached, 0), "cache_read_input_tokens": cached,
            "output_tokens": int(raw.get("completion_tokens") or 0), "cost": float(raw.get("cost") or 0.0)}


def parse_message(message):
    calls = []
    for tc in message.get("tool_calls") or []:
        fn = tc.get("function") or {}
        args = fn.get("arguments") or "{}"
        if isinstance(args, str):
            try:
                args = json.loads(args)
            except json.JSONDecodeError:
                args = {"_unparsed": args}
        calls.append(ToolCall(str(tc.get("id", "")), str(fn.get("name", "")), args))
    return message.get("content") or "", calls


class ChatCompletionsClient:
    """OpenRouter-compatible ``/chat/completions`` client with function calling."""

    def __init__(self, config, transport=None):
        self.config = config
        key = os.environ.get(config.api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(base_url=config.base_url, headers=headers, timeout=config.timeout_s,
                                  transport=transport)

    @property
    def model(self):
        return self.config.model

    def request_body(self, messages, tools):
        body = {"model": self.config.model, "messages": messages, "tools": tools, "usage": {"include": True}}
        if self.config.provider:
            body["provider"] = {"order": [self.config.provider], "allow_fallbacks": False}
        if self.config.temperature is not None:
            body["temperature"] = self.config.temperature
        if self.config.max_tokens is not None:
            body["max_tokens"] = self.config.max_tokens
        return body

    def complete(self, messages, tools):
        resp = self._http.post("/chat/completions", json=self.request_body(messages, tools))
        resp.raise_for_status()
        data = resp.json()
        if "error" in data:
            raise RuntimeError(f"endpoint error: {data['error']}")
        text, calls = parse_message(data["choices"][0]["message"])
        return AssistantTurn(text, calls, parse_usage(data.get("usage")))

    def close(self):
        self._http.close()


class ReplayClient:
    """Plays back the assistant turns recorded in a trace."""

    def __init__(self, trace):
        self.trace = trace
        self._turns = [e for e in trace.events if e["type"] == "assistant"]
        self._pos = 0

    @property
    def model(self):
        return self.trace.model

    def complete(self, messages, tools):
        if self._pos >= len(self._turns):
            raise RuntimeError("replay exhausted: the recorded trace has no further assistant turns")
        ev = self._turns[self._pos]
        self._pos += 1
        calls = [ToolCall(c["id"], c["name"], c["arguments"]) for c in ev.get("tool_calls", [])]
        return AssistantTurn(ev.get("text", ""), calls, dict(ev.get("usage") or empty_usage()))
