"""External-model interpreter: request building, transport, response parsing, fallback.

Wire contract
-------------
Request (JSON object)::

    {"prompt": str, "prompt_version": str, "temperature": 0,
     "images": [{"name": "density"|"stress", "media_type": "image/png", "data": base64}],
     "evaluation": {...} | absent, "history": [...], "allowed_actions": [...],
     "context": {"step", "budget", "c_current", "c_retained", "domain"}}

Response: a JSON array of ``{"priority", "action", "params"}``. A JSON object
with an ``"actions"`` array, or with a ``"content"``/``"text"`` string holding
such an array, is also accepted; Markdown code fences are stripped.

The endpoint is configured through ``STRESSGATE_LLM_URL``,
``STRESSGATE_LLM_API_KEY`` and ``STRESSGATE_LLM_TIMEOUT`` (seconds).
"""
from __future__ import annotations

import base64
import json
import logging
import os
import re
import urllib.error
import urllib.request
from importlib import resources

from .actions import ACTION_KINDS, GLOBAL_KINDS, Action, validate_action
from .strategies import InterpreterContext, Proposal, _ranked, rule_actions

logger = logging.getLogger(__name__)

PROMPT_VERSION = "interpreter_v1"
INPUT_MODES = ("both", "density_only", "stress_only", "numeric_only", "global_only")
ENV_URL = "STRESSGATE_LLM_URL"
ENV_KEY = "STRESSGATE_LLM_API_KEY"
ENV_TIMEOUT = "STRESSGATE_LLM_TIMEOUT"
DEFAULT_TIMEOUT = 60.0


class LLMTransportError(RuntimeError):
    """The endpoint could not be reached or answered with an error status."""


class LLMResponseError(ValueError):
    """The response could not be parsed into a candidate list."""


def load_prompt(version: str = PROMPT_VERSION) -> str:
    return resources.files("stressgate").joinpath(f"prompts/{version}.txt").read_text()


class HTTPClient:
    """POSTs the request JSON to an endpoint and returns the response body text."""

    def __init__(self, url: str, api_key: str | None = None, timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.api_key = api_key
        self.timeout = float(timeout)

    @classmethod
    def from_env(cls) -> "HTTPClient":
        url = os.environ.get(ENV_URL)
        if not url:
            raise LLMTransportError(f"{ENV_URL} is not set")
        timeout = float(os.environ.get(ENV_TIMEOUT, DEFAULT_TIMEOUT))
        return cls(url, os.environ.get(ENV_KEY), timeout)

    def complete(self, request: dict) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=json.dumps(request).encode(), headers=headers,
                                     method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise LLMTransportError(f"request to {self.url} failed: {exc}") from exc


class StubClient:
    """Offline client returning canned responses (a string, a list cycled per call, or a callable).

    An ``Exception`` instance among the responses is raised instead of returned.
    """

    def __init__(self, responses):
        self.responses = responses
        self.requests: list[dict] = []

    def complete(self, request: dict) -> str:
        self.requests.append(request)
        if callable(self.responses):
            out = self.responses(request)
        elif isinstance(self.responses, (list, tuple)):
            out = self.responses[(len(self.requests) - 1) % len(self.responses)]
        else:
            out = self.responses
        if isinstance(out, BaseException):
            raise out
        return out if isinstance(out, str) else json.dumps(out)


def allowed_for_mode(input_mode: str, allowed_kinds=None) -> tuple[str, ...]:
    kinds = ACTION_KINDS if allowed_kinds is None else tuple(k for k in ACTION_KINDS if k in allowed_kinds)
    if input_mode == "global_only":
        kinds = tuple(k for k in kinds if k in GLOBAL_KINDS)
    return kinds


def build_request(ctx: InterpreterContext, input_mode: str = "both", allowed_kinds=None,
                  prompt_version: str = PROMPT_VERSION) -> dict:
    """Assemble the wire request; ``input_mode`` decides which context parts are sent."""
    if input_mode not in INPUT_MODES:
        raise ValueError(f"unknown input mode {input_mode!r}; expected one of {INPUT_MODES}")
    images = []
    if input_mode in ("both", "density_only", "global_only"):
        images.append(("density", ctx.density_png))
    if input_mode in ("both", "stress_only", "global_only"):
        images.append(("stress", ctx.stress_png))
    request = {
        "prompt": load_prompt(prompt_version),
        "prompt_version": prompt_version,
        "temperature": 0,
        "images": [{"name": n, "media_type": "image/png", "data": base64.b64encode(b).decode("ascii")}
                   for n, b in images],
        "history": [a.to_dict() for a in ctx.history],
        "allowed_actions": list(allowed_for_mode(input_mode, allowed_kinds)),
        "context": {
            "step": ctx.step,
            "budget": ctx.budget,
            "c_current": _num(ctx.c_current),
            "c_retained": _num(ctx.c_retained),
            "domain": [float(d) for d in ctx.spec.dims],
        },
    }
    # numeric evaluation is withheld only from the image-only ablations
    if input_mode not in ("density_only", "stress_only"):
        ev = ctx.evaluation.to_dict()
        ev["max_stress_gate_passed"] = ctx.evaluation.gates["max_stress"].passed
        request["evaluation"] = ev
    return request


def _num(v):
    v = float(v)
    return v if v == v and abs(v) != float("inf") else None


_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


def parse_response(text: str) -> list:
    """Raw candidate list from a response body."""
    if not isinstance(text, str):
        raise LLMResponseError("response body is not text")
    body = text.strip()
    m = _FENCE.match(body)
    if m:
        body = m.group(1).strip()
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise LLMResponseError(f"response is not JSON: {exc.msg}") from exc
    if isinstance(data, dict):
        if "actions" in data:
            data = data["actions"]
        elif isinstance(data.get("content") or data.get("text"), str):
            return parse_response(data.get("content") or data.get("text"))
    if not isinstance(data, list):
        raise LLMResponseError("response is not a JSON array of candidates")
    return data


def candidates_to_actions(candidates, allowed_kinds) -> tuple[list[Action], list[dict]]:
    """Convert raw candidates; returns (actions, dropped) with a reason per dropped entry."""
    actions, dropped = [], []
    for i, c in enumerate(candidates):
        if not isinstance(c, dict):
            dropped.append({"index": i, "reason": "not_an_object"})
            continue
        kind = c.get("action", c.get("kind"))
        if kind not in ACTION_KINDS:
            dropped.append({"index": i, "reason": "unknown_kind", "action": kind})
            continue
        if kind not in allowed_kinds:
            dropped.append({"index": i, "reason": "disallowed_kind", "action": kind})
            continue
        params = c.get("params", {})
        if not isinstance(params, dict):
            dropped.append({"index": i, "reason": "malformed", "action": kind})
            continue
        try:
            priority = int(c.get("priority", len(actions) + 1))
        except (TypeError, ValueError):
            dropped.append({"index": i, "reason": "bad_priority", "action": kind})
            continue
        if priority < 1:
            dropped.append({"index": i, "reason": "bad_priority", "action": kind})
            continue
        actions.append(Action(kind, params, priority, "llm"))
    return actions, dropped


class LLMStrategy:
    """External-model geometry suggestions ahead of the deterministic rule safeguards.

    Transport or parse failures fall back to the rule-based proposals; the
    failure is recorded in the proposal notes.
    """

    def __init__(self, client=None, input_mode: str = "both", allowed_kinds=None,
                 prompt_version: str = PROMPT_VERSION):
        if input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {input_mode!r}")
        self.client = client
        self.input_mode = input_mode
        self.allowed_kinds = allowed_kinds
        self.prompt_version = prompt_version
        self.name = "llm" if input_mode == "both" else input_mode

    def propose(self, ctx: InterpreterContext) -> Proposal:
        return propose_llm(ctx, self.client, self.input_mode, self.allowed_kinds, self.prompt_version)


def propose_llm(ctx: InterpreterContext, client, input_mode: str = "both", allowed_kinds=None,
                prompt_version: str = PROMPT_VERSION) -> Proposal:
    allowed = allowed_for_mode(input_mode, allowed_kinds if allowed_kinds is not None else ctx.allowed_kinds)
    safeguards = [a for a in rule_actions(ctx.evaluation, ctx.spec) if a.kind in allowed]
    notes = []
    try:
        if client is None:
            client = HTTPClient.from_env()
        request = build_request(ctx, input_mode, allowed, prompt_version)
        raw = parse_response(client.complete(request))
    except (LLMTransportError, LLMResponseError) as exc:
        logger.warning("interpreter fallback to rule-based proposals: %s", exc)
        notes.append(f"fallback: {exc}")
        return Proposal(_ranked(safeguards), notes=notes)

    actions, dropped = candidates_to_actions(raw, allowed)
    kept = []
    for a in sorted(actions, key=lambda a: a.priority):
        reason = validate_action(a, ctx.spec, ctx.history, allowed)
        if reason is None:
            kept.append(a)
        else:
            dropped.append({"action": a.kind, "reason": reason, "params": a.to_dict()["params"]})
    notes.extend(f"dropped: {json.dumps(d, sort_keys=True)}" for d in dropped)
    # model candidates keep their priorities; safeguards rank after them and
    # a deterministic duplicate of a model candidate is dropped
    seen = {a.key() for a in kept}
    base = max((a.priority for a in kept), default=0)
    extra = [a for a in safeguards if a.key() not in seen]
    ranked = kept + [a.with_priority(base + i + 1) for i, a in enumerate(extra)]
    return Proposal(ranked, notes=notes)
