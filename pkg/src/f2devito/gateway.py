"""Chat-completion backends (remote HTTP + deterministic mock), the bounded
concurrency limiter, and strict parsing of structured conversion output."""

from __future__ import annotations

import json
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import BackendUnavailable, MalformedJson, RateLimited, RequestTimeout, SchemaViolation

MIN_WORKERS = 2
MAX_WORKERS = 8
DEFAULT_WORKERS = 4
BACKOFF_SCHEDULE = (1.0, 2.0, 4.0)

EQUATION_TYPES = ("parabolic", "hyperbolic", "elliptic")
VALIDATION_KEYS = ("execution_success", "structure", "api_compliance", "parameters", "fidelity")

OUTPUT_SCHEMA_TEXT = """\
Return exactly one JSON object with these fields and no others:
{
  "devito_code": "string, the complete Devito program",
  "conversion_summary": "string",
  "key_decisions": [{"decision_type": "string", "rationale": "string"}],
  "devito_components": [{"component": "string", "purpose": "string"}],
  "equation_type": "parabolic | hyperbolic | elliptic",
  "spatial_dimensions": 1 | 2 | 3,
  "time_dependent": true | false,
  "conversion_confidence": 0.0-1.0,
  "validation": {"execution_success": bool_or_score, "structure": bool_or_score,
                 "api_compliance": bool_or_score, "parameters": bool_or_score,
                 "fidelity": bool_or_score},
  "usage_notes": ["string"],
  "optimization_hints": ["string"]
}"""


@dataclass(frozen=True)
class LlmRequest:
    system: str
    user: str
    temperature: float = 0.2
    max_tokens: int = 4096
    model: str = "default"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class ConversionOutput:
    devito_code: str
    conversion_summary: str
    key_decisions: List[Tuple[str, str]]
    devito_components: List[Tuple[str, str]]
    equation_type: str
    spatial_dimensions: int
    time_dependent: bool
    conversion_confidence: float
    validation: Dict[str, float]
    usage_notes: List[str]
    optimization_hints: List[str]


# ---------------------------------------------------------------------------
# Concurrency limiter: counting permits handed out in FIFO order
# ---------------------------------------------------------------------------

class RequestLimiter:
    def __init__(self, workers: int = DEFAULT_WORKERS):
        self.workers = max(MIN_WORKERS, min(MAX_WORKERS, int(workers)))
        self._lock = threading.Lock()
        self._available = self.workers
        self._waiters: deque = deque()
        self.in_flight = 0
        self.max_in_flight = 0

    def acquire(self) -> None:
        event = None
        with self._lock:
            if self._available > 0 and not self._waiters:
                self._available -= 1
            else:
                event = threading.Event()
                self._waiters.append(event)
        if event is not None:
            event.wait()
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)

    def release(self) -> None:
        with self._lock:
            self.in_flight -= 1
            if self._waiters:
                self._waiters.popleft().set()
            else:
                self._available += 1

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()
        return False


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class HttpBackend:
    """Chat-completion wire format: {model, messages[{role, content}],
    temperature, max_tokens}; retries rate limits with 1s/2s/4s backoff."""

    def __init__(self, endpoint: str, api_key: str = "", model: str = "default",
                 timeout_s: float = 120.0, limiter: Optional[RequestLimiter] = None,
                 sleep=time.sleep):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.timeout_s = timeout_s
        self.limiter = limiter or RequestLimiter()
        self._sleep = sleep

    def complete(self, request: LlmRequest) -> str:
        import requests

        payload = {
            "model": request.model or self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_exc: Optional[Exception] = None
        with self.limiter:
            for attempt, backoff in enumerate((*BACKOFF_SCHEDULE, None)):
                try:
                    resp = requests.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                    )
                except requests.Timeout as exc:
                    raise RequestTimeout(str(exc)) from exc
                except requests.RequestException as exc:
                    last_exc = exc
                    if backoff is None:
                        raise BackendUnavailable(str(exc)) from exc
                    self._sleep(backoff)
                    continue
                if resp.status_code == 429:
                    if backoff is None:
                        raise RateLimited("rate limited after retries")
                    self._sleep(backoff)
                    continue
                if resp.status_code >= 500:
                    last_exc = BackendUnavailable(f"server error {resp.status_code}")
                    if backoff is None:
                        raise last_exc
                    self._sleep(backoff)
                    continue
                if resp.status_code >= 400:
                    raise BackendUnavailable(f"request rejected: {resp.status_code}")
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise BackendUnavailable(f"malformed completion response: {exc}") from exc
        raise BackendUnavailable(str(last_exc))


class MockBackend:
    """Canned responses keyed by substring match against the user prompt.

    Each key maps to a response sequence; repeated calls walk the sequence
    and stick on the last entry. Optional artificial latency exercises the
    concurrency contract without a network.
    """

    def __init__(self, responses: Optional[Dict[str, Sequence[str]]] = None,
                 default: str = "", latency_s: float = 0.0,
                 limiter: Optional[RequestLimiter] = None):
        self.responses = {k: list(v) for k, v in (responses or {}).items()}
        self.default = default
        self.latency_s = latency_s
        self.limiter = limiter or RequestLimiter()
        self._positions: Dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_fixture_dir(cls, path: str | Path, latency_s: float = 0.0,
                         limiter: Optional[RequestLimiter] = None) -> "MockBackend":
        """Load every *.json fixture: {"key": ..., "responses": [...]} or
        {"key": ..., "response": ...}; file named default.json supplies the
        fallback response."""
        responses: Dict[str, List[str]] = {}
        default = ""
        for file in sorted(Path(path).glob("*.json")):
            spec = json.loads(file.read_text(encoding="utf-8"))
            seq = spec.get("responses") or [spec["response"]]
            seq = [r if isinstance(r, str) else json.dumps(r) for r in seq]
            if file.stem == "default":
                default = seq[0]
            else:
                responses[spec["key"]] = seq
        return cls(responses=responses, default=default, latency_s=latency_s, limiter=limiter)

    def complete(self, request: LlmRequest) -> str:
        with self.limiter:
            if self.latency_s:
                time.sleep(self.latency_s)
            with self._lock:
                self.calls += 1
                for key in sorted(self.responses):
                    if key in request.user or key in request.system:
                        seq = self.responses[key]
                        pos = self._positions.get(key, 0)
                        self._positions[key] = min(pos + 1, len(seq) - 1)
                        return seq[pos]
            return self.default


# ---------------------------------------------------------------------------
# Structured output parsing
# ---------------------------------------------------------------------------

_FENCE_BLOCK_RE = re.compile(r"```(?:json|python)?\s*\n(.*?)```", re.DOTALL)


def _strip_fences(raw: str) -> str:
    m = _FENCE_BLOCK_RE.search(raw)
    if m:
        return m.group(1)
    return raw


def _extract_json_object(raw: str) -> str:
    text = _strip_fences(raw).strip()
    start = text.find("{")
    if start == -1:
        raise MalformedJson("no JSON object found in response")
    depth = 0
    in_string = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if ch == "\\":
                continue
            if ch == '"' and text[i - 1] != "\\":
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    raise MalformedJson("unbalanced JSON object in response")


_TOP_FIELDS = {
    "devito_code", "conversion_summary", "key_decisions", "devito_components",
    "equation_type", "spatial_dimensions", "time_dependent",
    "conversion_confidence", "validation", "usage_notes", "optimization_hints",
}


def _require(data: dict, name: str, types) -> object:
    if name not in data:
        raise SchemaViolation(name, "missing")
    value = data[name]
    allowed = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in allowed:
        raise SchemaViolation(name, "wrong type bool")
    if not isinstance(value, allowed):
        raise SchemaViolation(name, f"wrong type {type(value).__name__}")
    return value


def _pair_list(data: dict, name: str, first: str, second: str) -> List[Tuple[str, str]]:
    value = _require(data, name, list)
    out: List[Tuple[str, str]] = []
    for i, item in enumerate(value):
        if not isinstance(item, dict) or set(item) != {first, second}:
            raise SchemaViolation(name, f"entry {i} must have exactly {{{first}, {second}}}")
        if not isinstance(item[first], str) or not isinstance(item[second], str):
            raise SchemaViolation(name, f"entry {i} fields must be strings")
        out.append((item[first], item[second]))
    return out


def _str_list(data: dict, name: str) -> List[str]:
    value = _require(data, name, list)
    for i, item in enumerate(value):
        if not isinstance(item, str):
            raise SchemaViolation(name, f"entry {i} must be a string")
    return list(value)


def parse_structured(raw: str) -> ConversionOutput:
    """Validate one structured conversion response. Rejections name the
    offending field; nothing partially valid ever escapes."""
    try:
        data = json.loads(_extract_json_object(raw))
    except MalformedJson:
        raise
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedJson("response is not a JSON object")

    unknown = set(data) - _TOP_FIELDS
    if unknown:
        raise SchemaViolation(sorted(unknown)[0], "unknown field")

    devito_code = _require(data, "devito_code", str)
    if not devito_code.strip():
        raise SchemaViolation("devito_code", "must be non-empty")
    conversion_summary = _require(data, "conversion_summary", str)
    key_decisions = _pair_list(data, "key_decisions", "decision_type", "rationale")
    devito_components = _pair_list(data, "devito_components", "component", "purpose")

    equation_type = _require(data, "equation_type", str)
    if equation_type not in EQUATION_TYPES:
        raise SchemaViolation("equation_type", f"not one of {EQUATION_TYPES}")

    dims = _require(data, "spatial_dimensions", int)
    if dims not in (1, 2, 3):
        raise SchemaViolation("spatial_dimensions", "must be 1, 2 or 3")

    time_dependent = data.get("time_dependent")
    if not isinstance(time_dependent, bool):
        raise SchemaViolation("time_dependent", "missing" if "time_dependent" not in data
                              else "must be a boolean")

    confidence = _require(data, "conversion_confidence", (int, float))
    if not 0.0 <= float(confidence) <= 1.0:
        raise SchemaViolation("conversion_confidence", "out of range [0, 1]")

    validation_raw = _require(data, "validation", dict)
    if set(validation_raw) != set(VALIDATION_KEYS):
        raise SchemaViolation("validation", f"must have exactly keys {VALIDATION_KEYS}")
    validation: Dict[str, float] = {}
    for key in VALIDATION_KEYS:
        v = validation_raw[key]
        if isinstance(v, bool):
            validation[key] = 1.0 if v else 0.0
        elif isinstance(v, (int, float)) and 0.0 <= float(v) <= 1.0:
            validation[key] = float(v)
        else:
            raise SchemaViolation("validation", f"{key} must be a flag or score in [0, 1]")

    usage_notes = _str_list(data, "usage_notes")
    optimization_hints = _str_list(data, "optimization_hints")

    return ConversionOutput(
        devito_code=devito_code,
        conversion_summary=conversion_summary,
        key_decisions=key_decisions,
        devito_components=devito_components,
        equation_type=equation_type,
        spatial_dimensions=dims,
        time_dependent=time_dependent,
        conversion_confidence=float(confidence),
        validation=validation,
        usage_notes=usage_notes,
        optimization_hints=optimization_hints,
    )
