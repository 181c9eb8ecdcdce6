from __future__ import annotations

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from f2devito.errors import BackendUnavailable, MalformedJson, SchemaViolation
from f2devito.gateway import (
    ConversionOutput,
    HttpBackend,
    LlmRequest,
    MockBackend,
    RequestLimiter,
    parse_structured,
)


def valid_payload(**overrides):
    data = {
        "devito_code": "from devito import Grid\ngrid = Grid(shape=(10,))",
        "conversion_summary": "ported the loop to symbolic form",
        "key_decisions": [{"decision_type": "scheme", "rationale": "kept upwind"}],
        "devito_components": [{"component": "Grid", "purpose": "domain"}],
        "equation_type": "parabolic",
        "spatial_dimensions": 2,
        "time_dependent": True,
        "conversion_confidence": 0.9,
        "validation": {
            "execution_success": True,
            "structure": 1.0,
            "api_compliance": True,
            "parameters": 0.95,
            "fidelity": 0.8,
        },
        "usage_notes": ["run with python heat.py"],
        "optimization_hints": [],
    }
    data.update(overrides)
    return data


def test_request_rejects_negative_temperature():
    with pytest.raises(ValueError):
        LlmRequest(system="s", user="u", temperature=-0.1)


# ---------------------------------------------------------------------------
# limiter
# ---------------------------------------------------------------------------

def test_limiter_clamps_workers():
    assert RequestLimiter(1).workers == 2
    assert RequestLimiter(99).workers == 8
    assert RequestLimiter(4).workers == 4


def test_limiter_bounds_in_flight():
    limiter = RequestLimiter(3)
    stop = threading.Event()

    def task():
        with limiter:
            time.sleep(0.02)

    with ThreadPoolExecutor(max_workers=10) as pool:
        for _ in range(20):
            pool.submit(task)
    stop.set()
    assert limiter.max_in_flight <= 3
    assert limiter.in_flight == 0


def test_limiter_wall_time_contract():
    # N tasks of latency L through W permits: wall <= ceil(N/W) * L * 1.25
    workers, n_tasks, latency = 4, 12, 0.1
    backend = MockBackend(default="ok", latency_s=latency,
                          limiter=RequestLimiter(workers))
    req = LlmRequest(system="s", user="u")
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=n_tasks) as pool:
        futures = [pool.submit(backend.complete, req) for _ in range(n_tasks)]
        for f in futures:
            assert f.result() == "ok"
    wall = time.perf_counter() - start
    assert wall <= math.ceil(n_tasks / workers) * latency * 1.25
    assert backend.limiter.max_in_flight <= workers


# ---------------------------------------------------------------------------
# mock backend
# ---------------------------------------------------------------------------

def test_mock_keyed_lookup_and_determinism():
    backend = MockBackend(responses={"program heat2d": ["resp-a"]}, default="fallback")
    req = LlmRequest(system="s", user="source: program heat2d ...")
    assert backend.complete(req) == "resp-a"
    assert backend.complete(req) == "resp-a"
    other = LlmRequest(system="s", user="nothing matching")
    assert backend.complete(other) == "fallback"


def test_mock_sequential_responses_stick_on_last():
    backend = MockBackend(responses={"key": ["first", "second"]})
    req = LlmRequest(system="", user="has key inside")
    assert [backend.complete(req) for _ in range(3)] == ["first", "second", "second"]


def test_mock_latency_floor():
    backend = MockBackend(default="ok", latency_s=0.2)
    req = LlmRequest(system="", user="x")
    start = time.perf_counter()
    backend.complete(req)
    assert time.perf_counter() - start >= 0.2


def test_mock_fixture_dir_loading(tmp_path):
    (tmp_path / "heat.json").write_text(json.dumps(
        {"key": "program heat2d", "responses": ["one", "two"]}))
    (tmp_path / "default.json").write_text(json.dumps(
        {"key": "", "response": "generic"}))
    backend = MockBackend.from_fixture_dir(tmp_path)
    req = LlmRequest(system="", user="program heat2d body")
    assert backend.complete(req) == "one"
    assert backend.complete(LlmRequest(system="", user="anything")) == "generic"


def test_http_backend_unreachable_host_fails_after_retries():
    sleeps = []
    backend = HttpBackend("http://127.0.0.1:1/v1/chat", timeout_s=0.2,
                          sleep=sleeps.append)
    with pytest.raises(BackendUnavailable):
        backend.complete(LlmRequest(system="s", user="u"))
    assert sleeps == [1.0, 2.0, 4.0]  # exponential backoff schedule


# ---------------------------------------------------------------------------
# parse_structured
# ---------------------------------------------------------------------------

def test_valid_payload_parses():
    out = parse_structured(json.dumps(valid_payload()))
    assert isinstance(out, ConversionOutput)
    assert out.equation_type == "parabolic"
    assert out.validation["execution_success"] == 1.0
    assert out.key_decisions == [("scheme", "kept upwind")]


def test_fenced_payload_parses():
    raw = "Here is the result:\n```json\n" + json.dumps(valid_payload()) + "\n```\nDone."
    out = parse_structured(raw)
    assert out.spatial_dimensions == 2


def test_missing_field_names_field():
    data = valid_payload()
    del data["devito_code"]
    with pytest.raises(SchemaViolation) as exc:
        parse_structured(json.dumps(data))
    assert exc.value.field == "devito_code"
    assert exc.value.reason == "missing"


def test_confidence_out_of_range():
    with pytest.raises(SchemaViolation) as exc:
        parse_structured(json.dumps(valid_payload(conversion_confidence=1.5)))
    assert exc.value.field == "conversion_confidence"


def test_unknown_field_rejected():
    with pytest.raises(SchemaViolation) as exc:
        parse_structured(json.dumps(valid_payload(extra_key="nope")))
    assert exc.value.field == "extra_key"


def test_malformed_json():
    with pytest.raises(MalformedJson):
        parse_structured("{not json at all")
    with pytest.raises(MalformedJson):
        parse_structured("no object here")


SCHEMA_GATE_CASES = [
    # (mutation, expected error type, offending field or None)
    (lambda d: d.pop("devito_code"), SchemaViolation, "devito_code"),
    (lambda d: d.pop("conversion_summary"), SchemaViolation, "conversion_summary"),
    (lambda d: d.pop("key_decisions"), SchemaViolation, "key_decisions"),
    (lambda d: d.pop("devito_components"), SchemaViolation, "devito_components"),
    (lambda d: d.pop("equation_type"), SchemaViolation, "equation_type"),
    (lambda d: d.pop("spatial_dimensions"), SchemaViolation, "spatial_dimensions"),
    (lambda d: d.pop("time_dependent"), SchemaViolation, "time_dependent"),
    (lambda d: d.pop("conversion_confidence"), SchemaViolation, "conversion_confidence"),
    (lambda d: d.pop("validation"), SchemaViolation, "validation"),
    (lambda d: d.pop("usage_notes"), SchemaViolation, "usage_notes"),
    (lambda d: d.update(conversion_confidence=1.5), SchemaViolation, "conversion_confidence"),
    (lambda d: d.update(conversion_confidence=-0.1), SchemaViolation, "conversion_confidence"),
    (lambda d: d.update(spatial_dimensions=4), SchemaViolation, "spatial_dimensions"),
    (lambda d: d.update(spatial_dimensions=0), SchemaViolation, "spatial_dimensions"),
    (lambda d: d.update(equation_type="quadratic"), SchemaViolation, "equation_type"),
    (lambda d: d.update(devito_code=""), SchemaViolation, "devito_code"),
    (lambda d: d.update(devito_code=3), SchemaViolation, "devito_code"),
    (lambda d: d.update(time_dependent="yes"), SchemaViolation, "time_dependent"),
    (lambda d: d.update(extra_field=1), SchemaViolation, "extra_field"),
    (lambda d: d.update(validation={"execution_success": True}), SchemaViolation, "validation"),
]


@pytest.mark.parametrize("case", range(len(SCHEMA_GATE_CASES)))
def test_schema_gate_case(case):
    mutate, err_type, field = SCHEMA_GATE_CASES[case]
    data = valid_payload()
    mutate(data)
    with pytest.raises(err_type) as exc:
        parse_structured(json.dumps(data))
    if field is not None:
        assert exc.value.field == field


def test_schema_gate_malformed_wrappers():
    # fence-wrapped truncated JSON and prose with no object at all
    with pytest.raises(MalformedJson):
        parse_structured("```json\n{\"devito_code\": \"x\", \n```")
    with pytest.raises(MalformedJson):
        parse_structured("The conversion failed, sorry.")
