import json
import threading

import pytest

from deltaforge.errors import ConfigError, JsonCoercionFailed, MissingFixture, ToolLoopExceeded
from deltaforge.phase2.agent.gateway import (
    REPAIR_SUFFIX,
    BackendSpec,
    CompletionRequest,
    GatewayConfig,
    LLMGateway,
    load_backends,
    prompt_key,
)
from deltaforge.phase2.tools.tools import build_v1_tools
from deltaforge.phase2.retrieval import IDS_SCHEMA


def test_mock_answers_by_prompt_key(mock_backend):
    backend = mock_backend({prompt_key("sys", "user", 3): "hello"})
    result = LLMGateway().complete(backend, CompletionRequest("sys", "user", seed=3))
    assert result.text == "hello"
    assert result.seed == 3
    assert result.rounds == 1


def test_missing_fixture_without_default(mock_backend):
    backend = mock_backend({})
    with pytest.raises(MissingFixture):
        LLMGateway().complete(backend, CompletionRequest("sys", "user"))


def test_default_entry_answers_unknown_keys(mock_backend):
    backend = mock_backend({"default": "fallback"})
    assert LLMGateway().complete(backend, CompletionRequest("a", "b")).text == "fallback"


def test_seed_is_dropped_for_backends_without_seed_support(mock_backend):
    backend = mock_backend({"default": "x"}, supports_seed=False)
    assert LLMGateway().complete(backend, CompletionRequest("a", "b", seed=2)).seed is None


def test_tool_loop_runs_v1_tools(loaded_store, mock_backend):
    backend = mock_backend({"default": {
        "tool_calls": [{"name": "list_all_v1_sections"}, {"name": "fetch_one_v1_section", "args": {"section_id": "2.1"}}],
        "text": '{"ids": ["2.1"]}',
    }})
    req = CompletionRequest("sys", "user", tools=build_v1_tools(loaded_store))
    result = LLMGateway().complete(backend, req)
    assert result.rounds == 2
    assert [c["name"] for c in result.tool_calls] == ["list_all_v1_sections", "fetch_one_v1_section"]
    assert json.loads(result.text) == {"ids": ["2.1"]}


def test_tool_loop_is_bounded(mock_backend):
    backend = mock_backend({"default": {"tool_calls": [{"name": "list_all_v1_sections"}], "repeat": True}})
    gateway = LLMGateway(GatewayConfig(max_tool_rounds=2))
    with pytest.raises(ToolLoopExceeded) as info:
        gateway.complete(backend, CompletionRequest("sys", "user"))
    assert info.value.rounds == 2


def test_v1_tools_report_unknown_sections(loaded_store):
    _, fetch = build_v1_tools(loaded_store)
    assert "error" in json.loads(fetch.invoke({"section_id": "8.8"}))
    assert json.loads(fetch.invoke({"section_id": "2.2"}))["heading"] == "Battery"


def test_complete_json_accepts_fenced_json(mock_backend):
    backend = mock_backend({"default": '```json\n{"ids": ["1"]}\n```'})
    completion = LLMGateway().complete_json(backend, CompletionRequest("s", "u"), IDS_SCHEMA)
    assert completion.document == {"ids": ["1"]}
    assert not completion.repaired


def test_complete_json_repairs_once(mock_backend):
    backend = mock_backend({
        prompt_key("s", "u", None): "I think sections one and two.",
        prompt_key("s", "u" + REPAIR_SUFFIX, None): '{"ids": ["1", "2"]}',
    })
    completion = LLMGateway().complete_json(backend, CompletionRequest("s", "u"), IDS_SCHEMA)
    assert completion.repaired
    assert completion.document == {"ids": ["1", "2"]}


def test_complete_json_fails_after_repair(mock_backend):
    backend = mock_backend({"default": '{"sections": "1"}'})
    with pytest.raises(JsonCoercionFailed) as info:
        LLMGateway().complete_json(backend, CompletionRequest("s", "u"), IDS_SCHEMA)
    assert info.value.raw_text == '{"sections": "1"}'


def test_concurrency_is_capped(mock_backend):
    backend = mock_backend({"default": "ok"})
    gateway = LLMGateway(GatewayConfig(max_concurrency=2))
    threads = [threading.Thread(target=gateway.complete, args=(backend, CompletionRequest("s", str(i))))
               for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert 1 <= gateway.peak_in_flight <= 2


def test_backend_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        BackendSpec(id="m", kind="mock")
    with pytest.raises(ConfigError):
        BackendSpec(id="h", kind="http_chat")
    with pytest.raises(ConfigError):
        BackendSpec(id="x", kind="grpc", endpoint="http://localhost")


def test_load_backends_resolves_relative_fixtures(tmp_path):
    path = tmp_path / "backends.json"
    path.write_text(json.dumps([
        {"id": "a", "kind": "mock", "fixture": "mocks/a.json"},
        {"id": "b", "kind": "http_chat", "endpoint": "http://localhost:8000/v1", "model": "m"},
    ]), encoding="utf-8")
    backends = load_backends(str(path))
    assert backends["a"].fixture_path == str(tmp_path / "mocks/a.json")
    assert backends["b"].model == "m"


def test_load_backends_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "backends.json"
    path.write_text(json.dumps([{"id": "a", "kind": "mock", "fixture": "x.json"}] * 2), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_backends(str(path))
