# gateway.py

"""
Single entry point for every neural call (summary, retrieval, extraction,
delta proposal). Two backend kinds share one tool loop:

- ``http_chat``: an OpenAI-compatible chat-completions server reached through
  ``langchain_openai.ChatOpenAI`` (POST {endpoint}/chat/completions).
- ``mock``: a fixture file mapping sha256(system + NUL + user + NUL + seed) to
  the response text, so tests and desk experiments never touch the network.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import openai
from dotenv import load_dotenv
from jsonschema import Draft202012Validator
from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, SystemMessage, ToolMessage
from langchain_core.tools import BaseTool
from langchain_openai import ChatOpenAI

from deltaforge.errors import (
    BackendUnreachable,
    ConfigError,
    GatewayError,
    JsonCoercionFailed,
    MalformedResponse,
    MissingFixture,
    ToolLoopExceeded,
)
from deltaforge.utils import extract_first_json, get_llm_text_response, load_json_file, sha256_hex

load_dotenv()
logger = logging.getLogger(__name__)

BACKENDS_ENV = "DELTAFORGE_BACKENDS"
DEFAULT_RETRIES = 3
BACKOFF_BASE_SECONDS = 1.0
MAX_TOOL_ROUNDS = 8
MAX_CONCURRENCY = 4
REQUEST_TIMEOUT_SECONDS = 120.0
REPAIR_SUFFIX = (
    "\n\nYour previous answer could not be used: it was not a JSON value matching the required "
    "schema. Answer again with ONLY that JSON value and nothing else."
)

BACKEND_KINDS = ("http_chat", "mock")
_TRANSIENT_ERRORS = (
    openai.APIConnectionError,
    openai.APITimeoutError,
    openai.RateLimitError,
    openai.InternalServerError,
)


@dataclass(frozen=True)
class BackendSpec:
    id: str
    kind: str
    model: str = ""
    endpoint: Optional[str] = None
    default_temperature: float = 0.0
    supports_seed: bool = True
    fixture_path: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend '{self.id}': kind must be one of {BACKEND_KINDS}, got '{self.kind}'")
        if self.kind == "mock" and not self.fixture_path:
            raise ConfigError(f"mock backend '{self.id}' needs a fixture_path")
        if self.kind == "http_chat" and not self.endpoint:
            raise ConfigError(f"http_chat backend '{self.id}' needs an endpoint")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Optional[Path] = None) -> "BackendSpec":
        fixture = data.get("fixture_path") or data.get("fixture")
        if fixture and base_dir is not None and not Path(fixture).is_absolute():
            fixture = str(base_dir / fixture)
        return cls(
            id=data["id"],
            kind=data["kind"],
            model=data.get("model", ""),
            endpoint=data.get("endpoint"),
            default_temperature=float(data.get("default_temperature", 0.0)),
            supports_seed=bool(data.get("supports_seed", True)),
            fixture_path=fixture,
            api_key_env=data.get("api_key_env", "OPENAI_API_KEY"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "model": self.model,
            "endpoint": self.endpoint,
            "default_temperature": self.default_temperature,
            "supports_seed": self.supports_seed,
            "fixture_path": self.fixture_path,
        }


def load_backends(path: Optional[str] = None) -> Dict[str, BackendSpec]:
    """Reads a JSON list of backend specs; falls back to $DELTAFORGE_BACKENDS."""
    path = path or os.getenv(BACKENDS_ENV)
    if not path:
        raise ConfigError(f"no backend file given and {BACKENDS_ENV} is not set")
    data = load_json_file(path)
    if isinstance(data, dict):
        data = data.get("backends", [])
    backends: Dict[str, BackendSpec] = {}
    for entry in data:
        spec = BackendSpec.from_dict(entry, base_dir=Path(path).parent)
        if spec.id in backends:
            raise ConfigError(f"backend id '{spec.id}' defined twice in {path}")
        backends[spec.id] = spec
    return backends


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    tools: Sequence[BaseTool] = ()
    seed: Optional[int] = None
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "tools": [t.name for t in self.tools],
            "seed": self.seed,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class CompletionResult:
    text: str
    backend_id: str
    seed: Optional[int]
    temperature: float
    tool_calls: List[Dict[str, Any]] = field(default_factory=list)
    usage: Dict[str, int] = field(default_factory=dict)
    rounds: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "text": self.text,
            "backend_id": self.backend_id,
            "seed": self.seed,
            "temperature": self.temperature,
            "tool_calls": self.tool_calls,
            "usage": self.usage,
            "rounds": self.rounds,
        }


@dataclass(frozen=True)
class JsonCompletion:
    document: Any
    result: CompletionResult
    repaired: bool = False


@dataclass(frozen=True)
class GatewayConfig:
    retries: int = DEFAULT_RETRIES
    backoff_base: float = BACKOFF_BASE_SECONDS
    max_tool_rounds: int = MAX_TOOL_ROUNDS
    max_concurrency: int = MAX_CONCURRENCY
    timeout: float = REQUEST_TIMEOUT_SECONDS

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GatewayConfig":
        return cls(
            retries=int(data.get("retries", DEFAULT_RETRIES)),
            backoff_base=float(data.get("backoff_base", BACKOFF_BASE_SECONDS)),
            max_tool_rounds=int(data.get("max_tool_rounds", MAX_TOOL_ROUNDS)),
            max_concurrency=int(data.get("max_concurrency", MAX_CONCURRENCY)),
            timeout=float(data.get("timeout", REQUEST_TIMEOUT_SECONDS)),
        )


def prompt_key(system_prompt: str, user_prompt: str, seed: Optional[int]) -> str:
    """Fixture key of a request: sha256 over system, user and seed."""
    return sha256_hex(f"{system_prompt}\x00{user_prompt}\x00{'' if seed is None else seed}")


class MockChat:
    """Fixture-driven stand-in for a chat model; responses depend only on the key."""

    _cache: Dict[str, Dict[str, Any]] = {}
    _cache_lock = threading.Lock()

    def __init__(self, backend: BackendSpec):
        self.backend = backend
        self.fixture = self._load(backend.fixture_path)

    @classmethod
    def _load(cls, path: str) -> Dict[str, Any]:
        key = str(Path(path).resolve())
        with cls._cache_lock:
            if key not in cls._cache:
                data = load_json_file(path)
                if not isinstance(data, dict):
                    raise ConfigError(f"mock fixture {path} must be a JSON object")
                cls._cache[key] = data
            return cls._cache[key]

    @classmethod
    def clear_cache(cls) -> None:
        with cls._cache_lock:
            cls._cache.clear()

    def respond(self, req: CompletionRequest, round_index: int) -> AIMessage:
        key = prompt_key(req.system_prompt, req.user_prompt, req.seed)
        entry = self.fixture.get(key, self.fixture.get("default"))
        if entry is None:
            raise MissingFixture(self.backend.id, key)
        if isinstance(entry, str):
            return AIMessage(content=entry)
        if not isinstance(entry, dict):
            raise MalformedResponse(f"mock fixture entry for {key[:12]} must be a string or object")
        calls = entry.get("tool_calls") or []
        if calls and (round_index == 0 or entry.get("repeat")):
            return AIMessage(
                content="",
                tool_calls=[
                    {"name": c["name"], "args": c.get("args", {}), "id": f"call_{round_index}_{i}"}
                    for i, c in enumerate(calls)
                ],
            )
        return AIMessage(content=str(entry.get("text", "")))


class LLMGateway:
    """Thread-safe gateway; at most ``max_concurrency`` requests in flight."""

    def __init__(self, config: GatewayConfig = GatewayConfig()):
        self.config = config
        self._semaphore = threading.BoundedSemaphore(max(1, config.max_concurrency))
        self._in_flight = 0
        self._peak_in_flight = 0
        self._counter_lock = threading.Lock()

    @property
    def peak_in_flight(self) -> int:
        return self._peak_in_flight

    def complete(self, backend: BackendSpec, req: CompletionRequest) -> CompletionResult:
        with self._semaphore:
            with self._counter_lock:
                self._in_flight += 1
                self._peak_in_flight = max(self._peak_in_flight, self._in_flight)
            try:
                return self._run_tool_loop(backend, req)
            finally:
                with self._counter_lock:
                    self._in_flight -= 1

    def complete_json(self, backend: BackendSpec, req: CompletionRequest, schema: Mapping[str, Any]) -> JsonCompletion:
        """
        Completion coerced to a schema-valid JSON value. One repair retry with
        REPAIR_SUFFIX appended; never substitutes content.
        """
        validator = Draft202012Validator(schema)
        first = self.complete(backend, req)
        document, problems = _coerce(first.text, validator)
        if not problems:
            return JsonCompletion(document, first)

        logger.warning("backend %s returned unusable JSON (%s); retrying with repair instruction",
                       backend.id, "; ".join(problems))
        repair_req = replace(req, user_prompt=req.user_prompt + REPAIR_SUFFIX)
        try:
            second = self.complete(backend, repair_req)
        except GatewayError as e:
            raise JsonCoercionFailed(f"repair call to '{backend.id}' failed: {e}", first.text, problems) from e
        document, problems = _coerce(second.text, validator)
        if not problems:
            return JsonCompletion(document, second, repaired=True)
        raise JsonCoercionFailed(
            f"backend '{backend.id}' produced no schema-valid JSON after repair", second.text, problems
        )

    # === internals ===

    def _run_tool_loop(self, backend: BackendSpec, req: CompletionRequest) -> CompletionResult:
        temperature = backend.default_temperature if req.temperature is None else req.temperature
        seed = req.seed if backend.supports_seed else None
        tools = {t.name: t for t in req.tools}
        messages: List[BaseMessage] = [SystemMessage(content=req.system_prompt), HumanMessage(content=req.user_prompt)]
        executed: List[Dict[str, Any]] = []
        usage = {"input_tokens": 0, "output_tokens": 0}

        chat = self._chat_for(backend, req, temperature, seed)
        for round_index in range(self.config.max_tool_rounds + 1):
            ai = self._invoke(backend, chat, messages, req, round_index)
            for k, v in (getattr(ai, "usage_metadata", None) or {}).items():
                if k in usage:
                    usage[k] += int(v)
            if not ai.tool_calls:
                return CompletionResult(
                    text=get_llm_text_response(ai),
                    backend_id=backend.id,
                    seed=seed,
                    temperature=temperature,
                    tool_calls=executed,
                    usage=usage,
                    rounds=round_index + 1,
                )
            if round_index == self.config.max_tool_rounds:
                break
            messages.append(ai)
            for call in ai.tool_calls:
                output = self._run_tool(tools, call)
                executed.append({"name": call["name"], "args": call.get("args", {})})
                messages.append(ToolMessage(content=output, tool_call_id=call.get("id") or call["name"]))
        raise ToolLoopExceeded(backend.id, self.config.max_tool_rounds)

    def _chat_for(self, backend: BackendSpec, req: CompletionRequest, temperature: float, seed: Optional[int]):
        if backend.kind == "mock":
            return MockChat(backend)
        llm = ChatOpenAI(
            model=backend.model,
            base_url=backend.endpoint,
            api_key=os.getenv(backend.api_key_env) or "not-needed",
            temperature=temperature,
            seed=seed,
            max_tokens=req.max_tokens,
            timeout=self.config.timeout,
            max_retries=0,
        )
        return llm.bind_tools(list(req.tools)) if req.tools else llm

    def _invoke(self, backend: BackendSpec, chat: Any, messages: List[BaseMessage],
                req: CompletionRequest, round_index: int) -> AIMessage:
        if isinstance(chat, MockChat):
            return chat.respond(req, round_index)

        attempts = self.config.retries + 1
        last_error: Optional[BaseException] = None
        for attempt in range(attempts):
            try:
                response = chat.invoke(messages)
            except _TRANSIENT_ERRORS as e:
                last_error = e
                if attempt < attempts - 1:
                    delay = self.config.backoff_base * (2 ** attempt)
                    logger.warning("backend %s attempt %d failed (%s); retrying in %.1fs",
                                   backend.id, attempt + 1, e, delay)
                    time.sleep(delay)
                continue
            except openai.APIError as e:
                raise MalformedResponse(f"backend '{backend.id}' rejected the request: {e}") from e
            if not isinstance(response, AIMessage):
                raise MalformedResponse(f"backend '{backend.id}' returned {type(response).__name__}")
            return response
        raise BackendUnreachable(backend.id, attempts, last_error)

    @staticmethod
    def _run_tool(tools: Dict[str, BaseTool], call: Dict[str, Any]) -> str:
        tool = tools.get(call["name"])
        if tool is None:
            return json.dumps({"error": f"unknown tool '{call['name']}'"})
        try:
            output = tool.invoke(call.get("args") or {})
        except Exception as e:  # tool errors go back to the model, not up the stack
            logger.warning("tool %s failed: %s", call["name"], e)
            return json.dumps({"error": str(e)})
        return output if isinstance(output, str) else json.dumps(output)


def _coerce(text: str, validator: Draft202012Validator):
    try:
        document = extract_first_json(text)
    except ValueError as e:
        return None, [str(e)]
    problems = [e.message for e in sorted(validator.iter_errors(document), key=str)]
    return document, problems
