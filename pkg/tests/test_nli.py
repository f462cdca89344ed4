import json

import pytest
import requests

from deltaforge.errors import ConfigError, DeltaForgeError, MalformedResponse
from deltaforge.phase2.agent import nli
from deltaforge.phase2.agent.nli import NliBackendSpec, NliUnreachable, classify, nli_key, top_label

PROBS = {"entailment": 0.2, "neutral": 0.1, "contradiction": 0.7}


class _Response:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code}", response=self)

    def json(self):
        if isinstance(self.payload, Exception):
            raise self.payload
        return self.payload


def _http():
    return NliBackendSpec("http", endpoint="http://nli.local/")


def test_http_classify_posts_premise_and_hypothesis(monkeypatch):
    seen = {}

    def post(url, json=None, timeout=None):
        seen.update(url=url, body=json)
        return _Response(PROBS)

    monkeypatch.setattr(nli.requests, "post", post)
    assert classify(_http(), "p", "h") == PROBS
    assert seen == {"url": "http://nli.local/nli", "body": {"premise": "p", "hypothesis": "h"}}


def test_connection_error_is_unreachable(monkeypatch):
    def post(*args, **kwargs):
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(nli.requests, "post", post)
    with pytest.raises(NliUnreachable):
        classify(_http(), "p", "h")


def test_server_error_is_unreachable_client_error_is_malformed(monkeypatch):
    monkeypatch.setattr(nli.requests, "post", lambda *a, **k: _Response({}, status=503))
    with pytest.raises(NliUnreachable):
        classify(_http(), "p", "h")
    monkeypatch.setattr(nli.requests, "post", lambda *a, **k: _Response({}, status=422))
    with pytest.raises(MalformedResponse):
        classify(_http(), "p", "h")


def test_probabilities_must_sum_to_one(monkeypatch):
    monkeypatch.setattr(nli.requests, "post", lambda *a, **k: _Response({**PROBS, "neutral": 0.5}))
    with pytest.raises(MalformedResponse):
        classify(_http(), "p", "h")
    monkeypatch.setattr(nli.requests, "post", lambda *a, **k: _Response(ValueError("not json")))
    with pytest.raises(MalformedResponse):
        classify(_http(), "p", "h")


@pytest.mark.parametrize("bad", [
    {"entailment": -1.0, "neutral": 1.0, "contradiction": 1.0},
    {"entailment": float("nan"), "neutral": 0.5, "contradiction": 0.5},
    {"entailment": "lots", "neutral": 0.5, "contradiction": 0.5},
    {"entailment": None, "neutral": 0.5, "contradiction": 0.5},
])
def test_probabilities_must_be_finite_and_within_unit_interval(tmp_path, bad):
    path = tmp_path / "nli.json"
    path.write_text(json.dumps({"default": bad}), encoding="utf-8")
    with pytest.raises(MalformedResponse):
        classify(NliBackendSpec("mock", fixture_path=str(path)), "p", "h")


def test_unreachable_is_a_deltaforge_error():
    assert issubclass(NliUnreachable, DeltaForgeError)
    assert NliUnreachable("down").to_dict() == {"error": "nli_unreachable", "message": "down"}


def test_mock_lookup_by_key(tmp_path):
    path = tmp_path / "nli.json"
    path.write_text(json.dumps({nli_key("p", "h"): PROBS}), encoding="utf-8")
    spec = NliBackendSpec("mock", fixture_path=str(path))
    assert classify(spec, "p", "h") == PROBS
    with pytest.raises(NliUnreachable):
        classify(spec, "p", "other")


def test_top_label_ties_follow_label_order():
    assert top_label(PROBS) == "contradiction"
    assert top_label({"entailment": 0.4, "neutral": 0.4, "contradiction": 0.2}) == "entailment"


def test_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        NliBackendSpec("http")
    with pytest.raises(ConfigError):
        NliBackendSpec("grpc", endpoint="x")
    spec = NliBackendSpec.from_dict({"kind": "mock", "fixture": "nli.json"}, base_dir=tmp_path)
    assert spec.fixture_path == str(tmp_path / "nli.json")
