# nli.py

"""
Natural language inference client used by the contradiction check.

Wire contract: POST {endpoint}/nli with {"premise", "hypothesis"}; the answer
is {"entailment", "neutral", "contradiction"} probabilities summing to 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import requests

from deltaforge.errors import ConfigError, MalformedResponse, NliUnreachable
from deltaforge.utils import load_json_file, sha256_hex

logger = logging.getLogger(__name__)

NLI_LABELS = ("entailment", "neutral", "contradiction")
PROBABILITY_TOLERANCE = 1e-6
NLI_TIMEOUT_SECONDS = 30


@dataclass(frozen=True)
class NliBackendSpec:
    kind: str
    endpoint: Optional[str] = None
    fixture_path: Optional[str] = None
    timeout: float = NLI_TIMEOUT_SECONDS

    def __post_init__(self):
        if self.kind not in ("http", "mock"):
            raise ConfigError(f"NLI backend kind must be 'http' or 'mock', got '{self.kind}'")
        if self.kind == "http" and not self.endpoint:
            raise ConfigError("http NLI backend needs an endpoint")
        if self.kind == "mock" and not self.fixture_path:
            raise ConfigError("mock NLI backend needs a fixture_path")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Optional[Path] = None) -> "NliBackendSpec":
        fixture = data.get("fixture_path") or data.get("fixture")
        if fixture and base_dir is not None and not Path(fixture).is_absolute():
            fixture = str(base_dir / fixture)
        return cls(
            kind=data["kind"],
            endpoint=data.get("endpoint"),
            fixture_path=fixture,
            timeout=float(data.get("timeout", NLI_TIMEOUT_SECONDS)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "endpoint": self.endpoint, "fixture_path": self.fixture_path}


def nli_key(premise: str, hypothesis: str) -> str:
    return sha256_hex(f"{premise}\x00{hypothesis}")


def _validate(probs: Any) -> Dict[str, float]:
    if not isinstance(probs, dict) or any(label not in probs for label in NLI_LABELS):
        raise MalformedResponse(f"NLI response lacks {NLI_LABELS}: {probs!r}")
    try:
        out = {label: float(probs[label]) for label in NLI_LABELS}
    except (TypeError, ValueError) as e:
        raise MalformedResponse(f"NLI probabilities are not numbers: {probs!r}") from e
    if not all(math.isfinite(p) and 0.0 <= p <= 1.0 for p in out.values()):
        raise MalformedResponse(f"NLI probabilities must lie in [0, 1]: {out}")
    if abs(sum(out.values()) - 1.0) > PROBABILITY_TOLERANCE:
        raise MalformedResponse(f"NLI probabilities sum to {sum(out.values())}, not 1")
    return out


def classify(spec: NliBackendSpec, premise: str, hypothesis: str) -> Dict[str, float]:
    """Returns label probabilities; raises NliUnreachable when the service is down."""
    if spec.kind == "mock":
        if spec.fixture_path is None or not Path(spec.fixture_path).exists():
            raise NliUnreachable(f"NLI fixture {spec.fixture_path} missing")
        fixture = load_json_file(spec.fixture_path)
        if fixture.get("unreachable"):
            raise NliUnreachable("mock NLI configured as unreachable")
        probs = fixture.get(nli_key(premise, hypothesis), fixture.get("default"))
        if probs is None:
            raise NliUnreachable("mock NLI has no entry and no default")
        return _validate(probs)

    try:
        response = requests.post(
            f"{spec.endpoint.rstrip('/')}/nli",
            json={"premise": premise, "hypothesis": hypothesis},
            timeout=spec.timeout,
        )
        response.raise_for_status()
        return _validate(response.json())
    except (requests.ConnectionError, requests.Timeout) as e:
        raise NliUnreachable(str(e)) from e
    except requests.HTTPError as e:
        if e.response is not None and e.response.status_code >= 500:
            raise NliUnreachable(str(e)) from e
        raise MalformedResponse(f"NLI request rejected: {e}") from e
    except ValueError as e:
        raise MalformedResponse(f"NLI response is not JSON: {e}") from e


def top_label(probs: Mapping[str, float]) -> str:
    # ties resolve in NLI_LABELS order
    return max(NLI_LABELS, key=lambda label: probs[label])
