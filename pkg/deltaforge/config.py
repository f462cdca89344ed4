"""
Pipeline configuration loaded from one JSON file.

Relative paths resolve against the config file's directory. The resolved
config is what ``compare`` persists as the run's ``run_config`` artifact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from deltaforge.errors import ConfigError
from deltaforge.phase1.sectionizer import SectionizerRules
from deltaforge.phase2.agent.gateway import BackendSpec, GatewayConfig, load_backends
from deltaforge.phase2.agent.nli import NliBackendSpec
from deltaforge.phase2.checkers import CheckConfig
from deltaforge.phase2.delta_extract import Criterion, load_criteria, select_criteria
from deltaforge.phase2.retrieval import DEFAULT_N_SEEDS, DIVERSITY_TEMPERATURE, STRATEGIES, UNION
from deltaforge.utils import load_json_file

logger = logging.getLogger(__name__)

VARIANTS = ("single", "redundant", "different_llms", "monolithic")
DEFAULT_WORKERS = 4


@dataclass(frozen=True)
class RetrievalConfig:
    variant: str = "single"
    backends: Tuple[str, ...] = ()
    strategy: str = UNION
    n_seeds: int = DEFAULT_N_SEEDS
    diversity_temperature: float = DIVERSITY_TEMPERATURE
    prune_alpha: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"retrieval variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"consensus strategy must be one of {STRATEGIES}, got '{self.strategy}'")
        if not self.backends:
            raise ConfigError("retrieval needs at least one backend id")
        if self.variant == "different_llms" and len(self.backends) < 2:
            raise ConfigError("variant different_llms needs at least two backends")
        if self.variant == "redundant" and self.n_seeds < 2:
            raise ConfigError("variant redundant needs n_seeds >= 2")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RetrievalConfig":
        backends = data.get("backends", data.get("backend", ()))
        if isinstance(backends, str):
            backends = (backends,)
        return cls(
            variant=data.get("variant", "single"),
            backends=tuple(backends),
            strategy=data.get("strategy", UNION),
            n_seeds=int(data.get("n_seeds", DEFAULT_N_SEEDS)),
            diversity_temperature=float(data.get("diversity_temperature", DIVERSITY_TEMPERATURE)),
            prune_alpha=bool(data.get("prune_alpha", False)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "backends": list(self.backends),
            "strategy": self.strategy,
            "n_seeds": self.n_seeds,
            "diversity_temperature": self.diversity_temperature,
            "prune_alpha": self.prune_alpha,
        }


@dataclass(frozen=True)
class PipelineConfig:
    store: Path
    backends: Dict[str, BackendSpec]
    retrieval: RetrievalConfig
    summary_backend: str
    extract_backend: str
    criteria: Tuple[Criterion, ...]
    checks: CheckConfig = CheckConfig()
    gateway: GatewayConfig = GatewayConfig()
    nli: Optional[NliBackendSpec] = None
    sectionizer: SectionizerRules = SectionizerRules()
    summary_in_extraction: bool = True
    workers: int = DEFAULT_WORKERS
    v1_version: str = "v1"
    v2_version: str = "v2"
    report_dir: Optional[Path] = None
    sysml_model: Optional[Path] = None
    bindings: Optional[Path] = None
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        for backend_id in (self.summary_backend, self.extract_backend, *self.retrieval.backends):
            if backend_id not in self.backends:
                raise ConfigError(f"backend '{backend_id}' is not defined; known: {sorted(self.backends)}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def backend(self, backend_id: str) -> BackendSpec:
        return self.backends[backend_id]

    @property
    def retrieval_backends(self) -> List[BackendSpec]:
        return [self.backends[b] for b in self.retrieval.backends]

    @classmethod
    def from_file(cls, path, store: Optional[str] = None) -> "PipelineConfig":
        path = Path(path)
        data = load_json_file(path)
        if not isinstance(data, dict):
            raise ConfigError(f"pipeline config {path} must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent, store=store, source=path)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Optional[Path] = None, store: Optional[str] = None,
                  source: Optional[Path] = None) -> "PipelineConfig":
        base_dir = base_dir or Path(".")

        def resolve(value: Optional[str], must_exist: bool = True) -> Optional[Path]:
            if value is None:
                return None
            p = Path(value)
            if not p.is_absolute():
                p = base_dir / p
            if must_exist and not p.exists():
                raise ConfigError(f"referenced file {p} does not exist")
            return p

        if isinstance(data.get("backends"), list):
            backends: Dict[str, BackendSpec] = {}
            for entry in data["backends"]:
                spec = BackendSpec.from_dict(entry, base_dir=base_dir)
                if spec.id in backends:
                    raise ConfigError(f"backend id '{spec.id}' defined twice")
                backends[spec.id] = spec
        else:
            backends_file = resolve(data.get("backends_file"))
            backends = load_backends(str(backends_file) if backends_file else None)
        for spec in backends.values():
            if spec.kind == "mock" and not Path(spec.fixture_path).exists():
                raise ConfigError(f"fixture {spec.fixture_path} of backend '{spec.id}' does not exist")

        retrieval = RetrievalConfig.from_dict(data.get("retrieval", {}))
        default_backend = retrieval.backends[0] if retrieval.backends else None
        criteria_file = resolve(data.get("criteria_file"))
        registry = load_criteria(str(criteria_file) if criteria_file else None)
        nli = data.get("nli")
        sectionizer = data.get("sectionizer")

        store_path = store or data.get("store")
        if store_path is None:
            raise ConfigError("no store path given in config or on the command line")
        config = cls(
            store=Path(store_path) if store else resolve(store_path, must_exist=False),
            backends=backends,
            retrieval=retrieval,
            summary_backend=data.get("summary_backend", default_backend),
            extract_backend=data.get("extract_backend", default_backend),
            criteria=tuple(select_criteria(data.get("criteria"), registry)),
            checks=CheckConfig.from_dict(data.get("checks", {})),
            gateway=GatewayConfig.from_dict(data.get("gateway", {})),
            nli=NliBackendSpec.from_dict(nli, base_dir=base_dir) if nli else None,
            sectionizer=SectionizerRules.from_dict(sectionizer) if sectionizer else SectionizerRules(),
            summary_in_extraction=bool(data.get("summary_in_extraction", True)),
            workers=int(data.get("workers", DEFAULT_WORKERS)),
            v1_version=data.get("v1_version", "v1"),
            v2_version=data.get("v2_version", "v2"),
            report_dir=resolve(data.get("report_dir"), must_exist=False),
            sysml_model=resolve(data.get("sysml_model")),
            bindings=resolve(data.get("bindings")),
            source=source,
        )
        if config.nli is not None and config.nli.kind == "mock" and not Path(config.nli.fixture_path).exists():
            raise ConfigError(f"NLI fixture {config.nli.fixture_path} does not exist")
        return config

    def to_dict(self) -> Dict[str, Any]:
        return {
            "store": str(self.store),
            "backends": [self.backends[k].to_dict() for k in sorted(self.backends)],
            "retrieval": self.retrieval.to_dict(),
            "summary_backend": self.summary_backend,
            "extract_backend": self.extract_backend,
            "criteria": [{"id": c.id, "description": c.description} for c in self.criteria],
            "checks": self.checks.to_dict(),
            "gateway": {
                "retries": self.gateway.retries,
                "backoff_base": self.gateway.backoff_base,
                "max_tool_rounds": self.gateway.max_tool_rounds,
                "max_concurrency": self.gateway.max_concurrency,
                "timeout": self.gateway.timeout,
            },
            "nli": self.nli.to_dict() if self.nli else None,
            "summary_in_extraction": self.summary_in_extraction,
            "workers": self.workers,
            "v1_version": self.v1_version,
            "v2_version": self.v2_version,
            "report_dir": str(self.report_dir) if self.report_dir else None,
            "sysml_model": str(self.sysml_model) if self.sysml_model else None,
            "bindings": str(self.bindings) if self.bindings else None,
        }

    @classmethod
    def from_persisted(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        """Rebuilds a config from a ``run_config`` payload (no file existence checks)."""
        criteria = tuple(Criterion(c["id"], c["description"]) for c in data["criteria"])
        nli = data.get("nli")
        return cls(
            store=Path(data["store"]),
            backends={b["id"]: BackendSpec.from_dict(b) for b in data["backends"]},
            retrieval=RetrievalConfig.from_dict(data["retrieval"]),
            summary_backend=data["summary_backend"],
            extract_backend=data["extract_backend"],
            criteria=criteria,
            checks=CheckConfig.from_dict(data["checks"]),
            gateway=GatewayConfig.from_dict(data.get("gateway", {})),
            nli=NliBackendSpec.from_dict(nli) if nli else None,
            summary_in_extraction=data.get("summary_in_extraction", True),
            workers=int(data.get("workers", DEFAULT_WORKERS)),
            v1_version=data.get("v1_version", "v1"),
            v2_version=data.get("v2_version", "v2"),
            report_dir=Path(data["report_dir"]) if data.get("report_dir") else None,
        )
