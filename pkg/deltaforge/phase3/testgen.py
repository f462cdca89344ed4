"""
Test regeneration from accepted model deltas.

Requirement constraints touched by a delta are bound to model feature paths,
turned into invariant monitors, and perturbed at their boundaries while every
other bound path stays at its nominal value. Verdicts are computed by
evaluating the monitors directly, so every test can be re-checked without a
simulator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from deltaforge.errors import (
    ConfigError,
    MissingNominalContext,
    ParseError,
    PreconditionViolation,
    UnboundVariable,
    UnresolvedFeaturePath,
)
from deltaforge.phase3.sysml.cache import ValidatedCache
from deltaforge.phase3.sysml.delta import Delta, DeltaOp, load_delta
from deltaforge.phase3.sysml.elements import Model, Package, RequirementDef, walk
from deltaforge.phase3.sysml.expressions import (
    FLIPPED,
    Expression,
    FeatureRef,
    Number,
    String,
    as_value,
    evaluate_expression,
    feature_paths,
    parse_number,
    render,
    substitute,
)
from deltaforge.phase3.sysml.parser import parse, parse_expression, parse_member
from deltaforge.phase3.sysml.resolver import Resolver
from deltaforge.utils import canonical_json, load_json_file, sha256_hex, write_json_file, write_text_file

logger = logging.getLogger(__name__)

HOLDS = "invariant_holds"
VIOLATED = "invariant_violated"

Value = Union[Decimal, str]


# === bindings and config ===

@dataclass(frozen=True)
class Range:
    lo: Decimal
    hi: Decimal

    def __post_init__(self):
        if not self.lo < self.hi:
            raise PreconditionViolation(f"range domain needs lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Enum:
    values: Tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise PreconditionViolation("enum domain needs at least one value")


def _domain_from_dict(data: Optional[Mapping[str, Any]]) -> Union[Range, Enum, None]:
    if data is None:
        return None
    kind = data.get("kind")
    if kind == "range":
        return Range(parse_number(str(data["lo"])), parse_number(str(data["hi"])))
    if kind == "enum":
        return Enum(tuple(str(v) for v in data["values"]))
    raise ConfigError(f"domain kind must be 'range' or 'enum', got {kind!r}")


@dataclass(frozen=True)
class VariableBinding:
    spec_var: str
    feature_path: Tuple[str, ...]
    unit: str = ""
    domain: Union[Range, Enum, None] = None
    epsilon: Optional[Decimal] = None

    @property
    def dotted(self) -> str:
        return ".".join(self.feature_path)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VariableBinding":
        try:
            path = data["feature_path"]
            return cls(
                spec_var=str(data["spec_var"]),
                feature_path=tuple(path.split(".")) if isinstance(path, str) else tuple(path),
                unit=str(data.get("unit", "")),
                domain=_domain_from_dict(data.get("domain")),
                epsilon=parse_number(str(data["epsilon"])) if data.get("epsilon") is not None else None,
            )
        except KeyError as e:
            raise ConfigError(f"binding {data!r} is missing {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        domain: Optional[Dict[str, Any]] = None
        if isinstance(self.domain, Range):
            domain = {"kind": "range", "lo": str(self.domain.lo), "hi": str(self.domain.hi)}
        elif isinstance(self.domain, Enum):
            domain = {"kind": "enum", "values": list(self.domain.values)}
        return {
            "spec_var": self.spec_var,
            "feature_path": self.dotted,
            "unit": self.unit,
            "domain": domain,
            "epsilon": None if self.epsilon is None else str(self.epsilon),
        }


def load_bindings(path) -> List[VariableBinding]:
    data = load_json_file(path)
    if not isinstance(data, list):
        raise ConfigError(f"bindings file {path} must hold a JSON list")
    return [VariableBinding.from_dict(b) for b in data]


@dataclass(frozen=True)
class TestgenConfig:
    __test__ = False

    nominal: Mapping[str, Value] = field(default_factory=dict)
    epsilon: Mapping[str, Decimal] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestgenConfig":
        return cls(
            nominal={k: as_value(v) for k, v in (data.get("nominal") or {}).items()},
            epsilon={k: parse_number(str(v)) for k, v in (data.get("epsilon") or {}).items()},
        )

    @classmethod
    def from_file(cls, path) -> "TestgenConfig":
        return cls.from_dict(load_json_file(path))


# === binding ===

@dataclass(frozen=True)
class TouchedRequirement:
    path: str
    requirement: RequirementDef


@dataclass(frozen=True)
class BoundDelta:
    delta: Delta
    requirements: Tuple[TouchedRequirement, ...]
    bindings: Mapping[str, VariableBinding]

    @property
    def delta_id(self) -> str:
        return self.delta.delta_id

    def binding_for_path(self, dotted: str) -> Optional[VariableBinding]:
        return next((b for b in self.bindings.values() if b.dotted == dotted), None)


def _parsed_element(spec):
    if not isinstance(spec, str):
        return spec
    if spec.lstrip().startswith("package"):
        return parse(spec).packages[0]
    return parse_member(spec)


def _requirements_under(el, path: str) -> List[TouchedRequirement]:
    found = [TouchedRequirement(path, el)] if isinstance(el, RequirementDef) else []
    found.extend(TouchedRequirement(eid, r) for eid, r in walk(el, path) if isinstance(r, RequirementDef))
    return found


def touched_requirements(delta: Delta, model: Model) -> List[TouchedRequirement]:
    """
    Requirements whose constraints the delta writes, as written by the delta.
    A set_requirement that leaves constraints alone contributes the model's
    current constraints for that requirement.
    """
    resolver = Resolver(model)
    touched: Dict[str, TouchedRequirement] = {}
    for op in delta.ops:
        for t in _op_requirements(op, resolver):
            touched[t.path] = t
    return list(touched.values())


def _op_requirements(op: DeltaOp, resolver: Resolver) -> List[TouchedRequirement]:
    if op.op == "set_requirement":
        current = resolver.resolve_absolute(op.path.split("::")).target
        base = current[1] if current and isinstance(current[1], RequirementDef) else RequirementDef(op.path.split("::")[-1])
        if isinstance(op.constraints, tuple):
            base = RequirementDef(base.name, base.doc, tuple(
                c if isinstance(c, Expression) else parse_expression(c) for c in op.constraints
            ))
        return [TouchedRequirement(op.path, base)]
    if op.op not in ("add_element", "replace_element"):
        return []
    try:
        el = _parsed_element(op.element)
    except ParseError as e:
        logger.warning("element of %s at '%s' does not parse; no requirements taken from it: %s", op.op, op.path, e)
        return []
    if isinstance(el, Package):
        return [TouchedRequirement(eid, r) for eid, r in walk(el, el.name) if isinstance(r, RequirementDef)]
    name = getattr(el, "name", None)
    if name is None:
        return []
    if op.op == "add_element":
        owner = op.path
    else:
        owner = op.path.rsplit("::", 1)[0] if "::" in op.path else ""
    return _requirements_under(el, f"{owner}::{name}" if owner else name)


def bind_variables(delta: Delta, bindings: Sequence[VariableBinding], model: Model) -> BoundDelta:
    """
    Maps every variable of the touched constraints to exactly one binding.
    A variable matches a binding by its full dotted name, else by its last
    segment. Raises UnboundVariable or UnresolvedFeaturePath.
    """
    requirements = touched_requirements(delta, model)
    variables: List[str] = []
    for t in requirements:
        for expr in t.requirement.constraints:
            for p in feature_paths(expr):
                dotted = ".".join(p)
                if dotted not in variables:
                    variables.append(dotted)

    mapping: Dict[str, VariableBinding] = {}
    unbound: List[str] = []
    ambiguous: List[str] = []
    for var in variables:
        hits = [b for b in bindings if b.spec_var == var]
        if not hits:
            hits = [b for b in bindings if b.spec_var == var.split(".")[-1]]
        if len(hits) == 1:
            mapping[var] = hits[0]
        elif hits:
            ambiguous.append(var)
        else:
            unbound.append(var)
    if unbound or ambiguous:
        raise UnboundVariable(unbound + ambiguous, ambiguous)

    resolver = Resolver(model)
    unresolved = sorted({b.dotted for b in mapping.values() if not resolver.resolve_feature_anywhere(b.feature_path).ok})
    if unresolved:
        raise UnresolvedFeaturePath(unresolved)
    logger.info("[testgen] delta %s: %d requirement(s), %d variable(s) bound",
                delta.delta_id, len(requirements), len(mapping))
    return BoundDelta(delta, tuple(requirements), mapping)


# === monitors ===

@dataclass(frozen=True)
class Monitor:
    monitor_id: str
    delta_id: str
    expression: Expression
    description: str
    requirement: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "monitor_id": self.monitor_id,
            "delta_id": self.delta_id,
            "expression": render(self.expression),
            "description": self.description,
            "requirement": self.requirement,
        }


def gen_monitors(bound: BoundDelta) -> List[Monitor]:
    """One monitor per touched constraint, with variables rewritten to feature paths."""
    mapping = {var: b.feature_path for var, b in bound.bindings.items()}
    monitors: List[Monitor] = []
    for t in bound.requirements:
        for expr in t.requirement.constraints:
            monitors.append(Monitor(
                monitor_id=f"M-{bound.delta_id}-{len(monitors)}",
                delta_id=bound.delta_id,
                expression=substitute(expr, mapping),
                description=f"{t.path}: {render(expr)}",
                requirement=t.path,
            ))
    if not monitors:
        logger.info("[testgen] delta %s touches no requirement constraint; no monitors", bound.delta_id)
    return monitors


# === stimuli ===

@dataclass(frozen=True)
class TestCase:
    __test__ = False

    test_id: str
    delta_ids: Tuple[str, ...]
    assignments: Mapping[str, Value]
    expected_verdict: str
    rationale: str
    monitor_ids: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test_id": self.test_id,
            "delta_ids": list(self.delta_ids),
            "assignments": {k: _json_value(v) for k, v in sorted(self.assignments.items())},
            "expected_verdict": self.expected_verdict,
            "rationale": self.rationale,
            "monitor_ids": list(self.monitor_ids),
        }


def _json_value(v: Value) -> Union[int, float, str]:
    if isinstance(v, Decimal):
        return int(v) if v == v.to_integral_value() else float(v)
    return v


@dataclass(frozen=True)
class _Bound:
    value: Decimal
    text: str
    strict: bool
    delta_id: str


@dataclass
class _Interval:
    lower: Optional[_Bound] = None
    upper: Optional[_Bound] = None
    delta_ids: List[str] = field(default_factory=list)

    def tighten(self, op: str, number: Number, delta_id: str) -> None:
        bound = _Bound(number.value, number.text, op in ("<", ">"), delta_id)
        if op in (">", ">=", "=="):
            if self.lower is None or (bound.value, bound.strict) > (self.lower.value, self.lower.strict):
                self.lower = bound
        if op in ("<", "<=", "=="):
            if self.upper is None or (bound.value, not bound.strict) < (self.upper.value, not self.upper.strict):
                self.upper = bound
        if delta_id not in self.delta_ids:
            self.delta_ids.append(delta_id)

    @property
    def empty(self) -> bool:
        if self.lower is None or self.upper is None:
            return False
        if self.lower.value == self.upper.value:
            return self.lower.strict or self.upper.strict
        return self.lower.value > self.upper.value

    def contains(self, v: Decimal) -> bool:
        if self.lower is not None and (v < self.lower.value or (self.lower.strict and v == self.lower.value)):
            return False
        if self.upper is not None and (v > self.upper.value or (self.upper.strict and v == self.upper.value)):
            return False
        return True


def _normalized(left, op: str, right) -> Optional[Tuple[Tuple[str, ...], str, Any]]:
    """``path op literal`` form of one comparison, or None when it is not one."""
    if isinstance(left, FeatureRef) and isinstance(right, (Number, String)):
        return left.path, op, right
    if isinstance(right, FeatureRef) and isinstance(left, (Number, String)):
        return right.path, FLIPPED[op], left
    return None


def _intervals(monitors: Iterable[Monitor]) -> Dict[str, _Interval]:
    out: Dict[str, _Interval] = {}
    for m in monitors:
        for term in m.expression.terms:
            for left, op, right in term.pairs():
                norm = _normalized(left, op, right)
                if norm is None or not isinstance(norm[2], Number):
                    continue
                path, op, number = norm
                out.setdefault(".".join(path), _Interval()).tighten(op, number, m.delta_id)
    return out


def _literal_deltas(monitors: Iterable[Monitor], dotted: str) -> Dict[str, str]:
    """Enum literal to the first delta whose monitor compares ``dotted`` against it."""
    first: Dict[str, str] = {}
    for m in monitors:
        for term in m.expression.terms:
            for left, op, right in term.pairs():
                norm = _normalized(left, op, right)
                if norm and isinstance(norm[2], String) and ".".join(norm[0]) == dotted:
                    first.setdefault(norm[2].value, m.delta_id)
    return first


def epsilon_for(text: str, path: str, bound: BoundDelta, cfg: TestgenConfig) -> Decimal:
    """Config override, then binding override, then one unit in the last written decimal place."""
    if path in cfg.epsilon:
        return cfg.epsilon[path]
    binding = bound.binding_for_path(path)
    if binding is not None and binding.epsilon is not None:
        return binding.epsilon
    decimals = len(text.split(".", 1)[1]) if "." in text else 0
    return Decimal(1).scaleb(-decimals)


def _boundary_points(interval: _Interval, path: str, bound: BoundDelta, cfg: TestgenConfig) -> List[Tuple[Decimal, str]]:
    points: List[Tuple[Decimal, str]] = []
    lo, hi = interval.lower, interval.upper
    if lo is not None:
        eps = epsilon_for(lo.text, path, bound, cfg)
        points += [(lo.value - eps, "below lower bound"), (lo.value, "at lower bound")]
    if lo is not None and hi is not None:
        points.append(((lo.value + hi.value) / 2, "midpoint"))
    elif lo is not None:
        points.append((lo.value + epsilon_for(lo.text, path, bound, cfg), "just above lower bound"))
    if hi is not None:
        eps = epsilon_for(hi.text, path, bound, cfg)
        if lo is None:
            points.append((hi.value - eps, "just below upper bound"))
        points += [(hi.value, "at upper bound"), (hi.value + eps, "above upper bound")]
    seen = set()
    unique = []
    for value, why in points:
        if value not in seen:
            seen.add(value)
            unique.append((value, why))
    return unique


def _test_id(delta_ids: Sequence[str], assignments: Mapping[str, Value], rationale: str) -> str:
    body = {"delta_ids": list(delta_ids), "assignments": {k: str(v) for k, v in sorted(assignments.items())},
            "rationale": rationale}
    return "T-" + sha256_hex(canonical_json(body))[:12]


def gen_stimuli(bound: BoundDelta, monitors: Sequence[Monitor], cfg: TestgenConfig = TestgenConfig(),
                history: Sequence[Monitor] = ()) -> List[TestCase]:
    """
    Boundary tests for every numeric bound the delta's monitors place on a
    path, intersected with the bounds earlier accepted deltas (``history``)
    place on the same path, plus one test per enum value of each bound enum
    variable. Every other bound path is fixed at its nominal value.
    """
    if not monitors:
        raise PreconditionViolation(f"delta {bound.delta_id} has no monitors to generate stimuli for")
    everything = list(history) + list(monitors)
    current_intervals = _intervals(monitors)
    all_intervals = _intervals(everything)
    enum_paths = [b.dotted for b in bound.bindings.values() if isinstance(b.domain, Enum)]
    enum_paths = [p for p in dict.fromkeys(enum_paths) if p not in current_intervals]
    perturbed = list(current_intervals) + enum_paths

    def relevant(path: str) -> List[Monitor]:
        return [m for m in everything if any(".".join(p) == path for p in feature_paths(m.expression))]

    def context_paths(path: str) -> List[str]:
        paths = {b.dotted for b in bound.bindings.values()}
        for m in relevant(path):
            paths.update(".".join(p) for p in feature_paths(m.expression))
        paths.discard(path)
        return sorted(paths)

    missing = sorted({q for p in perturbed for q in context_paths(p) if q not in cfg.nominal})
    if missing:
        raise MissingNominalContext(missing)

    tests: List[TestCase] = []

    def emit(path: str, value: Value, rationale: str, delta_ids: Sequence[str], predicted: Optional[bool]) -> None:
        assignments: Dict[str, Value] = {q: cfg.nominal[q] for q in context_paths(path)}
        assignments[path] = value
        checked = relevant(path)
        holds = all(evaluate_expression(m.expression, assignments) for m in checked)
        if predicted is not None and holds != predicted:
            logger.warning("[testgen] %s=%s: monitors say %s but the boundary rule predicts %s "
                           "(nominal context constrains the result)", path, value, holds, predicted)
        tests.append(TestCase(
            test_id=_test_id(delta_ids, assignments, rationale),
            delta_ids=tuple(delta_ids),
            assignments=assignments,
            expected_verdict=HOLDS if holds else VIOLATED,
            rationale=rationale,
            monitor_ids=tuple(m.monitor_id for m in checked),
        ))

    for path in current_intervals:
        interval = all_intervals[path]
        if interval.empty:
            logger.warning("[testgen] accumulated bounds on %s are contradictory; no boundary tests", path)
            continue
        ordered = [d for d in (m.delta_id for m in everything) if d in interval.delta_ids]
        delta_ids = list(dict.fromkeys(ordered))
        for value, why in _boundary_points(interval, path, bound, cfg):
            emit(path, value, f"{why} of {path}", delta_ids, interval.contains(value))

    for path in enum_paths:
        binding = bound.binding_for_path(path)
        introduced = _literal_deltas(everything, path)
        for value in binding.domain.values:
            emit(path, value, f"enum value '{value}' of {path}", [introduced.get(value, bound.delta_id)], None)

    logger.info("[testgen] delta %s: %d test(s) over %d path(s)", bound.delta_id, len(tests), len(perturbed))
    return tests


# === cache-level driver ===

def _resolve_delta(cache: ValidatedCache, delta_ref: str) -> Delta:
    accepted = cache.accepted_deltas()
    if Path(delta_ref).is_file():
        delta = load_delta(delta_ref)
    else:
        delta = next((d for d in accepted if d.delta_id == delta_ref), None)
        if delta is None:
            raise PreconditionViolation(f"no accepted delta '{delta_ref}' in cache {cache.directory}")
    if all(d.delta_id != delta.delta_id for d in accepted):
        raise PreconditionViolation(f"delta '{delta.delta_id}' was never accepted by cache {cache.directory}")
    return delta


def generate_tests(cache: ValidatedCache, delta_ref: str, bindings: Sequence[VariableBinding],
                   cfg: TestgenConfig = TestgenConfig()) -> Tuple[List[TestCase], List[Monitor]]:
    """
    Monitors and tests for one accepted delta against last_good, with the
    monitors of the deltas accepted before it as accumulated refinements.
    """
    delta = _resolve_delta(cache, delta_ref)
    model = cache.last_good
    history: List[Monitor] = []
    for earlier in cache.accepted_deltas():
        if earlier.delta_id == delta.delta_id:
            break
        try:
            history.extend(gen_monitors(bind_variables(earlier, bindings, model)))
        except (UnboundVariable, UnresolvedFeaturePath) as e:
            logger.warning("[testgen] earlier delta %s not accumulated: %s", earlier.delta_id, e)
    bound = bind_variables(delta, bindings, model)
    monitors = gen_monitors(bound)
    if not monitors:
        return [], []
    return gen_stimuli(bound, monitors, cfg, history), monitors


def render_testplan(tests: Sequence[TestCase], monitors: Sequence[Monitor]) -> str:
    lines = ["# Test plan", ""]
    if monitors:
        table = pd.DataFrame([m.to_dict() for m in monitors]).to_markdown(index=False, disable_numparse=True)
        lines += ["## Monitors", "", table, ""]
    lines += ["## Tests", ""]
    if not tests:
        lines.append("_No tests generated._")
    else:
        rows = [{
            "test_id": t.test_id,
            "trace": ", ".join(t.delta_ids),
            "assignments": "; ".join(f"{k} = {v}" for k, v in sorted(t.assignments.items())),
            "expected": t.expected_verdict,
            "rationale": t.rationale,
        } for t in tests]
        lines.append(pd.DataFrame(rows).to_markdown(index=False, disable_numparse=True))
    return "\n".join(lines) + "\n"


def write_outputs(tests: Sequence[TestCase], monitors: Sequence[Monitor], out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    machine = write_json_file(out_dir / "tests.json", {
        "monitors": [m.to_dict() for m in monitors],
        "tests": [t.to_dict() for t in tests],
    })
    human = write_text_file(out_dir / "testplan.md", render_testplan(tests, monitors))
    return machine, human
