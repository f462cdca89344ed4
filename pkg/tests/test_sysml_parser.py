import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from deltaforge.errors import ParseError
from deltaforge.phase3.sysml.elements import (
    Attribute,
    Connection,
    Import,
    Model,
    Package,
    PartDef,
    PartUsage,
    RequirementDef,
    walk,
)
from deltaforge.phase3.sysml.expressions import evaluate_expression
from deltaforge.phase3.sysml.parser import DRIFT_CODE, parse, parse_expression, parse_member
from deltaforge.phase3.sysml.serializer import serialize
from tests.conftest import WEATHER_MODEL


def test_parses_weather_model(weather_model):
    pkg = weather_model.package("Weather")
    assert [type(m).__name__ for m in pkg.members] == [
        "PortDef", "PartDef", "PartDef", "RequirementDef", "PartUsage", "Satisfy",
    ]
    station = pkg.members[2]
    assert station.members[2] == Connection(("sensor", "data"), ("feed",))
    req = pkg.members[3]
    assert req.doc == "Operate only in moderate wind."
    assert str(req.constraints[0]) == "windSpeed <= 60"


def test_serializer_output_reparses_to_equal_model(weather_model):
    text = serialize(weather_model)
    assert text == WEATHER_MODEL
    assert parse(text) == weather_model


def test_source_map_points_at_declarations(weather_model):
    assert weather_model.source_map["Weather::Station::sensor"].line == 11
    assert weather_model.source_map["Weather::<satisfy#0>"].line == 20


def test_import_path_drift_gets_a_corrected_line():
    with pytest.raises(ParseError) as info:
        parse("package App {\n    private import Lib.Pumps.*;\n}\n")
    (diag,) = info.value.diagnostics
    assert diag.code == DRIFT_CODE
    assert diag.span.line == 2
    assert diag.suggestion == "write 'private import Lib::Pumps::*;'"


def test_parser_recovers_and_reports_every_error():
    text = "package P {\n    part x : ;\n    attribute y Real;\n    part def Ok {}\n}\n"
    with pytest.raises(ParseError) as info:
        parse(text)
    assert [d.span.line for d in info.value.diagnostics] == [2, 3]


def test_unknown_characters_are_diagnosed():
    with pytest.raises(ParseError) as info:
        parse("package P { @ }")
    assert info.value.diagnostics[0].code == "unexpected_character"


def test_feature_path_with_qualified_separator_is_rejected():
    with pytest.raises(ParseError) as info:
        parse("package P { connect a::b to c; }")
    assert "'.'" in info.value.diagnostics[0].message


def test_parse_member_forms():
    assert parse_member("attribute v : Real;") == Attribute("v", "Real")
    assert parse_member("part p : Lib::Pump;") == PartUsage("p", ("Lib", "Pump"), None)
    assert parse_member("part p : Pump {}") == PartUsage("p", ("Pump",), ())
    assert parse_member("public import Lib::*;") == Import(("Lib",), True, "public")
    with pytest.raises(ParseError):
        parse_member("attribute v : Real; attribute w : Real;")


def test_doc_strings_with_escapes_survive_serialization():
    model = Model((Package("P", (RequirementDef("R", 'say "hi"\\now\nnext'),)),))
    assert parse(serialize(model)) == model


def test_expressions_evaluate_chains():
    expr = parse_expression('0 <= a.b and a.b < 10 and mode == "dry"')
    assert evaluate_expression(expr, {"a.b": 0, "mode": "dry"})
    assert not evaluate_expression(expr, {"a.b": 10, "mode": "dry"})
    assert not evaluate_expression(expr, {"a.b": 5, "mode": "wet"})
    assert evaluate_expression(parse_expression("1 < x <= 2.5"), {"x": 2.5})


def test_walk_ids_are_qualified(weather_model):
    ids = [eid for eid, _ in walk(weather_model)]
    assert "Weather::Sensor::data" in ids
    assert "Weather::Station::<connection#0>" in ids


_names = st.sampled_from(["Pump", "Valve", "Tank", "Motor", "Gauge", "Pipe"])
_attrs = st.lists(st.tuples(st.sampled_from(["p", "q", "flow", "level"]), st.sampled_from(["Real", "Integer"])),
                  max_size=3, unique_by=lambda t: t[0])


_segments = st.sampled_from(["Lib", "Pumps", "Hydraulics", "Units", "Core"])
_imports = st.lists(
    st.tuples(st.lists(_segments, min_size=2, max_size=4).map(tuple), st.booleans(),
              st.sampled_from([None, "private", "public"])),
    max_size=3,
)


@st.composite
def _models(draw):
    members = [Import(path, wildcard, vis) for path, wildcard, vis in draw(_imports)]
    for name, attrs in draw(st.lists(st.tuples(_names, _attrs), min_size=1, max_size=4, unique_by=lambda t: t[0])):
        members.append(PartDef(name, tuple(Attribute(a, t) for a, t in attrs)))
        members.append(PartUsage(name.lower(), (name,), None))
    bound = draw(st.integers(min_value=-100, max_value=100))
    members.append(RequirementDef("R", None, (parse_expression(f"x.y >= {bound}"),)))
    return Model((Package("Plant", tuple(members)),))


@settings(max_examples=100, deadline=None)
@given(_models())
def test_generated_models_survive_serialization(model):
    assert parse(serialize(model)) == model


@settings(max_examples=100, deadline=None)
@given(_models(), st.data())
def test_every_import_separator_drift_is_diagnosed(model, data):
    lines = serialize(model).splitlines()
    import_lines = [n for n, line in enumerate(lines) if " import " in f" {line.strip()}"]
    assume(import_lines)
    n = data.draw(st.sampled_from(import_lines))
    original = lines[n].strip()
    k = data.draw(st.integers(min_value=0, max_value=original.count("::") - 1))
    head, *rest = lines[n].split("::")
    lines[n] = head + "".join(("." if i == k else "::") + part for i, part in enumerate(rest))
    with pytest.raises(ParseError) as info:
        parse("\n".join(lines) + "\n")
    (diag,) = info.value.diagnostics
    assert diag.code == DRIFT_CODE
    assert diag.span.line == n + 1
    assert diag.suggestion == f"write '{original}'"
