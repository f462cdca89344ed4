import json

import pytest

from deltaforge.errors import DeltaError, DuplicateName, InvalidPath, PathNotFound, PreconditionViolation
from deltaforge.phase3.sysml.delta import Delta, DeltaOp, apply_delta, load_delta
from deltaforge.phase3.sysml.elements import Attribute, Connection, Package, PortUsage
from deltaforge.phase3.sysml.parser import parse_expression
from deltaforge.phase3.sysml.resolver import compile
from deltaforge.phase3.sysml.serializer import serialize


def _delta(*ops, delta_id="D1"):
    return Delta(delta_id, tuple(DeltaOp.from_dict(o) for o in ops))


def _members(model, *path):
    el = model.package(path[0])
    for name in path[1:]:
        el = next(m for m in el.members if getattr(m, "name", None) == name)
    return el.members


def test_add_element_under_a_part_def(weather_model):
    out = apply_delta(weather_model, _delta(
        {"op": "add_element", "parent_path": "Weather::Station", "element": "port spare : WeatherIn;"}))
    assert _members(out, "Weather", "Station")[-1] == PortUsage("spare", ("WeatherIn",))
    assert out.source_map["Weather::Station::spare"].line == 14


def test_add_package_at_root(weather_model):
    out = apply_delta(weather_model, _delta(
        {"op": "add_element", "parent_path": "", "element": "package Extra {\n    part def Pump {}\n}"}))
    assert [p.name for p in out.packages] == ["Weather", "Extra"]


def test_only_packages_live_at_the_root(weather_model):
    with pytest.raises(DeltaError):
        apply_delta(weather_model, _delta({"op": "add_element", "parent_path": "", "element": "part def X {}"}))


def test_remove_and_replace_element(weather_model):
    out = apply_delta(weather_model, _delta(
        {"op": "replace_element", "path": "Weather::Sensor::mode", "element": "attribute mode : Integer;"},
        {"op": "remove_element", "path": "Weather::Sensor::windSpeed"},
    ))
    assert _members(out, "Weather", "Sensor")[1:] == (Attribute("mode", "Integer"),)


def test_connections_are_added_and_removed_by_index(weather_model):
    added = apply_delta(weather_model, _delta(
        {"op": "add_connection", "pkg_path": "Weather::Station", "connection": "connect feed to sensor.data;"}))
    conns = [m for m in _members(added, "Weather", "Station") if isinstance(m, Connection)]
    assert conns[-1] == Connection(("feed",), ("sensor", "data"))

    removed = apply_delta(weather_model, _delta({"op": "remove_connection", "pkg_path": "Weather::Station", "index": 0}))
    assert not any(isinstance(m, Connection) for m in _members(removed, "Weather", "Station"))

    with pytest.raises(PathNotFound):
        apply_delta(weather_model, _delta({"op": "remove_connection", "pkg_path": "Weather::Station", "index": 3}))


def test_add_connection_rejects_other_members(weather_model):
    with pytest.raises(DeltaError):
        apply_delta(weather_model, _delta(
            {"op": "add_connection", "pkg_path": "Weather::Station", "connection": "attribute x : Real;"}))


def test_set_requirement_replaces_constraints_and_doc(weather_model):
    out = apply_delta(weather_model, _delta({
        "op": "set_requirement", "path": "Weather::WindLimit",
        "doc_text": None, "constraints": ["windSpeed >= 10 and windSpeed <= 50"],
    }))
    req = next(m for m in out.package("Weather").members if getattr(m, "name", None) == "WindLimit")
    assert req.doc is None
    assert req.constraints == (parse_expression("windSpeed >= 10 and windSpeed <= 50"),)
    assert compile(out).success


def test_set_requirement_leaves_unmentioned_fields(weather_model):
    out = apply_delta(weather_model, _delta(
        {"op": "set_requirement", "path": "Weather::WindLimit", "constraint": "windSpeed < 70"}))
    req = next(m for m in out.package("Weather").members if getattr(m, "name", None) == "WindLimit")
    assert req.doc == "Operate only in moderate wind."
    assert [str(c) for c in req.constraints] == ["windSpeed < 70"]


def test_set_requirement_on_a_non_requirement(weather_model):
    with pytest.raises(PathNotFound):
        apply_delta(weather_model, _delta({"op": "set_requirement", "path": "Weather::Sensor", "constraints": []}))


def test_failed_op_reports_index_and_keeps_input(weather_model):
    before = serialize(weather_model)
    delta = _delta(
        {"op": "add_element", "parent_path": "Weather::Station", "element": "port spare : WeatherIn;"},
        {"op": "add_element", "parent_path": "Weather::Nope", "element": "attribute x : Real;"},
    )
    with pytest.raises(PathNotFound) as info:
        apply_delta(weather_model, delta)
    assert info.value.op_index == 1
    assert info.value.model == weather_model
    assert info.value.to_dict()["error"] == "path_not_found"
    assert serialize(weather_model) == before


def test_dotted_path_is_invalid(weather_model):
    with pytest.raises(InvalidPath) as info:
        apply_delta(weather_model, _delta(
            {"op": "add_element", "parent_path": "Weather::Station", "element": "port spare : WeatherIn;"},
            {"op": "remove_element", "path": "Weather.Sensor"},
        ))
    # paths are validated before anything is applied
    assert info.value.op_index == 1
    assert str(info.value).startswith("op 1:")


def test_duplicate_name(weather_model):
    with pytest.raises(DuplicateName):
        apply_delta(weather_model, _delta(
            {"op": "add_element", "parent_path": "Weather::Sensor", "element": "attribute mode : Real;"}))
    with pytest.raises(DuplicateName):
        apply_delta(weather_model, _delta(
            {"op": "replace_element", "path": "Weather::Sensor::mode", "element": "attribute windSpeed : Real;"}))


def test_unparseable_element_text(weather_model):
    with pytest.raises(DeltaError, match="does not parse"):
        apply_delta(weather_model, _delta(
            {"op": "add_element", "parent_path": "Weather", "element": "part def {"}))


def test_port_def_holds_only_attributes(weather_model):
    with pytest.raises(DeltaError):
        apply_delta(weather_model, _delta(
            {"op": "add_element", "parent_path": "Weather::WeatherIn", "element": "port p : WeatherIn;"}))
    out = apply_delta(weather_model, _delta(
        {"op": "add_element", "parent_path": "Weather::WeatherIn", "element": "attribute gust : Real;"}))
    assert out.package("Weather").members[0].attributes[-1] == Attribute("gust", "Real")


def test_from_dict_bare_list_collects_trace():
    delta = Delta.from_dict([
        {"op": "remove_element", "path": "A::b", "trace": ["c1"]},
        {"op": "remove_element", "path": "A::c", "trace": ["c1", "c2"]},
    ], delta_id="D7")
    assert delta.delta_id == "D7"
    assert delta.trace == ("c1", "c2")
    assert Delta.from_dict(delta.to_dict()) == delta


def test_from_dict_rejects_bad_records():
    with pytest.raises(PreconditionViolation):
        Delta.from_dict({"ops": [{"op": "remove_element", "path": "A"}]})
    with pytest.raises(PreconditionViolation):
        Delta.from_dict({"delta_id": "D", "ops": [{"op": "rename_element"}]})
    with pytest.raises(PreconditionViolation):
        Delta.from_dict({"delta_id": "D", "ops": []})


def test_load_delta_takes_id_from_file_stem(tmp_path):
    path = tmp_path / "D3.delta.json"
    path.write_text(json.dumps([{"op": "remove_element", "path": "Weather::WindLimit"}]), encoding="utf-8")
    delta = load_delta(path)
    assert delta.delta_id == "D3"
    assert delta.ops[0].path == "Weather::WindLimit"


def test_ops_accept_parsed_elements(weather_model):
    delta = Delta("D1", (DeltaOp("add_element", "", Package("Extra")),))
    assert apply_delta(weather_model, delta).package("Extra") == Package("Extra")
