import pytest

from deltaforge.errors import UnknownCheckId
from deltaforge.phase3.sysml.checks import CHECKS, has_errors, static_check
from deltaforge.phase3.sysml.elements import Severity
from deltaforge.phase3.sysml.parser import parse
from tests.conftest import WEATHER_MODEL


def _variant(old, new):
    return parse(WEATHER_MODEL.replace(old, new))


def test_clean_model_has_no_findings(weather_model):
    assert static_check(weather_model) == []


def test_two_sources_on_one_destination_is_an_error():
    model = _variant("connect sensor.data to feed;", "connect sensor.data to feed;\n        connect sensor.data to feed;")
    (diag,) = static_check(model)
    assert diag.code == "chk_multiple_sources_same_dest"
    assert diag.severity is Severity.ERROR
    assert diag.element_id == "Weather::Station::<connection#1>"
    assert diag.span.line == 14
    assert has_errors([diag])


def test_unconnected_port_is_a_warning():
    model = _variant("port feed : WeatherIn;", "port feed : WeatherIn;\n        port spare : WeatherIn;")
    (diag,) = static_check(model)
    assert diag.code == "chk_dangling_port"
    assert diag.severity is Severity.WARNING
    assert diag.element_id == "Weather::Station::spare"
    assert not has_errors([diag])


def test_duplicate_name_in_one_scope():
    model = _variant("attribute mode : String;", "attribute mode : String;\n        attribute mode : Real;")
    (diag,) = static_check(model)
    assert diag.code == "chk_duplicate_definition"
    assert "'mode' is declared 2 times in 'Weather::Sensor'" in diag.message


def test_requirement_without_satisfy_is_a_warning():
    model = _variant("part station : Station;", "require def Spare {}\n    part station : Station;")
    (diag,) = static_check(model)
    assert diag.code == "chk_unallocated_requirement"
    assert diag.element_id == "Weather::Spare"


def test_only_enabled_checks_run():
    model = _variant("port feed : WeatherIn;", "port feed : WeatherIn;\n        port spare : WeatherIn;")
    assert static_check(model, ["chk_duplicate_definition"]) == []
    assert len(static_check(model, ["chk_dangling_port"])) == 1
    assert static_check(model, []) == []


def test_unknown_check_id(weather_model):
    with pytest.raises(UnknownCheckId):
        static_check(weather_model, ["chk_not_a_check"])


def test_registry_order():
    assert list(CHECKS) == [
        "chk_multiple_sources_same_dest",
        "chk_dangling_port",
        "chk_duplicate_definition",
        "chk_unallocated_requirement",
    ]
