import json

from deltaforge.phase2.agent.gateway import REPAIR_SUFFIX, prompt_key
from deltaforge.phase2.delta_extract import NOT_IN_V1, ChangeTuple
from deltaforge.phase3.agent.agent import delta_id_for, propose_delta, update_from_changes
from deltaforge.phase3.sysml.cache import ValidatedCache
from deltaforge.phase3.sysml.serializer import serialize
from deltaforge.prompt_template import delta_prompt
from tests.conftest import WEATHER_MODEL

TIGHTER = ChangeTuple(
    ccd="Wind limit tightened to 50", ev_v1="wind up to 60", ev_v2="wind up to 50",
    criterion_id="numeric_value_change", v2_section_id="3.1",
)
GUST = ChangeTuple(
    ccd="Sensor reports gusts", ev_v1=NOT_IN_V1, ev_v2="the sensor shall report gusts",
    criterion_id="addition", v2_section_id="3.2",
)


def _answer(*ops):
    return json.dumps({"ops": list(ops)})


def _key(change, model, repair=False):
    system, user = delta_prompt(change, serialize(model))
    return prompt_key(system, user + (REPAIR_SUFFIX if repair else ""), None)


def test_propose_delta_traces_the_change(mock_backend, weather_model):
    backend = mock_backend({_key(TIGHTER, weather_model): _answer(
        {"op": "set_requirement", "path": "Weather::WindLimit", "constraints": ["windSpeed <= 50"]})})
    delta = propose_delta(TIGHTER, weather_model, backend)
    assert delta.delta_id == delta_id_for(TIGHTER) == f"D-{TIGHTER.tuple_id}"
    assert delta.trace == (TIGHTER.tuple_id,)
    assert delta.ops[0].constraints == ("windSpeed <= 50",)


def test_each_change_goes_through_the_validated_update(tmp_path, mock_backend, weather_model):
    cache = ValidatedCache.init(tmp_path / "cache", WEATHER_MODEL)
    backend = mock_backend({
        _key(TIGHTER, weather_model): _answer(
            {"op": "set_requirement", "path": "Weather::WindLimit", "constraints": ["windSpeed <= 50"]}),
        # second proposal drives the station feed twice and must be rejected
        "default": _answer(
            {"op": "add_connection", "pkg_path": "Weather::Station", "connection": "connect sensor.data to feed;"}),
    })
    outcomes = update_from_changes(cache, [TIGHTER, GUST], backend)
    assert [o.accepted for o in outcomes] == [True, False]
    assert outcomes[1].trace == (GUST.tuple_id,)
    assert cache.revision == 1
    assert "constraint windSpeed <= 50;" in cache.last_good_text
    assert [h["outcome"] for h in cache.history()] == ["accepted", "rejected"]


def test_unusable_proposal_is_recorded_and_the_loop_continues(tmp_path, mock_backend, weather_model):
    cache = ValidatedCache.init(tmp_path / "cache", WEATHER_MODEL)
    backend = mock_backend({
        _key(TIGHTER, weather_model): "I would tighten the wind limit.",
        _key(TIGHTER, weather_model, repair=True): "Still no JSON, sorry.",
        "default": _answer(
            {"op": "add_element", "parent_path": "Weather::Sensor", "element": "attribute gust : Real;"}),
    })
    outcomes = update_from_changes(cache, [TIGHTER, GUST], backend, store=None)
    assert [o.accepted for o in outcomes] == [False, True]
    assert outcomes[0].diagnostics[0].code == "json_coercion_failed"
    assert outcomes[0].delta_id == delta_id_for(TIGHTER)
    # only proposals that reached the cache are in its history
    assert [h["delta_id"] for h in cache.history()] == [delta_id_for(GUST)]
    assert cache.revision == 1


def test_schema_violating_proposal_is_rejected(tmp_path, mock_backend):
    cache = ValidatedCache.init(tmp_path / "cache", WEATHER_MODEL)
    backend = mock_backend({"default": _answer({"op": "rename_everything"})})
    (outcome,) = update_from_changes(cache, [TIGHTER], backend)
    assert not outcome.accepted
    assert outcome.revision == 0
