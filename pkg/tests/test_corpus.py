import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaforge.errors import PreconditionViolation
from deltaforge.fixtures.corpus import (
    ACCURATE,
    HALLUCINATING,
    PERSONAS,
    UNKNOWN_ID,
    FixtureSpec,
    PlantedChange,
    generate_pair,
    write_fixture,
)
from deltaforge.phase1.sectionizer import sectionize
from deltaforge.phase2.agent.gateway import prompt_key
from deltaforge.phase2.delta_extract import NOT_IN_V1
from deltaforge.prompt_template import retrieval_prompt
from deltaforge.utils import normalize_ws


def test_same_spec_same_pair():
    a, b = generate_pair(FixtureSpec(seed=5)), generate_pair(FixtureSpec(seed=5))
    assert a.v1_text == b.v1_text and a.v2_text == b.v2_text
    assert a.oracle_map == b.oracle_map
    assert a.oracle_changes == b.oracle_changes
    assert a.mock_fixtures == b.mock_fixtures
    assert generate_pair(FixtureSpec(seed=6)).v1_text != a.v1_text


def test_oracle_shape_for_default_spec():
    pair = generate_pair(FixtureSpec(seed=1))
    v1_ids = [s.section_id for s in sectionize(pair.v1_text, version="v1")]
    assert v1_ids == ["1", "2", "3", "4", "5", "6"]
    assert [s.section_id for s in pair.v2_sections] == sorted(pair.oracle_map, key=int)

    matched = [ids for ids in pair.oracle_map.values() if ids]
    assert len(pair.oracle_map) == 6
    assert len(matched) == 5
    assert sorted(i for ids in matched for i in ids) == sorted(set(i for ids in matched for i in ids))
    assert sum(1 for ids in pair.oracle_map.values() if not ids) == 1


def test_planted_evidence_sits_in_the_right_sections():
    pair = generate_pair(FixtureSpec(seed=2))
    v1 = {s.section_id: s for s in sectionize(pair.v1_text, version="v1")}
    v2 = {s.section_id: s for s in pair.v2_sections}
    assert [int(t.v2_section_id) for t in pair.oracle_changes] == sorted(int(t.v2_section_id) for t in pair.oracle_changes)
    assert {t.criterion_id for t in pair.oracle_changes} == {"NUMERIC", "MODALITY", "SCOPE"}
    for t in pair.oracle_changes:
        assert pair.oracle_map[t.v2_section_id] == list(t.v1_section_ids)
        assert normalize_ws(t.ev_v2) in normalize_ws(v2[t.v2_section_id].text)
        if t.ev_v1 == NOT_IN_V1:
            assert t.criterion_id == "SCOPE"
        else:
            assert normalize_ws(t.ev_v1) in normalize_ws(v1[t.v1_section_ids[0]].text)
            assert normalize_ws(t.ev_v1) not in normalize_ws(v2[t.v2_section_id].text)


def test_explicit_renumbering():
    pair = generate_pair(FixtureSpec(seed=1, n_removed=0, renumber_map={"1": "2", "2": "1"}))
    assert pair.oracle_map["1"] == ["2"]
    assert pair.oracle_map["2"] == ["1"]
    assert pair.oracle_map["3"] == ["3"]
    assert pair.oracle_map["7"] == []


def test_renumbering_must_be_injective():
    with pytest.raises(PreconditionViolation):
        generate_pair(FixtureSpec(seed=1, n_removed=0, renumber_map={"1": "2"}))


@pytest.mark.parametrize("kwargs", [
    {"n_sections": 1},
    {"n_sections": 4, "n_removed": 4},
    {"distractor_vocab_size": 4},
    {"n_added": -1},
    {"sentences_per_section": 0},
])
def test_invalid_specs(kwargs):
    with pytest.raises(PreconditionViolation):
        FixtureSpec(**kwargs)


def test_planted_changes_need_surviving_sections():
    with pytest.raises(PreconditionViolation):
        generate_pair(FixtureSpec(n_sections=2, n_removed=1))
    with pytest.raises(PreconditionViolation):
        generate_pair(FixtureSpec(n_removed=0, planted_changes=(PlantedChange("NUMERIC", "5", "2", section="9"),)))


def test_mock_personas():
    pair = generate_pair(FixtureSpec(seed=4))
    assert set(pair.mock_fixtures) == set(PERSONAS)
    for v2sec in pair.v2_sections:
        key = prompt_key(*retrieval_prompt(v2sec), None)
        truth = pair.oracle_map[v2sec.section_id]
        assert json.loads(pair.mock_fixtures[ACCURATE][key]) == {"ids": truth}
        hallucinated = json.loads(pair.mock_fixtures[HALLUCINATING][key])["ids"]
        assert UNKNOWN_ID in hallucinated
        assert set(truth) <= set(hallucinated)


def test_write_fixture_lays_out_a_runnable_directory(tmp_path):
    paths = write_fixture(tmp_path / "fx", FixtureSpec(seed=0))
    for name in ("v1.txt", "v2.txt", "oracle_retrieval.json", "oracle_changes.json", "config.json"):
        assert (tmp_path / "fx" / name).exists()
    for persona in PERSONAS:
        assert paths[persona] == tmp_path / "fx" / "mocks" / f"{persona}.json"
    config = json.loads(paths["config"].read_text(encoding="utf-8"))
    assert config["store"] == "store"
    assert config["retrieval"] == {"variant": "single", "backends": [ACCURATE]}
    assert len(json.loads(paths["oracle_changes"].read_text(encoding="utf-8"))) == 3


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=0, max_value=2))
def test_oracle_maps_each_surviving_section_once(seed, n_removed):
    spec = FixtureSpec(seed=seed, n_sections=6, n_removed=n_removed)
    pair = generate_pair(spec)
    v1_ids = [i for ids in pair.oracle_map.values() for i in ids]
    assert len(v1_ids) == len(set(v1_ids)) == 6 - n_removed
    assert set(v1_ids) <= {str(i) for i in range(1, 7)}
