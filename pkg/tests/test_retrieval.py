import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaforge.errors import EmptyV1, MixedSections, PreconditionViolation, RetrievalFailed
from deltaforge.phase1.sectionizer import sectionize
from deltaforge.phase2.agent.gateway import prompt_key
from deltaforge.phase2.retrieval import (
    MAJORITY,
    UNION,
    ConsensusSet,
    RetrievalResult,
    find_relevant_sec,
    find_relevant_sec_different_llms,
    find_relevant_sec_monolithic,
    find_relevant_sec_redundant,
    merge_consensus,
    persist_consensus,
)
from deltaforge.prompt_template import monolithic_prompt, retrieval_prompt
from tests.conftest import V2_TEXT


def _ids(*ids):
    return json.dumps({"ids": list(ids)})


def _result(*ids, proposer="m", seed=None, section="2.1"):
    return RetrievalResult(section, proposer, frozenset(ids), seed)


def test_single_retrieval_drops_unknown_ids(loaded_store, mock_backend):
    v2sec = loaded_store.fetch_section("v2", "2.1")
    backend = mock_backend({prompt_key(*retrieval_prompt(v2sec), None): _ids("2.1", "9.9")})
    result = find_relevant_sec(v2sec, loaded_store, backend, run=1)
    assert result.candidate_ids == {"2.1"}
    assert result.dropped_ids == ("9.9",)
    record = loaded_store.latest_artifact("retrieval", "2.1")
    assert record.payload["candidate_ids"] == ["2.1"]
    assert record.payload["dropped_ids"] == ["9.9"]
    assert record.payload["run"] == 1


def test_retrieval_without_v1_fails(store, mock_backend):
    store.put_sections("v2", sectionize(V2_TEXT, version="v2"))
    with pytest.raises(EmptyV1):
        find_relevant_sec(store.fetch_section("v2", "1"), store, mock_backend({"default": _ids()}))


def test_redundant_uses_seeds_one_to_n(loaded_store, mock_backend):
    v2sec = loaded_store.fetch_section("v2", "2.2")
    system, user = retrieval_prompt(v2sec)
    backend = mock_backend({
        prompt_key(system, user, 1): _ids("2.2"),
        prompt_key(system, user, 2): _ids("2.2", "2.1"),
        prompt_key(system, user, 3): _ids("2.2"),
    })
    results = find_relevant_sec_redundant(v2sec, loaded_store, backend, n_seeds=3)
    assert sorted(r.seed for r in results) == [1, 2, 3]
    assert merge_consensus(results, MAJORITY).member_ids == {"2.2"}
    assert merge_consensus(results, UNION).member_ids == {"2.1", "2.2"}


def test_redundant_needs_two_seeds(loaded_store, mock_backend):
    with pytest.raises(PreconditionViolation):
        find_relevant_sec_redundant(loaded_store.fetch_section("v2", "1"), loaded_store,
                                    mock_backend({"default": _ids()}), n_seeds=1)


def test_different_llms_survive_one_failure(loaded_store, mock_backend):
    v2sec = loaded_store.fetch_section("v2", "3")
    good = mock_backend({"default": _ids("3")})
    broken = mock_backend({})
    results = find_relevant_sec_different_llms(v2sec, loaded_store, [good, broken])
    assert [r.proposer for r in results] == [good.id]
    failed = [r for r in loaded_store.get_artifacts("retrieval", "3") if "error" in r.payload]
    assert failed[0].payload["error"]["error"] == "missing_fixture"


def test_different_llms_all_failing(loaded_store, mock_backend):
    v2sec = loaded_store.fetch_section("v2", "3")
    with pytest.raises(RetrievalFailed):
        find_relevant_sec_different_llms(v2sec, loaded_store, [mock_backend({}), mock_backend({})])


def test_monolithic_uses_only_ids(loaded_store, mock_backend):
    v2sec = loaded_store.fetch_section("v2", "2.1")
    answer = json.dumps({"summary": "power", "ids": ["2.1"], "changes": [{"ccd": "x"}]})
    backend = mock_backend({prompt_key(*monolithic_prompt(v2sec), None): answer})
    assert find_relevant_sec_monolithic(v2sec, loaded_store, backend).candidate_ids == {"2.1"}


def test_majority_is_strict():
    results = [_result("1", "2", proposer="a"), _result("1", proposer="b"), _result("2", proposer="c"),
               _result(proposer="d")]
    consensus = merge_consensus(results, MAJORITY)
    assert consensus.member_ids == frozenset()
    assert consensus.votes == {"1": 2, "2": 2}


def test_merge_rejects_mixed_sections():
    with pytest.raises(MixedSections):
        merge_consensus([_result("1", section="1"), _result("1", section="2")])


def test_merge_rejects_empty_and_unknown_strategy():
    with pytest.raises(PreconditionViolation):
        merge_consensus([])
    with pytest.raises(PreconditionViolation):
        merge_consensus([_result("1")], "plurality")


def test_consensus_payload_round_trip(store):
    consensus = merge_consensus([_result("2", "10", proposer="a"), _result("2", proposer="b")])
    revision = persist_consensus(store, consensus, run=4)
    record = store.latest_artifact("consensus", "2.1", run=4)
    assert record.revision == revision
    assert record.payload["member_ids"] == ["2", "10"]
    restored = ConsensusSet.from_payload("2.1", record.payload)
    assert restored.member_ids == consensus.member_ids
    assert restored.proposers == ("a", "b")


_id_sets = st.lists(st.frozensets(st.sampled_from(["1", "2", "3", "4", "5"])), min_size=1, max_size=6)


@settings(max_examples=80, deadline=None)
@given(_id_sets)
def test_consensus_bounds(sets):
    results = [_result(*s, proposer=f"p{i}") for i, s in enumerate(sets)]
    union = merge_consensus(results, UNION).member_ids
    majority = merge_consensus(results, MAJORITY).member_ids
    assert union == frozenset().union(*sets)
    assert majority <= union
    for s in sets:
        assert s <= union
