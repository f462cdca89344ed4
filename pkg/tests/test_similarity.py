import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaforge.errors import EmptyCorpus
from deltaforge.phase2.similarity import TfidfIndex, cosine, fit, tokenize

CORPUS = [
    "the transmitter shall stay within five percent of nominal power",
    "the battery shall last ten hours",
    "the operator shall acknowledge every alarm",
]


def test_tokenize_lowercases_and_drops_single_chars():
    assert tokenize("A Pump, 2 Valves and X-ray") == ["pump", "valves", "and", "ray"]


def test_identical_texts_score_one():
    index = fit(CORPUS)
    assert cosine(index, CORPUS[0], CORPUS[0]) == pytest.approx(1.0)


def test_disjoint_vocabulary_scores_zero():
    index = fit(CORPUS)
    assert cosine(index, "battery hours", "operator alarm") == 0.0


def test_out_of_vocabulary_text_scores_zero():
    index = fit(CORPUS)
    assert cosine(index, "quantum flux", CORPUS[0]) == 0.0
    assert index.cosine("", CORPUS[0]) == 0.0


def test_smoothed_idf():
    index = fit(CORPUS)
    # "the" is in all three documents, "battery" in one
    assert index.idf[index.vocabulary["the"]] == pytest.approx(1.0)
    assert index.idf[index.vocabulary["battery"]] == pytest.approx(math.log(4 / 2) + 1)


def test_stop_words_are_excluded():
    index = fit(CORPUS, stop_words="english")
    assert "the" not in index.vocabulary
    assert "battery" in index.vocabulary


def test_index_survives_json_round_trip():
    index = fit(CORPUS, stop_words=["shall"])
    restored = TfidfIndex.from_dict(index.to_dict())
    assert restored.vocabulary == index.vocabulary
    assert restored.cosine(CORPUS[0], CORPUS[1]) == pytest.approx(index.cosine(CORPUS[0], CORPUS[1]))
    assert "shall" not in restored.vocabulary


def test_empty_corpus_rejected():
    with pytest.raises(EmptyCorpus):
        fit([])
    with pytest.raises(EmptyCorpus):
        fit(["", "  "])


_text = st.lists(st.sampled_from(["pump", "valve", "alarm", "battery", "power", "shall", "the"]),
                 max_size=12).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(_text, _text)
def test_cosine_is_symmetric_and_bounded(a, b):
    index = fit(CORPUS + ["pump valve"])
    s = index.cosine(a, b)
    assert 0.0 <= s <= 1.0
    assert s == pytest.approx(index.cosine(b, a))
