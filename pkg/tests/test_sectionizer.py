import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaforge.errors import NoSectionsFound, PreconditionViolation
from deltaforge.phase1.sectionizer import (
    PREAMBLE_ID,
    SectionizerRules,
    heading_of,
    reconstruct,
    sectionize,
)
from deltaforge.utils import normalize_ws
from tests.conftest import V1_TEXT


def test_numbered_sections_in_order():
    sections = sectionize(V1_TEXT, version="v1")
    assert [s.section_id for s in sections] == [PREAMBLE_ID, "1", "2", "2.1", "2.2", "3"]
    assert [s.order_index for s in sections] == list(range(6))
    assert sections[3].heading == "Transmit Power"
    assert sections[3].parent_id == "2"
    assert sections[1].parent_id is None
    assert all(s.doc_version == "v1" for s in sections)


def test_preamble_holds_text_before_first_heading():
    sections = sectionize(V1_TEXT)
    assert sections[0].text == "Radio Link Requirements"
    assert sections[0].heading == ""


def test_sentences_starting_with_numbers_are_not_headings():
    assert heading_of("10 hours shall be the minimum.") is None
    assert heading_of("3.2 The pump shall stop within 4 s, unless overridden,") is None
    assert heading_of("3.2 Pump Control") == ("3.2", "Pump Control")
    assert heading_of("4. Logging") == ("4", "Logging")


def test_page_numbers_are_dropped():
    sections = sectionize("1 Intro\nSome text.\n17\nMore text.\n")
    assert sections[0].text == "Some text.\nMore text."


def test_duplicate_heading_id_stays_body_text():
    sections = sectionize("1 Intro\nA.\n1 Intro\nB.\n")
    assert len(sections) == 1
    assert sections[0].text == "A.\n1 Intro\nB."


def test_markdown_headings_get_dotted_ids():
    text = "# Scope\nA.\n## Detail\nB.\n# Power\nC.\n"
    sections = sectionize(text, SectionizerRules(markdown=True))
    assert [(s.section_id, s.heading) for s in sections] == [("1", "Scope"), ("1.1", "Detail"), ("2", "Power")]


def test_markdown_skipped_level_keeps_ids_unique():
    text = "# A\nalpha\n### B\nbeta\n## C\ngamma\n### D\ndelta\n"
    sections = sectionize(text, SectionizerRules(markdown=True))
    assert [(s.section_id, s.heading) for s in sections] == [
        ("1", "A"), ("1.0.1", "B"), ("1.1", "C"), ("1.1.1", "D")]
    assert [s.text for s in sections] == ["alpha", "beta", "gamma", "delta"]
    assert sections[3].parent_id == "1.1"


def test_markdown_reconstruct_emits_hash_headings():
    rules = SectionizerRules(markdown=True)
    text = "# Intro\nalpha\n## Scope\nbeta\n### Deep\ngamma"
    sections = sectionize(text, rules)
    assert reconstruct(sections, rules) == text


def test_max_depth_limits_heading_levels():
    rules = SectionizerRules(max_depth=2)
    assert heading_of("1.2.3 Deep Heading", rules) is None
    assert heading_of("1.2 Shallow Heading", rules) == ("1.2", "Shallow Heading")


def test_rules_from_dict_defaults():
    rules = SectionizerRules.from_dict({"markdown": True})
    assert heading_of("## Heading", rules) == ("##", "Heading")


def test_empty_input_rejected():
    with pytest.raises(PreconditionViolation):
        sectionize("   \n\n")


def test_text_without_headings_rejected():
    with pytest.raises(NoSectionsFound):
        sectionize("just prose, no structure at all.\nand more of it.")


def test_reconstruct_matches_input_modulo_whitespace():
    sections = sectionize(V1_TEXT)
    assert normalize_ws(reconstruct(sections)) == normalize_ws(V1_TEXT)


_words = st.text(alphabet="abcdefghij", min_size=2, max_size=8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.lists(_words, min_size=1, max_size=3), st.lists(_words, min_size=1, max_size=6)),
                min_size=1, max_size=6))
def test_every_body_line_lands_in_exactly_one_section(parts):
    lines = []
    for i, (heading_words, body_words) in enumerate(parts, 1):
        lines.append(f"{i} H{' '.join(heading_words)}")
        lines.append(f"x{' '.join(body_words)}.")
    text = "\n".join(lines)
    sections = sectionize(text)
    assert len(sections) == len(parts)
    assert normalize_ws(reconstruct(sections)) == normalize_ws(text)
