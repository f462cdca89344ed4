"""
Synthetic v1/v2 document pairs with known ground truth.

Every section draws its words from its own slice of a fixed syllable word
list, so sections share no vocabulary apart from the sentence frame words
and TF-IDF scores between them can be checked by hand. The v2 document
renumbers the surviving v1 sections, plants criterion-specific edits, drops
some sections and adds new ones. Mock backend fixtures for three retrieval
personas and one summary/extraction backend are keyed with the same prompt
builders the pipeline uses.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from deltaforge.errors import PreconditionViolation
from deltaforge.phase1.sectionizer import Section, sectionize
from deltaforge.phase2.agent.gateway import prompt_key
from deltaforge.phase2.delta_extract import DEFAULT_CRITERIA, NOT_IN_V1, NOT_IN_V2, ChangeTuple, Criterion
from deltaforge.phase2.retrieval import DEFAULT_N_SEEDS
from deltaforge.prompt_template import extraction_prompt, monolithic_prompt, retrieval_prompt, summary_prompt
from deltaforge.utils import sorted_ids, write_json_file, write_text_file

logger = logging.getLogger(__name__)

SYLLABLES = ("ka", "lo", "mi", "ter", "van", "zu", "rel", "dos", "pin", "gra",
             "sel", "tum", "bor", "fen", "quo", "wix", "nar", "ple", "sko", "dun")

ACCURATE = "accurate"
NOISY = "noisy"
HALLUCINATING = "hallucinating"
PERSONAS = (ACCURATE, NOISY, HALLUCINATING)
UNKNOWN_ID = "99.9"
EMPTY_ANSWER = json.dumps({"ids": [], "changes": []})

TEMPLATES = {
    "NUMERIC": "The {a} {b} shall stay within {x} of the {c} {d}.",
    "MODALITY": "The {a} {b} {x} {c} the {d} {e}.",
}
DEFAULT_TEMPLATE = "The {a} {b} shall {x}."


@dataclass(frozen=True)
class PlantedChange:
    criterion: str
    v1_excerpt: str
    v2_excerpt: str
    # v1 section to plant into; picked by the generator when None
    section: Optional[str] = None


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 0
    n_sections: int = 6
    renumber_map: Optional[Mapping[str, str]] = None
    planted_changes: Optional[Tuple[PlantedChange, ...]] = None
    n_added: int = 1
    n_removed: int = 1
    distractor_vocab_size: int = 8
    sentences_per_section: int = 3

    def __post_init__(self):
        if self.n_sections < 2:
            raise PreconditionViolation(f"a fixture needs n_sections >= 2, got {self.n_sections}")
        if not 0 <= self.n_removed < self.n_sections:
            raise PreconditionViolation(f"n_removed must be in [0, {self.n_sections}), got {self.n_removed}")
        if self.n_added < 0 or self.distractor_vocab_size < 5 or self.sentences_per_section < 1:
            raise PreconditionViolation("n_added >= 0, distractor_vocab_size >= 5 and sentences_per_section >= 1")


@dataclass
class FixturePair:
    v1_text: str
    v2_text: str
    oracle_map: Dict[str, List[str]]
    oracle_changes: List[ChangeTuple]
    mock_fixtures: Dict[str, Dict[str, Any]]
    v2_sections: List[Section] = field(default_factory=list)


def _word_pool(rng: np.random.Generator) -> List[str]:
    words = ["".join(p) for p in itertools.product(SYLLABLES, repeat=3)]
    return [words[i] for i in rng.permutation(len(words))]


def _sentence(template: str, words: Sequence[str], rng: np.random.Generator, x: str = "") -> str:
    picks = [words[i] for i in rng.choice(len(words), size=5, replace=False)]
    return template.format(a=picks[0], b=picks[1], c=picks[2], d=picks[3], e=picks[4], x=x)


def _body(words: Sequence[str], n: int, rng: np.random.Generator) -> List[str]:
    verbs = ("monitor", "report", "limit", "record")
    return [_sentence(DEFAULT_TEMPLATE, words, rng, f"{verbs[i % len(verbs)]} the {words[i % len(words)]}")
            for i in range(n)]


def _default_changes() -> Tuple[PlantedChange, ...]:
    return (
        PlantedChange("NUMERIC", "±5%", "±2%"),
        PlantedChange("MODALITY", "shall", "may"),
        PlantedChange("SCOPE", NOT_IN_V1, "also cover the backup channel"),
    )


def _renumbering(kept: Sequence[str], spec: FixtureSpec, rng: np.random.Generator) -> Dict[str, str]:
    if spec.renumber_map is not None:
        mapping = {sid: spec.renumber_map.get(sid, sid) for sid in kept}
        if len(set(mapping.values())) != len(mapping):
            raise PreconditionViolation(f"renumber_map sends two v1 sections to one v2 id: {dict(spec.renumber_map)}")
        return mapping
    order = list(kept)
    if len(order) >= 2:
        i = int(rng.integers(0, len(order) - 1))
        order[i], order[i + 1] = order[i + 1], order[i]
    return {sid: str(n) for n, sid in enumerate(order, start=1)}


def _document(sections: Sequence[Tuple[str, str, List[str]]]) -> str:
    parts = []
    for sid, heading, lines in sections:
        parts.append(f"{sid} {heading}")
        parts.extend(lines)
        parts.append("")
    return "\n".join(parts)


def generate_pair(spec: FixtureSpec) -> FixturePair:
    """v1/v2 text, oracle retrieval map, oracle changes and mock fixtures; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    pool = _word_pool(rng)
    n_total = spec.n_sections + spec.n_added
    vocab = [pool[i * spec.distractor_vocab_size:(i + 1) * spec.distractor_vocab_size] for i in range(n_total)]

    v1_ids = [str(i) for i in range(1, spec.n_sections + 1)]
    headings = {sid: f"{vocab[i][0].capitalize()} {vocab[i][1]}" for i, sid in enumerate(v1_ids)}
    v1_lines = {sid: _body(vocab[i], spec.sentences_per_section, rng) for i, sid in enumerate(v1_ids)}
    v2_lines = {sid: list(lines) for sid, lines in v1_lines.items()}

    removed = set(str(x) for x in rng.choice(v1_ids, size=spec.n_removed, replace=False)) if spec.n_removed else set()
    kept = [sid for sid in v1_ids if sid not in removed]
    changes = spec.planted_changes if spec.planted_changes is not None else _default_changes()
    if len(changes) > len(kept):
        raise PreconditionViolation(f"{len(changes)} planted changes need as many surviving sections, have {len(kept)}")

    free = [sid for sid in kept if sid not in {c.section for c in changes}]
    targets: List[Tuple[PlantedChange, str]] = []
    for change in changes:
        if change.section is not None:
            if change.section not in kept:
                raise PreconditionViolation(f"planted change targets section {change.section}, which is not kept")
            targets.append((change, change.section))
        else:
            targets.append((change, free.pop(0)))

    evidence: List[Tuple[PlantedChange, str, str, str]] = []
    for change, sid in targets:
        words = vocab[v1_ids.index(sid)]
        template = TEMPLATES.get(change.criterion, DEFAULT_TEMPLATE)
        state = rng.bit_generator.state
        before = _sentence(template, words, rng, change.v1_excerpt)
        rng.bit_generator.state = state
        after = _sentence(template, words, rng, change.v2_excerpt)
        ev_v1 = NOT_IN_V1 if change.v1_excerpt == NOT_IN_V1 else before
        ev_v2 = NOT_IN_V2 if change.v2_excerpt == NOT_IN_V2 else after
        if ev_v1 != NOT_IN_V1:
            v1_lines[sid].insert(1, ev_v1)
        if ev_v2 != NOT_IN_V2:
            v2_lines[sid].insert(1, ev_v2)
        evidence.append((change, sid, ev_v1, ev_v2))

    renumber = _renumbering(kept, spec, rng)
    v2_entries = [(renumber[sid], headings[sid], v2_lines[sid]) for sid in kept]
    oracle_map: Dict[str, List[str]] = {renumber[sid]: [sid] for sid in kept}
    next_id = max(int(v.split(".")[0]) for v in renumber.values()) + 1
    for k in range(spec.n_added):
        words = vocab[spec.n_sections + k]
        sid = str(next_id + k)
        v2_entries.append((sid, f"{words[0].capitalize()} {words[1]}", _body(words, spec.sentences_per_section, rng)))
        oracle_map[sid] = []
    v2_entries.sort(key=lambda e: int(e[0]))

    v1_text = _document([(sid, headings[sid], v1_lines[sid]) for sid in v1_ids])
    v2_text = _document(v2_entries)
    v1_sections = {s.section_id: s for s in sectionize(v1_text, version="v1")}
    v2_sections = sectionize(v2_text, version="v2")

    oracle_changes = [
        ChangeTuple(
            ccd=f"{change.criterion}: '{change.v1_excerpt}' became '{change.v2_excerpt}'",
            ev_v1=ev_v1, ev_v2=ev_v2, criterion_id=change.criterion,
            v2_section_id=renumber[sid], v1_section_ids=(sid,),
        )
        for change, sid, ev_v1, ev_v2 in evidence
    ]
    oracle_changes.sort(key=lambda t: (int(t.v2_section_id), t.criterion_id))

    mocks = _mock_fixtures(v1_sections, v2_sections, oracle_map, oracle_changes, rng)
    logger.info("fixture seed %d: %d v1 / %d v2 sections, %d planted changes",
                spec.seed, len(v1_sections), len(v2_sections), len(oracle_changes))
    return FixturePair(v1_text, v2_text, oracle_map, oracle_changes, mocks, v2_sections)


# === mock backends ===

def _ids_answer(ids) -> str:
    return json.dumps({"ids": sorted_ids(ids)})


def _persona_ids(persona: str, truth: Sequence[str], others: Sequence[str], rng: np.random.Generator) -> List[str]:
    if persona == ACCURATE:
        return list(truth)
    if persona == NOISY:
        return [i for i in truth if rng.random() < 0.5]
    extra = [str(x) for x in rng.choice(others, size=min(2, len(others)), replace=False)] if others else []
    return list(truth) + extra + [UNKNOWN_ID]


def _mock_fixtures(v1_sections: Mapping[str, Section], v2_sections: Sequence[Section],
                   oracle_map: Mapping[str, List[str]], oracle_changes: Sequence[ChangeTuple],
                   rng: np.random.Generator, criteria: Sequence[Criterion] = DEFAULT_CRITERIA) -> Dict[str, Dict[str, Any]]:
    fixtures: Dict[str, Dict[str, Any]] = {p: {"default": EMPTY_ANSWER} for p in PERSONAS}
    seeds: List[Optional[int]] = [None, *range(1, DEFAULT_N_SEEDS + 1)]
    accurate = fixtures[ACCURATE]
    for v2sec in v2_sections:
        sid = v2sec.section_id
        truth = oracle_map.get(sid, [])
        others = [i for i in v1_sections if i not in truth]
        system, user = retrieval_prompt(v2sec)
        for persona in PERSONAS:
            for seed in seeds:
                ids = _persona_ids(persona, truth, others, rng)
                fixtures[persona][prompt_key(system, user, seed)] = _ids_answer(ids)

        # summary echoes the section verbatim
        system, user = summary_prompt(v2sec)
        accurate[prompt_key(system, user, None)] = v2sec.text

        mine = [t for t in oracle_changes if t.v2_section_id == sid]
        system, user = monolithic_prompt(v2sec)
        accurate[prompt_key(system, user, None)] = json.dumps({
            "summary": v2sec.text, "ids": sorted_ids(truth),
            "changes": [{"ccd": t.ccd, "ev_v1": t.ev_v1, "ev_v2": t.ev_v2} for t in mine],
        })

        v1texts = [(i, v1_sections[i].text) for i in sorted_ids(truth)]
        for criterion in criteria:
            answer = json.dumps({"changes": [
                {"ccd": t.ccd, "ev_v1": t.ev_v1, "ev_v2": t.ev_v2} for t in mine if t.criterion_id == criterion.id
            ]})
            for summary in (None, v2sec.text):
                system, user = extraction_prompt(v2sec, v1texts, criterion, summary)
                accurate[prompt_key(system, user, None)] = answer
    return fixtures


def write_fixture(out_dir, spec: FixtureSpec) -> Dict[str, Path]:
    """Writes the pair, oracles, mock fixtures and a ready-to-run pipeline config."""
    out_dir = Path(out_dir)
    pair = generate_pair(spec)
    paths = {
        "v1": write_text_file(out_dir / "v1.txt", pair.v1_text),
        "v2": write_text_file(out_dir / "v2.txt", pair.v2_text),
        "oracle": write_json_file(out_dir / "oracle_retrieval.json", pair.oracle_map),
        "oracle_changes": write_json_file(out_dir / "oracle_changes.json", [t.to_dict() for t in pair.oracle_changes]),
    }
    for persona, fixture in pair.mock_fixtures.items():
        paths[persona] = write_json_file(out_dir / "mocks" / f"{persona}.json", fixture)
    paths["config"] = write_json_file(out_dir / "config.json", {
        "store": "store",
        "backends": [{"id": p, "kind": "mock", "fixture_path": f"mocks/{p}.json"} for p in PERSONAS],
        "retrieval": {"variant": "single", "backends": [ACCURATE]},
        "summary_backend": ACCURATE,
        "extract_backend": ACCURATE,
        "report_dir": "reports",
    })
    logger.info("fixture written to %s", out_dir)
    return paths
