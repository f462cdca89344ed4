"""Versioned prompt templates stored as text files under ``deltaforge/prompts``."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Tuple

from deltaforge.utils import sha256_hex

SUMMARIZE = "summarize.v1"
RETRIEVE = "retrieve.v1"
EXTRACT = "extract.v1"
MONOLITHIC = "monolithic.v1"
PROPOSE_DELTA = "propose_delta.v1"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    user: str

    @property
    def sha(self) -> str:
        return sha256_hex(f"{self.name}\x00{self.system}\x00{self.user}")[:16]

    def render(self, **fields) -> Tuple[str, str]:
        return self.system.format(**fields), self.user.format(**fields)


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    raw = resources.files("deltaforge").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    head, _, user = raw.partition("[user]\n")
    system = head.replace("[system]\n", "", 1)
    return PromptTemplate(name, system.strip(), user.rstrip("\n"))


def summary_prompt(section) -> Tuple[str, str]:
    return load_template(SUMMARIZE).render(
        section_id=section.section_id, heading=section.heading, text=section.text
    )


def retrieval_prompt(section) -> Tuple[str, str]:
    return load_template(RETRIEVE).render(
        section_id=section.section_id, heading=section.heading, text=section.text
    )


def monolithic_prompt(section) -> Tuple[str, str]:
    return load_template(MONOLITHIC).render(
        section_id=section.section_id, heading=section.heading, text=section.text
    )


def extraction_prompt(section, v1texts, criterion, summary=None) -> Tuple[str, str]:
    if v1texts:
        v1_block = "\n\n".join(f"[v1 §{sid}]\n{text}" for sid, text in v1texts)
    else:
        v1_block = "(no related v1 section: treat the v2 content as new)"
    summary_block = f"Summary of the v2 section:\n{summary}\n\n" if summary else ""
    return load_template(EXTRACT).render(
        criterion_id=criterion.id,
        criterion_description=criterion.description,
        summary_block=summary_block,
        section_id=section.section_id,
        heading=section.heading,
        text=section.text,
        v1_block=v1_block,
    )


def delta_prompt(change, model_text: str) -> Tuple[str, str]:
    return load_template(PROPOSE_DELTA).render(
        tuple_id=change.tuple_id,
        criterion_id=change.criterion_id,
        ccd=change.ccd,
        ev_v1=change.ev_v1,
        ev_v2=change.ev_v2,
        model_text=model_text,
    )
