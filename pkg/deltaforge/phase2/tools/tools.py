from langchain_core.tools import BaseTool, tool
from typing import List
import json

from deltaforge.errors import StoreError
from deltaforge.phase1.section_store import SectionStore


def build_v1_tools(store: SectionStore, version: str = "v1") -> List[BaseTool]:
    """
    The two read-only tools the retrieval model may call over the stored v1
    sections. Bound to one store; safe to share between threads.
    """

    # === List All v1 Sections Tool ===
    @tool
    def list_all_v1_sections() -> str:
        """List every section of the previous document version (v1) as a JSON array of {"id", "heading"}."""
        try:
            return json.dumps([{"id": sid, "heading": heading} for sid, heading in store.list_sections(version)])
        except StoreError as e:
            return json.dumps({"error": str(e)})

    # === Fetch One v1 Section Tool ===
    @tool
    def fetch_one_v1_section(section_id: str) -> str:
        """Fetch the heading and full text of one v1 section by its id, e.g. "3.1.2"."""
        try:
            section = store.fetch_section(version, section_id)
            return json.dumps({"id": section.section_id, "heading": section.heading, "text": section.text})
        except StoreError as e:
            return json.dumps({"error": str(e)})

    return [list_all_v1_sections, fetch_one_v1_section]
