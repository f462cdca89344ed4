import pytest

from deltaforge.errors import DuplicateSectionId, DuplicateVersion, SchemaViolation, UnknownSection, UnknownVersion
from deltaforge.phase1.section_store import ARTIFACTS_FILE, ArtifactRecord, SectionStore
from deltaforge.phase1.sectionizer import Section, sectionize
from tests.conftest import V1_TEXT


def test_put_and_fetch_sections(store):
    count = store.put_sections("v1", sectionize(V1_TEXT, version="v1"))
    assert count == 6
    assert store.versions == {"v1"}
    assert store.fetch_section("v1", "2.1").heading == "Transmit Power"
    assert store.list_sections("v1")[1] == ("1", "Scope")
    assert store.has_section("v1", "3")
    assert not store.has_section("v1", "9")


def test_sections_survive_reopen(store):
    store.put_sections("v1", sectionize(V1_TEXT, version="v1"))
    reopened = SectionStore.open(store.path)
    assert reopened.sections("v1") == store.sections("v1")


def test_duplicate_version_needs_overwrite(store):
    sections = sectionize(V1_TEXT, version="v1")
    store.put_sections("v1", sections)
    with pytest.raises(DuplicateVersion):
        store.put_sections("v1", sections)
    store.put_sections("v1", sections[:2], overwrite=True)
    assert [s.section_id for s in SectionStore.open(store.path).sections("v1")] == ["0", "1"]


def test_duplicate_section_id_rejected(store):
    twice = [Section("v1", "1", "A", "x", 0), Section("v1", "1", "B", "y", 1)]
    with pytest.raises(DuplicateSectionId):
        store.put_sections("v1", twice)


def test_unknown_version_and_section(store):
    with pytest.raises(UnknownVersion):
        store.sections("v9")
    store.put_sections("v1", sectionize(V1_TEXT, version="v1"))
    with pytest.raises(UnknownSection):
        store.fetch_section("v1", "7.7")


def test_artifact_revisions_increase_per_kind_and_section(store):
    record = ArtifactRecord("retrieval", {"proposer": "m", "candidate_ids": ["1"]}, section_id="2.1")
    assert store.put_artifact(record) == 1
    assert store.put_artifact(record) == 2
    assert store.put_artifact(ArtifactRecord("retrieval", {"proposer": "m", "candidate_ids": []}, "3")) == 1
    assert [r.revision for r in store.get_artifacts("retrieval", "2.1")] == [1, 2]
    assert len(store.get_artifacts("retrieval")) == 3
    assert store.latest_artifact("retrieval", "2.1").revision == 2


def test_latest_artifact_filters_by_run(store):
    for run in (1, 2):
        store.put_artifact(ArtifactRecord("consensus", {
            "strategy": "union", "member_ids": [str(run)], "votes": {}, "proposers": ["m"], "run": run,
        }, "1"))
    assert store.latest_artifact("consensus", "1", run=1).payload["member_ids"] == ["1"]
    assert store.latest_artifact("consensus", "1", run=3) is None


def test_schema_violation_writes_nothing(store):
    with pytest.raises(SchemaViolation):
        store.put_artifact(ArtifactRecord("retrieval", {"proposer": "m"}, "1"))
    with pytest.raises(SchemaViolation):
        store.put_artifact(ArtifactRecord("no_such_kind", {}, "1"))
    assert not (store.path / ARTIFACTS_FILE).exists()


def test_torn_trailing_record_is_skipped(store):
    store.put_artifact(ArtifactRecord("retrieval", {"proposer": "m", "candidate_ids": ["1"]}, "1"))
    with open(store.path / ARTIFACTS_FILE, "a", encoding="utf-8") as f:
        f.write('{"kind": "retrieval", "paylo')
    reopened = SectionStore.open(store.path)
    assert len(reopened.get_artifacts("retrieval", "1")) == 1


def test_artifact_puts_do_not_reread_unchanged_tables(store, monkeypatch):
    reads = []
    original = SectionStore._read_lines

    def counting(self, name):
        reads.append(name)
        return original(self, name)

    monkeypatch.setattr(SectionStore, "_read_lines", counting)
    record = ArtifactRecord("retrieval", {"proposer": "m", "candidate_ids": ["1"]}, section_id="1")
    for _ in range(5):
        store.put_artifact(record)
    assert reads == []
    assert store.latest_artifact("retrieval", "1").revision == 5


def test_put_after_another_handle_wrote_sees_its_records(store):
    record = ArtifactRecord("retrieval", {"proposer": "m", "candidate_ids": ["1"]}, section_id="1")
    store.put_artifact(record)
    other = SectionStore.open(store.path)
    assert other.put_artifact(record) == 2
    assert store.put_artifact(record) == 3
    assert [r.revision for r in SectionStore.open(store.path).get_artifacts("retrieval", "1")] == [1, 2, 3]
