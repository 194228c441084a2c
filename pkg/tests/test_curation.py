import json

import numpy as np
import pytest

from ganbalance.curation import (ACCEPTED, PENDING, REJECTED,
                                 AlreadyDecidedError, CurationStore,
                                 DuplicateSampleError, GeneratedSample,
                                 UnknownSampleError)
from ganbalance.data import SYNTHETIC_ACCEPTED, ClassLabel


def mk_samples(n, label="Pneumothorax", start=0):
    return [
        GeneratedSample(
            id=f"{label}-gen0-{start + i:05d}",
            label=label,
            png_path=f"/synth/{label}/{start + i:05d}.png",
            generator_id="gen0",
            created_at=1000.0 + start + i,
            checksum=f"sha{start + i}",
        )
        for i in range(n)
    ]


@pytest.fixture
def store(tmp_path):
    return CurationStore(tmp_path / "store")


class TestEnqueue:
    def test_enqueue_pending(self, store):
        assert store.enqueue(mk_samples(100)) == 100
        assert store.counts()[PENDING] == 100

    def test_duplicate_batch_rejected_atomically(self, store):
        batch = mk_samples(100)
        store.enqueue(batch)
        with pytest.raises(DuplicateSampleError):
            store.enqueue(batch)
        assert store.counts()[PENDING] == 100

    def test_duplicate_within_batch_rejected(self, store):
        batch = mk_samples(2) + mk_samples(2)
        with pytest.raises(DuplicateSampleError):
            store.enqueue(batch)
        assert store.counts()[PENDING] == 0

    def test_empty_enqueue_is_noop(self, store):
        assert store.enqueue([]) == 0
        assert store.counts()[PENDING] == 0


class TestListPending:
    def test_created_order_with_limit(self, store):
        store.enqueue(mk_samples(100))
        page = store.list_pending(limit=10)
        assert len(page) == 10
        assert [s.id for s in page] == [s.id for s in mk_samples(10)]

    def test_pagination_after(self, store):
        store.enqueue(mk_samples(30))
        first = store.list_pending(limit=10)
        second = store.list_pending(limit=10, after=first[-1].id)
        assert second[0].id == mk_samples(11, start=10)[0].id
        assert {s.id for s in first}.isdisjoint({s.id for s in second})

    def test_class_filter(self, store):
        store.enqueue(mk_samples(5, "Pneumothorax"))
        store.enqueue(mk_samples(5, "Normal"))
        only = store.list_pending(label="Pneumothorax")
        assert len(only) == 5
        assert all(s.label == "Pneumothorax" for s in only)

    def test_empty_store(self, store):
        assert store.list_pending() == []


class TestVerdicts:
    def test_reject_excludes_from_export(self, store):
        store.enqueue(mk_samples(3))
        sid = store.list_pending()[0].id
        store.post_verdict(sid, "reject", "radiologist-1")
        assert store.get(sid).status == REJECTED
        exported = store.export_accepted(ClassLabel.Pneumothorax)
        assert all(r.path != store.get(sid).png_path for r in exported)

    def test_double_verdict_conflicts(self, store):
        store.enqueue(mk_samples(2))
        sid = store.list_pending()[0].id
        store.post_verdict(sid, "accept", "r1")
        with pytest.raises(AlreadyDecidedError):
            store.post_verdict(sid, "accept", "r2")
        assert store.get(sid).status == ACCEPTED

    def test_unknown_id_not_found_log_unchanged(self, store):
        store.enqueue(mk_samples(1))
        log_before = store.log_path.read_text()
        with pytest.raises(UnknownSampleError):
            store.post_verdict("nope", "accept", "r1")
        assert store.log_path.read_text() == log_before

    def test_invalid_decision_rejected(self, store):
        store.enqueue(mk_samples(1))
        sid = store.list_pending()[0].id
        with pytest.raises(Exception, match="accept or reject"):
            store.post_verdict(sid, "maybe", "r1")

    def test_status_counts_conserved(self, store, rng):
        store.enqueue(mk_samples(50))
        ids = [s.id for s in store.list_pending()]
        for sid in ids[:20]:
            store.post_verdict(sid, "accept", "r1")
        for sid in ids[20:35]:
            store.post_verdict(sid, "reject", "r1")
        c = store.counts()
        assert c[PENDING] + c[ACCEPTED] + c[REJECTED] == 50
        assert (c[ACCEPTED], c[REJECTED], c[PENDING]) == (20, 15, 15)


class TestExport:
    def test_exports_exactly_accepted(self, store):
        store.enqueue(mk_samples(100))
        ids = [s.id for s in store.list_pending()]
        for sid in ids[:10]:
            store.post_verdict(sid, "accept", "r1")
        for sid in ids[10:15]:
            store.post_verdict(sid, "reject", "r1")
        exported = store.export_accepted(ClassLabel.Pneumothorax)
        assert len(exported) == 10
        assert all(r.source == SYNTHETIC_ACCEPTED for r in exported)
        assert all(r.label == ClassLabel.Pneumothorax for r in exported)

    def test_export_idempotent(self, store):
        store.enqueue(mk_samples(5))
        for s in store.list_pending():
            store.post_verdict(s.id, "accept", "r1")
        a = store.export_accepted(ClassLabel.Pneumothorax)
        b = store.export_accepted(ClassLabel.Pneumothorax)
        assert a == b

    def test_quota_deficit_arithmetic(self, store):
        # 10 accepted against a 28,183-image quota leaves 28,173 missing
        store.enqueue(mk_samples(15))
        for s in store.list_pending(limit=10):
            store.post_verdict(s.id, "accept", "r1")
        accepted = store.export_accepted(ClassLabel.Pneumothorax)
        quota = 28183
        assert quota - len(accepted) == 28173


class TestReplay:
    def test_replay_reconstructs_state(self, tmp_path):
        store = CurationStore(tmp_path / "s")
        store.enqueue(mk_samples(20, "Normal"))
        store.enqueue(mk_samples(10, "PulmonaryEdema"))
        ids = [s.id for s in store.list_pending()]
        for sid in ids[::3]:
            store.post_verdict(sid, "accept", "rev-a")
        for sid in ids[1::3]:
            store.post_verdict(sid, "reject", "rev-b")
        fresh = CurationStore(tmp_path / "s")
        assert fresh.stats() == store.stats()
        assert fresh._order == store._order
        for sid, sample in store.samples.items():
            assert fresh.samples[sid] == sample
        assert fresh.verdicts == store.verdicts

    def test_log_is_append_only_json_lines(self, tmp_path):
        store = CurationStore(tmp_path / "s")
        store.enqueue(mk_samples(2))
        store.post_verdict(mk_samples(1)[0].id, "accept", "r")
        lines = store.log_path.read_text().strip().splitlines()
        assert len(lines) == 3
        events = [json.loads(l)["event"] for l in lines]
        assert events == ["enqueue", "enqueue", "verdict"]

    def test_auto_accept_all(self, tmp_path):
        store = CurationStore(tmp_path / "s")
        store.enqueue(mk_samples(7))
        assert store.auto_accept_all() == 7
        assert store.counts()[ACCEPTED] == 7
        assert len(store.export_accepted(ClassLabel.Pneumothorax)) == 7
