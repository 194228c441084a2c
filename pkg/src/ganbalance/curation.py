"""Human-in-the-loop curation store for generated images.

Synthetic images are queued as pending samples; reviewers accept or reject
each one exactly once; only accepted samples are exported into training
manifests. State lives in an append-only JSON-lines event log -- replaying
the log from empty reconstructs the store bit for bit, which makes the
human decisions auditable and the store crash-safe.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .data import SYNTHETIC_ACCEPTED, ClassLabel, ImageRecord

PENDING = "pending"
ACCEPTED = "accepted"
REJECTED = "rejected"


class CurationError(Exception):
    pass


class DuplicateSampleError(CurationError):
    pass


class UnknownSampleError(CurationError):
    pass


class AlreadyDecidedError(CurationError):
    pass


@dataclass
class GeneratedSample:
    id: str
    label: str                  # ClassLabel name
    png_path: str
    generator_id: str
    created_at: float
    checksum: str = ""
    status: str = PENDING


@dataclass
class Verdict:
    sample_id: str
    decision: str               # "accept" | "reject"
    reviewer: str
    decided_at: float


class CurationStore:
    """Append-only event log plus an in-memory index.

    Events: {"event": "enqueue", "sample": {...}} and
            {"event": "verdict", "verdict": {...}}.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "events.jsonl"
        self._lock = threading.Lock()
        self.samples: dict[str, GeneratedSample] = {}
        self.verdicts: dict[str, Verdict] = {}
        self._order: list[str] = []  # enqueue order for stable pagination
        if self.log_path.exists():
            self._replay()

    # -- event log -----------------------------------------------------------

    def _replay(self):
        with open(self.log_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["event"] == "enqueue":
                    s = GeneratedSample(**event["sample"])
                    self.samples[s.id] = s
                    self._order.append(s.id)
                elif event["event"] == "verdict":
                    v = Verdict(**event["verdict"])
                    self._apply_verdict(v)
                else:
                    raise CurationError(f"unknown event type {event['event']!r}")

    def _append(self, events: Iterable[dict]):
        with open(self.log_path, "a", encoding="utf-8") as f:
            for e in events:
                f.write(json.dumps(e, sort_keys=True) + "\n")
            f.flush()

    def _apply_verdict(self, v: Verdict):
        s = self.samples[v.sample_id]
        s.status = ACCEPTED if v.decision == "accept" else REJECTED
        self.verdicts[v.sample_id] = v

    # -- operations ----------------------------------------------------------

    def enqueue(self, samples: list[GeneratedSample]) -> int:
        """Queue samples as pending; duplicate ids reject the whole batch."""
        with self._lock:
            seen = set()
            for s in samples:
                if s.id in self.samples or s.id in seen:
                    raise DuplicateSampleError(f"sample id {s.id!r} already queued")
                seen.add(s.id)
            self._append({"event": "enqueue", "sample": asdict(s)} for s in samples)
            for s in samples:
                self.samples[s.id] = s
                self._order.append(s.id)
            return len(samples)

    def list_pending(self, label: Optional[str] = None, limit: Optional[int] = None,
                     after: Optional[str] = None) -> list[GeneratedSample]:
        """Pending samples in enqueue order; `after` pages past a sample id."""
        with self._lock:
            start = 0
            if after is not None:
                if after not in self.samples:
                    raise UnknownSampleError(f"unknown sample id {after!r}")
                start = self._order.index(after) + 1
            out = []
            for sid in self._order[start:]:
                s = self.samples[sid]
                if s.status != PENDING:
                    continue
                if label is not None and s.label != label:
                    continue
                out.append(s)
                if limit is not None and len(out) >= limit:
                    break
            return out

    def get(self, sample_id: str) -> GeneratedSample:
        try:
            return self.samples[sample_id]
        except KeyError:
            raise UnknownSampleError(f"unknown sample id {sample_id!r}") from None

    def post_verdict(self, sample_id: str, decision: str, reviewer: str) -> GeneratedSample:
        if decision not in ("accept", "reject"):
            raise CurationError(f"decision must be accept or reject, got {decision!r}")
        with self._lock:
            s = self.samples.get(sample_id)
            if s is None:
                raise UnknownSampleError(f"unknown sample id {sample_id!r}")
            if s.status != PENDING:
                raise AlreadyDecidedError(f"sample {sample_id!r} already {s.status}")
            v = Verdict(sample_id, decision, reviewer, time.time())
            self._append([{"event": "verdict", "verdict": asdict(v)}])
            self._apply_verdict(v)
            return s

    def auto_accept_all(self, reviewer: str = "auto-accept") -> int:
        """Accept every pending sample (machine-runnable pipeline mode)."""
        count = 0
        for s in list(self.samples.values()):
            if s.status == PENDING:
                self.post_verdict(s.id, "accept", reviewer)
                count += 1
        return count

    def export_accepted(self, label: ClassLabel) -> list[ImageRecord]:
        """Accepted synthetics of one class as manifest records."""
        with self._lock:
            out = []
            for sid in self._order:
                s = self.samples[sid]
                if s.status == ACCEPTED and s.label == label.name:
                    out.append(ImageRecord(s.png_path, label, SYNTHETIC_ACCEPTED,
                                           s.checksum))
            return out

    def stats(self) -> dict[str, dict[str, int]]:
        """Per-class pending/accepted/rejected counts."""
        with self._lock:
            out = {lbl.name: {PENDING: 0, ACCEPTED: 0, REJECTED: 0}
                   for lbl in ClassLabel}
            for s in self.samples.values():
                if s.label not in out:
                    out[s.label] = {PENDING: 0, ACCEPTED: 0, REJECTED: 0}
                out[s.label][s.status] += 1
            return out

    def counts(self) -> dict[str, int]:
        c = {PENDING: 0, ACCEPTED: 0, REJECTED: 0}
        for s in self.samples.values():
            c[s.status] += 1
        return c
