"""Bounded set of reference keyframes with LFU-with-decay or max-distance upkeep."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import EmptyStore
from .geometry import as_landmarks

DEFAULT_MAX_CARDINALITY = 10


class Policy(str, enum.Enum):
    LFU_DECAY = "lfu"
    MAX_DISTANCE = "maxdist"

    @classmethod
    def parse(cls, value) -> "Policy":
        if isinstance(value, Policy):
            return value
        aliases = {"lfu": cls.LFU_DECAY, "lfudecay": cls.LFU_DECAY, "lfu_decay": cls.LFU_DECAY,
                   "maxdist": cls.MAX_DISTANCE, "maxdistance": cls.MAX_DISTANCE,
                   "max_distance": cls.MAX_DISTANCE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown keyframe policy {value!r}") from None


@dataclass
class KeyframeEntry:
    image: Any
    landmarks: np.ndarray
    use_count: float = 0.0
    arrival_index: int = 0
    frame_index: int | None = None


@dataclass(frozen=True)
class InsertReport:
    added: bool
    evicted_index: int | None = None


@dataclass(frozen=True)
class TraceEvent:
    kind: str                      # "insert" | "select"
    frame_index: int | None
    arrival_index: int | None      # inserted keyframe / selected winner
    added: bool | None = None
    evicted_index: int | None = None
    distances: tuple = ()
    members: tuple = ()            # arrival indices after the event
    use_counts: tuple = ()         # aligned with members
    landmarks: np.ndarray | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "frame": self.frame_index, "arrival": self.arrival_index}
        if self.kind == "insert":
            d["added"] = self.added
            d["evicted"] = self.evicted_index
        d["distances"] = list(self.distances)
        d["members"] = list(self.members)
        d["use_counts"] = list(self.use_counts)
        return d


class PolicyTrace(list):
    """Ordered log of store events."""

    def to_jsonl(self) -> str:
        return "".join(json.dumps(ev.to_dict(), separators=(",", ":")) + "\n" for ev in self)

    def replay(self, max_cardinality: int, policy) -> "KeyframeStore":
        """Re-apply the logged operations to a fresh store."""
        store = KeyframeStore(max_cardinality, policy)
        for ev in self:
            if ev.landmarks is None:
                raise ValueError("trace event carries no landmarks; cannot replay")
            if ev.kind == "insert":
                store.insert_keyframe(None, ev.landmarks, frame_index=ev.frame_index)
            else:
                store.select_reference(ev.landmarks, frame_index=ev.frame_index)
        return store


class KeyframeStore:
    """Keyframe set with a fixed maximum cardinality.

    Under ``Policy.LFU_DECAY`` every arrival first halves all use counters and
    then, at capacity, evicts the least-used entry (earliest arrival on ties).
    Under ``Policy.MAX_DISTANCE`` the set keeps whichever size-``max_cardinality``
    subset of current entries plus newcomer has the largest total pairwise
    landmark distance.
    """

    def __init__(self, max_cardinality: int = DEFAULT_MAX_CARDINALITY, policy=Policy.LFU_DECAY):
        if max_cardinality < 1:
            raise ValueError("max_cardinality must be positive")
        self.max_cardinality = int(max_cardinality)
        self.policy = Policy.parse(policy)
        self.entries: list[KeyframeEntry] = []
        self._next_arrival = 0
        self._trace = PolicyTrace()
        self._stack: np.ndarray | None = None   # cached (n, N*2) landmark matrix

    def __len__(self):
        return len(self.entries)

    def _landmark_matrix(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.stack([e.landmarks.ravel() for e in self.entries])
        return self._stack

    def _snapshot(self):
        return (tuple(e.arrival_index for e in self.entries),
                tuple(e.use_count for e in self.entries))

    def insert_keyframe(self, image, lms, frame_index: int | None = None) -> InsertReport:
        lms = as_landmarks(lms, n=None)
        new = KeyframeEntry(image, lms, 0.0, self._next_arrival, frame_index)
        self._next_arrival += 1
        dists = ()
        if self.entries:
            dists = tuple(np.sqrt(((self._landmark_matrix() - lms.ravel()) ** 2).sum(axis=1)).tolist())

        if self.policy is Policy.LFU_DECAY:
            for e in self.entries:
                e.use_count *= 0.5
            evicted = None
            if len(self.entries) >= self.max_cardinality:
                victim = min(range(len(self.entries)),
                             key=lambda i: (self.entries[i].use_count, self.entries[i].arrival_index))
                evicted = self.entries.pop(victim).arrival_index
            self.entries.append(new)
            report = InsertReport(True, evicted)
        else:
            report = self._insert_max_distance(new)

        self._stack = None
        members, counts = self._snapshot()
        self._trace.append(TraceEvent("insert", frame_index, new.arrival_index, report.added,
                                      report.evicted_index, dists, members, counts, lms))
        return report

    def _insert_max_distance(self, new: KeyframeEntry) -> InsertReport:
        if len(self.entries) < self.max_cardinality:
            self.entries.append(new)
            return InsertReport(True, None)
        cands = self.entries + [new]
        X = np.stack([c.landmarks.ravel() for c in cands])
        D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
        # dropping candidate j keeps total - rowsum[j]; all n+1 subsets are covered
        kept_total = D.sum() / 2.0 - D.sum(axis=1)
        best = max(range(len(cands)), key=lambda j: (kept_total[j], -cands[j].arrival_index))
        if best == len(cands) - 1:
            return InsertReport(False, None)
        evicted = self.entries.pop(best).arrival_index
        self.entries.append(new)
        return InsertReport(True, evicted)

    def distances(self, lms) -> np.ndarray:
        lms = as_landmarks(lms, n=None)
        if not self.entries:
            return np.empty(0)
        return np.sqrt(((self._landmark_matrix() - lms.ravel()) ** 2).sum(axis=1))

    def select_reference(self, degraded_lms, frame_index: int | None = None):
        """Most similar keyframe to ``degraded_lms``; returns ``(entry, position)``."""
        if not self.entries:
            raise EmptyStore("no keyframe available for reference selection")
        lms = as_landmarks(degraded_lms, n=None)
        d = self.distances(lms)
        # entries are kept in arrival order, so argmin's first hit is the earliest arrival
        idx = int(np.argmin(d))
        winner = self.entries[idx]
        if self.policy is Policy.LFU_DECAY:
            winner.use_count += 1.0
        members, counts = self._snapshot()
        self._trace.append(TraceEvent("select", frame_index, winner.arrival_index, None, None,
                                      tuple(d.tolist()), members, counts, lms))
        return winner, idx

    def export_trace(self) -> PolicyTrace:
        return PolicyTrace(self._trace)

    def state(self):
        """``(arrival_index, use_count)`` pairs in store order."""
        return [(e.arrival_index, e.use_count) for e in self.entries]

