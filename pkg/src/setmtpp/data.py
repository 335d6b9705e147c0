"""Item vocabularies, set-valued events, sequences and JSONL ingestion."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent sequence data."""


@dataclass(frozen=True)
class Vocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) == 0:
            raise DataError("vocabulary must contain at least one item")
        if len(set(self.labels)) != len(self.labels):
            raise DataError("vocabulary labels must be unique")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def K(self) -> int:
        return len(self.labels)

    def id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise DataError(f"unknown item label {label!r}") from None

    def itemset(self, labels: Iterable[str]) -> "ItemSet":
        return ItemSet.from_ids((self.id(lab) for lab in labels), self.K)

    def to_json(self) -> str:
        return json.dumps(list(self.labels))

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        labels = json.loads(text)
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise DataError("vocabulary file must be a JSON array of strings")
        return cls(tuple(labels))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, order=False)
class ItemSet:
    """Subset of ``{0..K-1}`` stored as an integer bitmask.

    Python integers are unbounded, so the capacity requirement (at least 128
    items) is met for any vocabulary size.
    """

    bits: int
    K: int

    def __post_init__(self):
        if self.K <= 0:
            raise DataError("K must be positive")
        if self.bits < 0 or self.bits >> self.K:
            raise DataError(f"item id out of range for K={self.K}")

    @classmethod
    def from_ids(cls, ids: Iterable[int], K: int) -> "ItemSet":
        bits = 0
        for k in ids:
            k = int(k)
            if not 0 <= k < K:
                raise DataError(f"item id {k} out of range for K={K}")
            bits |= 1 << k
        return cls(bits, K)

    @classmethod
    def empty(cls, K: int) -> "ItemSet":
        return cls(0, K)

    @classmethod
    def from_mask(cls, mask) -> "ItemSet":
        mask = np.asarray(mask, dtype=bool)
        return cls.from_ids(np.flatnonzero(mask), mask.shape[-1])

    def ids(self) -> list[int]:
        return [k for k in range(self.K) if self.bits >> k & 1]

    def mask(self) -> np.ndarray:
        m = np.zeros(self.K, dtype=bool)
        m[self.ids()] = True
        return m

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __bool__(self) -> bool:
        return self.bits != 0

    def __contains__(self, k: int) -> bool:
        return 0 <= k < self.K and bool(self.bits >> k & 1)

    def __iter__(self):
        return iter(self.ids())

    def _check(self, other: "ItemSet"):
        if self.K != other.K:
            raise DataError("item sets over different vocabularies")

    def __or__(self, other: "ItemSet") -> "ItemSet":
        self._check(other)
        return ItemSet(self.bits | other.bits, self.K)

    def __and__(self, other: "ItemSet") -> "ItemSet":
        self._check(other)
        return ItemSet(self.bits & other.bits, self.K)

    def __sub__(self, other: "ItemSet") -> "ItemSet":
        self._check(other)
        return ItemSet(self.bits & ~other.bits, self.K)

    def isdisjoint(self, other: "ItemSet") -> bool:
        return not (self & other)

    def issubset(self, other: "ItemSet") -> bool:
        return (self - other).bits == 0

    def __repr__(self) -> str:
        return f"ItemSet({self.ids()}, K={self.K})"


@dataclass(frozen=True)
class Event:
    t: float
    x: ItemSet

    def __post_init__(self):
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise DataError(f"event time must be finite and nonnegative, got {self.t}")


@dataclass(frozen=True)
class Sequence:
    events: tuple[Event, ...]
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not math.isfinite(self.t_end):
            raise DataError("horizon must be finite")
        prev = -math.inf
        for ev in self.events:
            if ev.t <= prev:
                raise DataError("event times must be strictly increasing")
            prev = ev.t
        if self.events and self.events[-1].t > self.t_end:
            raise DataError("event beyond horizon")
        if self.t_end < 0:
            raise DataError("horizon must be nonnegative")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([ev.t for ev in self.events], dtype=float)

    def masks(self, K: int | None = None) -> np.ndarray:
        if not self.events:
            return np.zeros((0, K or 0), dtype=bool)
        return np.stack([ev.x.mask() for ev in self.events])

    def prefix(self, n: int) -> "Sequence":
        """First ``n`` events, with the horizon set to the n-th event time."""
        evs = self.events[:n]
        return Sequence(evs, evs[-1].t if evs else 0.0)

    def window(self, start: float, stop: float) -> list[Event]:
        """Events with ``start < t <= stop``."""
        return [ev for ev in self.events if start < ev.t <= stop]


@dataclass(frozen=True)
class Dataset:
    vocab: Vocabulary
    sequences: tuple[Sequence, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        for s in self.sequences:
            for ev in s.events:
                if ev.x.K != self.vocab.K:
                    raise DataError("event item set does not match vocabulary size")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def n_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    def inter_event_gaps(self) -> np.ndarray:
        gaps = [np.diff(np.concatenate([[0.0], s.times])) for s in self.sequences if len(s)]
        return np.concatenate(gaps) if gaps else np.zeros(0)

    def item_frequencies(self) -> np.ndarray:
        """Fraction of events containing each item."""
        n = self.n_events()
        if n == 0:
            return np.full(self.vocab.K, 0.5)
        counts = sum(s.masks(self.vocab.K).sum(axis=0) for s in self.sequences if len(s))
        return np.asarray(counts, dtype=float) / n

    def subset(self, idx: Iterable[int]) -> "Dataset":
        return Dataset(self.vocab, tuple(self.sequences[i] for i in idx))


def merge_simultaneous(events: Seq[Event]) -> list[Event]:
    """Collapse events sharing a timestamp into one event carrying the union."""
    out: list[Event] = []
    for ev in events:
        if out and out[-1].t == ev.t:
            out[-1] = Event(ev.t, out[-1].x | ev.x)
        elif out and ev.t < out[-1].t:
            raise DataError("events must be sorted by time")
        else:
            out.append(ev)
    return out


def _parse_line(obj, vocab: Vocabulary | None, labels: dict[str, int], lineno: int):
    if not isinstance(obj, dict) or "T" not in obj or "events" not in obj:
        raise DataError(f"line {lineno}: expected object with keys 'T' and 'events'")
    extra = set(obj) - {"T", "events"}
    if extra:
        raise DataError(f"line {lineno}: unexpected keys {sorted(extra)}")
    raw = []
    for ev in obj["events"]:
        if not isinstance(ev, dict) or set(ev) != {"t", "items"}:
            raise DataError(f"line {lineno}: events need exactly keys 't' and 'items'")
        items = ev["items"]
        if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
            raise DataError(f"line {lineno}: 'items' must be a list of strings")
        for lab in items:
            if vocab is not None:
                if lab not in vocab._index:
                    raise DataError(f"line {lineno}: unknown label {lab!r}")
            elif lab not in labels:
                labels[lab] = len(labels)
        raw.append((float(ev["t"]), items))
    return float(obj["T"]), raw


def load_sequences(path, vocab: Vocabulary | None = None, *, min_events: int | None = None,
                   max_events: int | None = None) -> Dataset:
    """Read a JSONL sequence file.

    Events sharing a timestamp are merged into their union. Without ``vocab``
    the vocabulary is built from labels in order of first appearance. The
    optional length filter is applied after merging.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    labels: dict[str, int] = {}
    parsed = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            parsed.append((lineno, *_parse_line(obj, vocab, labels, lineno)))
    if vocab is None:
        if not labels:
            raise DataError("cannot infer a vocabulary from a file without items")
        vocab = Vocabulary(tuple(labels))
    seqs = []
    for lineno, T, raw in parsed:
        try:
            evs = [Event(t, vocab.itemset(items)) for t, items in raw]
            evs.sort(key=lambda e: e.t)
            seq = Sequence(tuple(merge_simultaneous(evs)), T)
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if min_events is not None and len(seq) < min_events:
            continue
        if max_events is not None and len(seq) > max_events:
            continue
        seqs.append(seq)
    return Dataset(vocab, tuple(seqs))


def sequence_to_json(seq: Sequence, vocab: Vocabulary) -> str:
    return json.dumps({
        "T": seq.t_end,
        "events": [{"t": ev.t, "items": [vocab.labels[k] for k in ev.x.ids()]} for ev in seq.events],
    })


def save_sequences(data: Dataset, path, vocab_path=None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for seq in data.sequences:
            fh.write(sequence_to_json(seq, data.vocab) + "\n")
    if vocab_path is not None:
        data.vocab.save(vocab_path)


def split_dataset(data: Dataset, fractions=(0.75, 0.10, 0.15), seed: int = 0):
    """Random partition by sequence into train/validation/test parts."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three positive numbers summing to 1")
    n = len(data)
    if n < 3:
        raise ValueError("need at least 3 sequences to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    parts = np.split(perm, [n_train, n_train + n_val])
    return tuple(data.subset(sorted(p.tolist())) for p in parts)
