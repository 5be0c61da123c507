"""Data model for marked event sequences: validation, splitting, statistics, JSON I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError


@dataclass(frozen=True)
class EventType:
    id: int
    text: str


@dataclass(frozen=True)
class Event:
    time: float
    type_id: int


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Ordered events over an observation window.

    Times and type ids are stored as read-only numpy arrays; ``events`` gives
    the per-event view. A missing window defaults to the span of the events.
    """

    id: str
    times: np.ndarray
    types: np.ndarray
    window_start: float | None = None
    window_end: float | None = None

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        types = np.array(self.types, dtype=np.int64).reshape(-1)
        if times.shape != types.shape:
            raise DataError(f"sequence {self.id!r}: {times.size} times but {types.size} types")
        times.setflags(write=False)
        types.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "id", str(self.id))
        start = self.window_start if self.window_start is not None else (times[0] if times.size else 0.0)
        end = self.window_end if self.window_end is not None else (times[-1] if times.size else 0.0)
        object.__setattr__(self, "window_start", float(start))
        object.__setattr__(self, "window_end", float(end))

    @classmethod
    def from_events(cls, id, events: Iterable[Event], window=None) -> "EventSequence":
        events = list(events)
        times = [e.time for e in events]
        types = [e.type_id for e in events]
        window = window or (None, None)
        return cls(id, times, types, window[0], window[1])

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(k)) for t, k in zip(self.times, self.types)]

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.types, other.types)
            and self.window_start == other.window_start
            and self.window_end == other.window_end
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    name: str
    time_unit: str
    types: tuple[EventType, ...]
    sequences: tuple[EventSequence, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "sequences", tuple(self.sequences))

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def type_texts(self) -> list[str]:
        return [t.text for t in sorted(self.types, key=lambda t: t.id)]

    def with_sequences(self, sequences: Iterable[EventSequence]) -> "Dataset":
        return replace(self, sequences=tuple(sequences))

    def __len__(self) -> int:
        return len(self.sequences)


@dataclass(frozen=True)
class DatasetStats:
    num_types: int
    num_events: int
    num_sequences: int
    avg_seq_length: float


def validate_sequence(seq: EventSequence, k_max: int) -> list[str]:
    """Return a list of human-readable violations; an empty list means valid."""
    problems = []
    times, types = seq.times, seq.types
    if len(seq) < 2:
        problems.append("length < 2")
    bad = np.flatnonzero(~np.isfinite(times))
    for i in bad:
        problems.append(f"non-finite time at index {i}")
    finite = np.isfinite(times)
    for i in range(1, len(seq)):
        if finite[i] and finite[i - 1] and times[i] < times[i - 1]:
            problems.append(f"non-monotone time at index {i}")
    for i in np.flatnonzero((types < 0) | (types >= k_max)):
        problems.append(f"type id {int(types[i])} out of range at index {i}")
    if len(seq) and np.all(finite):
        if seq.window_start > times[0] or times[-1] > seq.window_end:
            problems.append("events outside observation window")
    return problems


def validate_dataset(ds: Dataset) -> list[str]:
    problems = []
    ids = sorted(t.id for t in ds.types)
    if ids != list(range(len(ids))):
        problems.append("event type ids are not contiguous from 0")
    texts = [t.text for t in ds.types]
    if any(not t.strip() for t in texts):
        problems.append("empty event type text")
    if len(set(texts)) != len(texts):
        problems.append("duplicate event type text")
    for seq in ds.sequences:
        problems.extend(f"sequence {seq.id!r}: {p}" for p in validate_sequence(seq, ds.num_types))
    return problems


def normalize_times(seq: EventSequence) -> EventSequence:
    """Shift times and window so the first event sits at 0."""
    if len(seq) == 0:
        return seq
    t0 = seq.times[0]
    if t0 == 0.0:
        return seq
    return EventSequence(seq.id, seq.times - t0, seq.types, seq.window_start - t0, seq.window_end - t0)


def normalize_dataset(ds: Dataset) -> Dataset:
    return ds.with_sequences(normalize_times(s) for s in ds.sequences)


def split_dataset(
    ds: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then floor-sized train and validation parts; test takes the rest."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(ds.sequences)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple(ds.with_sequences(ds.sequences[i] for i in sorted(p)) for p in parts)


def dataset_stats(ds: Dataset) -> DatasetStats:
    if not ds.sequences:
        raise DataError("dataset has no sequences")
    num_events = sum(len(s) for s in ds.sequences)
    return DatasetStats(
        num_types=ds.num_types,
        num_events=num_events,
        num_sequences=len(ds.sequences),
        avg_seq_length=num_events / len(ds.sequences),
    )


# JSON schema I/O


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "name": ds.name,
        "time_unit": ds.time_unit,
        "event_types": [{"id": t.id, "text": t.text} for t in sorted(ds.types, key=lambda t: t.id)],
        "sequences": [
            {
                "id": s.id,
                "window": [s.window_start, s.window_end],
                "events": [{"time": float(t), "type": int(k)} for t, k in zip(s.times, s.types)],
            }
            for s in ds.sequences
        ],
    }


def dataset_from_dict(obj: dict, validate: bool = True) -> Dataset:
    try:
        types = tuple(EventType(int(t["id"]), str(t["text"])) for t in obj["event_types"])
        sequences = []
        for s in obj["sequences"]:
            events = s["events"]
            times = [float(e["time"]) for e in events]
            kinds = [int(e["type"]) for e in events]
            window = s.get("window") or ([times[0], times[-1]] if times else [0.0, 0.0])
            sequences.append(EventSequence(s["id"], times, kinds, window[0], window[1]))
        ds = Dataset(str(obj["name"]), str(obj.get("time_unit", "")), types, tuple(sequences))
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"dataset does not follow the schema: {exc!r}") from exc
    if validate:
        # single-event sequences are legal on disk; they are filtered before training
        problems = [p for p in validate_dataset(ds) if not p.endswith("length < 2")]
        if problems:
            shown = "; ".join(problems[:5])
            raise DataError(f"{len(problems)} schema violation(s): {shown}")
    return ds


def load_dataset(path, validate: bool = True) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return dataset_from_dict(obj, validate=validate)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(ds), fh)
        fh.write("\n")
