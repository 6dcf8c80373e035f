"""Class taxonomy, ground-truth alignment and label pre-processing."""

from __future__ import annotations

import csv
import string
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

NUM_CLASSES = 28
WINDOW_SIZE = 128
WINDOW_STEP = 64
DEFAULT_HOLD_MS = 100

KeyClass = IntEnum("KeyClass", ["IDLE", *string.ascii_uppercase, "SPACE"], start=0)
IDLE = KeyClass.IDLE
SPACE = KeyClass.SPACE

# Table 1 frame counts of the recorded dataset, class order IDLE, A..Z, SPACE.
REFERENCE_COUNTS = (
    183655, 3140, 1070, 1297, 1475, 3839, 1023, 1276, 1187, 2391, 954, 994, 1952, 1203,
    2074, 2393, 1526, 1154, 1845, 1925, 1531, 1632, 1069, 1371, 1474, 1511, 1575, 7464,
)


class ZeroClassCount(ValueError):
    pass


class UnsortedInput(ValueError):
    pass


def key_to_class(key: str) -> KeyClass:
    """Map a keylog token ('a'..'z', ' ' or 'SPACE') to its class."""
    if key in (" ", "SPACE", "space"):
        return SPACE
    if len(key) == 1 and key.lower() in string.ascii_lowercase:
        return KeyClass[key.upper()]
    raise ValueError(f"unsupported key {key!r}")


def class_to_char(c: int) -> str:
    c = KeyClass(c)
    if c == IDLE:
        raise ValueError("IDLE has no character")
    return " " if c == SPACE else c.name.lower()


def class_to_token(c: int) -> str:
    """Keylog / event token: lowercase letter or ``SPACE``."""
    return "SPACE" if KeyClass(c) == SPACE else class_to_char(c)


def one_hot(c: int) -> np.ndarray:
    v = np.zeros(NUM_CLASSES)
    v[KeyClass(c)] = 1.0
    return v


def one_hot_sequence(classes: Sequence[int]) -> np.ndarray:
    return np.eye(NUM_CLASSES)[np.asarray(classes, dtype=np.int64)]


@dataclass
class DatasetStats:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES,) or (self.counts < 0).any():
            raise ValueError("counts must be 28 non-negative integers")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_classes(cls, classes: Iterable[int]) -> "DatasetStats":
        return cls(np.bincount(np.asarray(list(classes), dtype=np.int64), minlength=NUM_CLASSES))


def class_weights(stats: DatasetStats, participating=None) -> np.ndarray:
    """Inverse-frequency weights N / (k * n_i).

    ``participating`` is a boolean mask of classes that enter the loss
    (default: all).  Non-participating classes get weight 0.
    """
    mask = np.ones(NUM_CLASSES, bool) if participating is None else np.asarray(participating, bool)
    counts = stats.counts
    if (counts[mask] == 0).any():
        missing = [KeyClass(i).name for i in np.flatnonzero(mask & (counts == 0))]
        raise ZeroClassCount(f"no samples for {missing}")
    weights = np.zeros(NUM_CLASSES)
    weights[mask] = stats.total / (NUM_CLASSES * counts[mask])
    return weights


@dataclass(frozen=True)
class KeyEdge:
    timestamp_ms: int
    key: str
    edge: str | None = None  # "down", "up" or None when the logger only records presses


def align_ground_truth(keylog: Sequence[KeyEdge], frame_times: Sequence[int],
                       hold_ms: int = DEFAULT_HOLD_MS) -> np.ndarray:
    """Per-frame class from key-down/up intervals (inclusive at both ends).

    Overlapping holds resolve to the most recent key-down.  A press without
    a matching up edge is held for ``hold_ms``.
    """
    frame_times = np.asarray(frame_times, dtype=np.int64)
    if (np.diff(frame_times) < 0).any():
        raise UnsortedInput("frame timestamps are not sorted")
    times = [e.timestamp_ms for e in keylog]
    if any(b < a for a, b in zip(times, times[1:])):
        raise UnsortedInput("keylog is not sorted by timestamp")

    intervals: list[tuple[int, int, int]] = []  # (down, up, class)
    open_downs: dict[int, int] = {}
    for e in keylog:
        c = int(key_to_class(e.key))
        if e.edge is None:
            intervals.append((e.timestamp_ms, e.timestamp_ms + hold_ms, c))
        elif e.edge == "down":
            if c in open_downs:  # auto-repeat or missing up: close the earlier hold
                start = open_downs.pop(c)
                intervals.append((start, start + hold_ms, c))
            open_downs[c] = e.timestamp_ms
        elif e.edge == "up":
            start = open_downs.pop(c, None)
            if start is not None:
                intervals.append((start, e.timestamp_ms, c))
        else:
            raise ValueError(f"unknown edge {e.edge!r}")
    for c, start in open_downs.items():
        intervals.append((start, start + hold_ms, c))

    labels = np.zeros(len(frame_times), dtype=np.int64)
    latest = np.full(len(frame_times), -1, dtype=np.int64)
    for down, up, c in intervals:
        lo = np.searchsorted(frame_times, down, side="left")
        hi = np.searchsorted(frame_times, up, side="right")
        newer = latest[lo:hi] <= down
        labels[lo:hi][newer] = c
        latest[lo:hi][newer] = down
    return labels


def smooth_labels(seq, s: int = 3) -> np.ndarray:
    """Blend IDLE frames next to each keystroke run toward that key.

    At distance d (1..s) from a run the label is
    ``d/(s+1) * y_idle + (1 - d/(s+1)) * y_key``.  Only IDLE frames are
    touched; an IDLE frame near two runs follows the closer one (ties go to
    the upcoming run).
    """
    if s < 1:
        raise ValueError("blend size must be >= 1")
    seq = np.asarray(seq, dtype=np.float64)
    classes = seq.argmax(axis=1)
    out = seq.copy()
    n = len(classes)
    best_d = np.full(n, s + 1)
    best_c = np.zeros(n, dtype=np.int64)

    idx = 0
    while idx < n:
        c = classes[idx]
        end = idx
        while end + 1 < n and classes[end + 1] == c:
            end += 1
        if c != IDLE:
            for d in range(1, s + 1):  # before the run
                j = idx - d
                if j < 0 or classes[j] != IDLE:
                    break
                if d <= best_d[j]:
                    best_d[j], best_c[j] = d, c
            for d in range(1, s + 1):  # after the run
                j = end + d
                if j >= n or classes[j] != IDLE:
                    break
                if d < best_d[j]:
                    best_d[j], best_c[j] = d, c
        idx = end + 1

    for j in np.flatnonzero(best_d <= s):
        a = best_d[j] / (s + 1)
        out[j] = 0.0
        out[j, IDLE] = a
        out[j, best_c[j]] = 1.0 - a
    return out


def window_starts(n: int, size: int = WINDOW_SIZE, step: int = WINDOW_STEP) -> list[int]:
    if size < 1 or step < 1:
        raise ValueError("size and step must be >= 1")
    if n < size:
        return []
    return list(range(0, n - size + 1, step))


@dataclass
class Window:
    landmarks: np.ndarray  # (size, 2, 21, 3), normalized
    labels: np.ndarray  # (size, 28)
    recording_id: str
    start: int


def sliding_windows(landmarks: np.ndarray, labels: np.ndarray, recording_id: str = "",
                    size: int = WINDOW_SIZE, step: int = WINDOW_STEP) -> list[Window]:
    """Cut one recording into fixed-size windows; short recordings yield none."""
    if len(landmarks) != len(labels):
        raise ValueError("landmarks and labels differ in length")
    return [
        Window(landmarks[a:a + size], labels[a:a + size], recording_id, a)
        for a in window_starts(len(labels), size, step)
    ]


# --- files ------------------------------------------------------------------

def load_keylog_csv(path) -> list[KeyEdge]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0] == "timestamp_ms":
                continue
            edge = row[2].strip() if len(row) > 2 and row[2].strip() else None
            out.append(KeyEdge(int(float(row[0])), row[1], edge))
    return out


def save_keylog_csv(path, keylog: Sequence[KeyEdge]) -> None:
    with_edges = any(e.edge is not None for e in keylog)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "key", "edge"] if with_edges else ["timestamp_ms", "key"])
        for e in keylog:
            writer.writerow([e.timestamp_ms, e.key, e.edge] if with_edges else [e.timestamp_ms, e.key])


def save_labels_csv(path, labels: np.ndarray) -> None:
    np.savetxt(path, np.asarray(labels), delimiter=",", fmt="%.10g")
