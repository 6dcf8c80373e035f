"""Turn recorded sessions (landmark CSV + keylog CSV) into training windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import (WINDOW_SIZE, WINDOW_STEP, Window, align_ground_truth, load_keylog_csv,
                     one_hot_sequence, sliding_windows, smooth_labels)
from .landmarks import SMOOTHING_WINDOW, LandmarkSequence, load_landmarks_csv, normalize_sequence


@dataclass
class Recording:
    recording_id: str
    landmarks: LandmarkSequence
    classes: np.ndarray  # raw per-frame ground truth
    normalized: np.ndarray  # (n, 2, 21, 3)
    keylog: list = field(default_factory=list)

    def targets(self, smoothing: int) -> np.ndarray:
        onehot = one_hot_sequence(self.classes)
        return smooth_labels(onehot, smoothing) if smoothing > 0 else onehot

    def windows(self, smoothing: int = 3, size: int = WINDOW_SIZE, step: int = WINDOW_STEP) -> list[Window]:
        return sliding_windows(self.normalized, self.targets(smoothing), self.recording_id, size, step)


def load_recording(directory, norm_window: int = SMOOTHING_WINDOW) -> Recording:
    d = Path(directory)
    seq = load_landmarks_csv(d / "landmarks.csv")
    keylog = load_keylog_csv(d / "keylog.csv")
    classes = align_ground_truth(keylog, seq.timestamp_ms)
    return Recording(d.name, seq, classes, normalize_sequence(seq, norm_window), keylog)


def session_dirs(root) -> list[Path]:
    """Session folders under ``root`` (any folder holding a landmarks.csv), sorted by name."""
    return sorted(p.parent for p in Path(root).glob("*/landmarks.csv"))


def load_recordings(root, norm_window: int = SMOOTHING_WINDOW) -> list[Recording]:
    return [load_recording(d, norm_window) for d in session_dirs(root)]


def build_windows(recordings, smoothing: int = 3, size: int = WINDOW_SIZE,
                  step: int = WINDOW_STEP) -> list[Window]:
    return [w for r in recordings for w in r.windows(smoothing, size, step)]
