"""Frame metrics and decoded-text NLD for labelled recordings."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .dataset import Recording
from .labels import IDLE, NUM_CLASSES, KeyEdge
from .metrics import ClassMetrics, confusion_matrix, nld, per_class_metrics
from .nn import ModelParams, model_forward
from .stream import DEFAULT_DEBOUNCE, events_to_text, extract_events


def predict_recording(params: ModelParams, rec: Recording) -> np.ndarray:
    """Eval-mode probabilities (n, 28) over the whole recording.

    Frames without hands get the one-hot IDLE vector, as in streaming.
    """
    x = rec.normalized.transpose(1, 0, 2, 3)[None]
    probs = model_forward(x, params, mode="eval")[0]
    probs[~rec.landmarks.present.any(axis=1)] = np.eye(NUM_CLASSES)[IDLE]
    return probs


def reference_text(keylog: list[KeyEdge]) -> str:
    """Typed text implied by the key-down (or bare) edges of a keylog."""
    chars = [" " if e.key == "SPACE" else e.key for e in keylog if e.edge in (None, "down")]
    return "".join(chars)


@dataclass
class SessionResult:
    session: str
    wpm: float | None
    reference: str
    decoded: str
    nld: float


@dataclass
class EvalReport:
    confusion: np.ndarray
    metrics: ClassMetrics
    sessions: list[SessionResult]

    def nld_by_wpm(self) -> dict:
        groups = defaultdict(list)
        for s in self.sessions:
            groups[s.wpm].append(s.nld)
        return {w: float(np.mean(v)) for w, v in sorted(groups.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))}

    @property
    def mean_nld(self) -> float:
        return float(np.mean([s.nld for s in self.sessions])) if self.sessions else float("nan")


def evaluate(recordings, predictions, references, wpms=None, debounce: int = DEFAULT_DEBOUNCE) -> EvalReport:
    """Score per-recording probability arrays against ground truth.

    ``references`` holds the typed text per recording; ``wpms`` optionally
    tags each session for grouping.
    """
    wpms = wpms if wpms is not None else [None] * len(recordings)
    true = np.concatenate([r.classes for r in recordings])
    pred = np.concatenate([p.argmax(axis=1) for p in predictions])
    cm = confusion_matrix(true, pred)
    sessions = []
    for rec, probs, ref, wpm in zip(recordings, predictions, references, wpms):
        if not ref:  # nothing typed, NLD undefined
            continue
        text = events_to_text(extract_events(probs, debounce))
        sessions.append(SessionResult(rec.recording_id, wpm, ref, text, nld(ref, text)))
    return EvalReport(cm, per_class_metrics(cm), sessions)
