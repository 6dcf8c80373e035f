"""Causal frame-by-frame inference and keystroke decoding.

The first conv looks one frame ahead (temporal kernel 3, padding 1), so a
stream reproduces the batch model exactly by holding a two-frame delay
line: the probabilities for frame t are produced when frame t+1 arrives,
and ``flush`` emits the final frame with the same zero padding the batch
model uses.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .labels import IDLE, NUM_CLASSES, class_to_token
from .landmarks import N_POINTS, FrameLandmarks, NormalizationState, normalize_frame
from .nn import ModelParams, _conv2_matrix, conv1_columns, gru_step, softmax

DEFAULT_DEBOUNCE = 2


class NoFramesProcessed(ValueError):
    pass


class SourceUnavailable(OSError):
    pass


@dataclass(frozen=True)
class KeystrokeEvent:
    key: int
    frame: int
    confidence: float

    def to_json(self) -> str:
        return json.dumps({"frame": self.frame, "key": class_to_token(self.key),
                           "confidence": self.confidence})


class Debouncer:
    """Emit a key once its argmax has held for ``d`` consecutive frames."""

    def __init__(self, d: int = DEFAULT_DEBOUNCE):
        if d < 1:
            raise ValueError("debounce must be >= 1")
        self.d = d
        self.current: int | None = None
        self.count = 0

    def update(self, cls: int, frame: int, confidence: float = math.nan) -> KeystrokeEvent | None:
        if cls == self.current:
            self.count += 1
        else:
            self.current, self.count = cls, 1
        if self.count == self.d and cls != IDLE:
            return KeystrokeEvent(int(cls), int(frame), float(confidence))
        return None


def extract_events(stream, d: int = DEFAULT_DEBOUNCE, frames=None) -> list[KeystrokeEvent]:
    """Decode keystrokes from an argmax sequence or an (n, 28) probability array.

    Confidence is the winning probability when probabilities are given and
    nan otherwise.
    """
    arr = np.asarray(stream)
    if arr.ndim == 2:
        classes, conf = arr.argmax(axis=1), arr.max(axis=1)
    else:
        classes, conf = arr.astype(np.int64), np.full(len(arr), math.nan)
    frames = range(len(classes)) if frames is None else frames
    deb = Debouncer(d)
    events = []
    for t, c, p in zip(frames, classes, conf):
        ev = deb.update(int(c), int(t), float(p))
        if ev is not None:
            events.append(ev)
    return events


def events_to_text(events: Iterable[KeystrokeEvent]) -> str:
    return "".join(" " if class_to_token(e.key) == "SPACE" else class_to_token(e.key) for e in events)


@dataclass
class StepResult:
    frame: int | None  # index of the frame the probabilities belong to
    probs: np.ndarray | None
    event: KeystrokeEvent | None
    latency_us: float


@dataclass
class StreamState:
    params: ModelParams
    debounce: int = DEFAULT_DEBOUNCE
    norm_window: int = 15
    clock: Callable[[], float] = time.perf_counter
    norm: NormalizationState = field(init=False)
    pending: deque = field(init=False)
    h1: np.ndarray = field(init=False)
    h2: np.ndarray = field(init=False)
    debouncer: Debouncer = field(init=False)
    frames_seen: int = 0
    latencies_us: list = field(default_factory=list)

    def __post_init__(self):
        hid = self.params.config.gru_hidden
        self.norm = NormalizationState(window=self.norm_window)
        # (normalized hands, frame index, had hands) for the last two frames
        self.pending = deque(maxlen=2)
        self.h1 = np.zeros((1, hid))
        self.h2 = np.zeros((1, hid))
        self.debouncer = Debouncer(self.debounce)
        w = self.params.weights
        self._c1 = w["conv1.weight"].reshape(self.params.config.conv1_channels, -1)
        self._c2 = _conv2_matrix(w["conv2.weight"])


def _bn_eval(x, w, buf, name):
    inv = 1.0 / np.sqrt(buf[f"{name}.running_var"] + 1e-5)
    return (x - buf[f"{name}.running_mean"]) * inv * w[f"{name}.gamma"] + w[f"{name}.beta"]


def _model_step(state: StreamState, prev, cur, nxt) -> np.ndarray:
    """Probabilities for ``cur`` given its neighbours (each (2, 21, 3))."""
    p = state.params
    w, buf = p.weights, p.buffers
    x3 = np.stack([prev, cur, nxt], axis=1)[None]  # (1, 2, 3, 21, 3)
    cols = conv1_columns(x3)[:, 1:2]  # (1, 1, 6, 72)
    a1 = np.maximum(_bn_eval(cols @ state._c1.T + w["conv1.bias"], w, buf, "bn1"), 0.0)
    y2 = a1.reshape(1, 1, -1) @ state._c2.T + w["conv2.bias"]
    feats = np.maximum(_bn_eval(y2, w, buf, "bn2"), 0.0)[:, 0]
    state.h1 = gru_step(feats, state.h1, w["gru1.w_ih"], w["gru1.w_hh"], w["gru1.b_ih"], w["gru1.b_hh"])
    state.h2 = gru_step(state.h1, state.h2, w["gru2.w_ih"], w["gru2.w_hh"], w["gru2.b_ih"], w["gru2.b_hh"])
    a3 = np.maximum(state.h2 @ w["fc1.weight"].T + w["fc1.bias"], 0.0)
    return softmax(a3 @ w["fc2.weight"].T + w["fc2.bias"])[0]


_ZERO = np.zeros((2, N_POINTS, 3))
_IDLE_PROBS = np.eye(NUM_CLASSES)[IDLE]


def _emit(state: StreamState, nxt: np.ndarray) -> tuple[int, np.ndarray, KeystrokeEvent | None]:
    cur_hands, cur_index, cur_has_hands = state.pending[-1]
    prev_hands = state.pending[0][0] if len(state.pending) == 2 else _ZERO
    probs = _model_step(state, prev_hands, cur_hands, nxt)
    if not cur_has_hands:
        probs = _IDLE_PROBS.copy()
    cls = int(probs.argmax())
    event = state.debouncer.update(cls, cur_index, float(probs[cls]))
    return cur_index, probs, event


def push_frame(state: StreamState, frame: FrameLandmarks) -> StepResult:
    """Feed one raw frame.  The result carries the previous frame's output
    (``frame``/``probs`` are None for the very first call)."""
    start = state.clock()
    has_hands = frame.left_present or frame.right_present
    hands = normalize_frame(state.norm, frame).hands
    out = StepResult(None, None, None, 0.0)
    if state.pending:
        idx, probs, event = _emit(state, hands)
        out = StepResult(idx, probs, event, 0.0)
    state.pending.append((hands, frame.frame_index, has_hands))
    state.frames_seen += 1
    out.latency_us = (state.clock() - start) * 1e6
    state.latencies_us.append(out.latency_us)
    return out


def flush(state: StreamState) -> StepResult | None:
    """Emit the last buffered frame (end of stream)."""
    if not state.pending:
        return None
    idx, probs, event = _emit(state, _ZERO)
    state.pending.clear()
    return StepResult(idx, probs, event, 0.0)


def run_frames(state: StreamState, frames: Iterable[FrameLandmarks]) -> list[StepResult]:
    """Push a finite sequence and flush; returns one result per input frame."""
    results = [r for r in (push_frame(state, f) for f in frames) if r.probs is not None]
    last = flush(state)
    if last is not None:
        results.append(last)
    return results


@dataclass(frozen=True)
class LatencyReport:
    frames: int
    mean_us: float
    p95_us: float
    max_us: float
    fps: float


def latency_report(state_or_latencies) -> LatencyReport:
    lat = getattr(state_or_latencies, "latencies_us", state_or_latencies)
    lat = np.asarray(list(lat), dtype=np.float64)
    if lat.size == 0:
        raise NoFramesProcessed("no frames processed")
    ordered = np.sort(lat)
    rank = max(1, math.ceil(0.95 * len(ordered)))  # nearest-rank percentile
    mean = float(lat.mean())
    return LatencyReport(len(lat), mean, float(ordered[rank - 1]), float(ordered[-1]),
                         1e6 / mean if mean > 0 else math.inf)


# --- binary frame records -------------------------------------------------

RECORD = struct.Struct("<IQB126f")
LENGTH = struct.Struct("<I")


def encode_frame(frame: FrameLandmarks) -> bytes:
    flags = int(frame.left_present) | (int(frame.right_present) << 1)
    body = RECORD.pack(frame.frame_index, frame.timestamp, flags, *frame.flatten())
    return LENGTH.pack(len(body)) + body


def decode_frame(body: bytes) -> FrameLandmarks:
    if len(body) != RECORD.size:
        raise ValueError(f"frame record has {len(body)} bytes, expected {RECORD.size}")
    index, ts, flags, *coords = RECORD.unpack(body)
    pts = np.array(coords, dtype=np.float64).reshape(2, N_POINTS, 3)
    return FrameLandmarks(pts[0], pts[1], bool(flags & 1), bool(flags & 2), ts, index)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def iter_socket_frames(sock: socket.socket) -> Iterator[FrameLandmarks]:
    """Yield frames until the peer closes; a truncated trailing record is dropped."""
    while True:
        head = _recv_exact(sock, LENGTH.size)
        if head is None:
            return
        body = _recv_exact(sock, LENGTH.unpack(head)[0])
        if body is None:
            return
        yield decode_frame(body)


_DONE = object()


def run_stream(state: StreamState, source: Iterable[FrameLandmarks],
               on_result: Callable[[StepResult], None], queue_size: int = 64,
               fps_cap: float | None = None) -> LatencyReport:
    """Producer thread reads ``source`` into a bounded queue; this thread infers.

    ``fps_cap`` paces ingestion to at most that many frames per second.
    """
    q: queue.Queue = queue.Queue(maxsize=queue_size)
    errors: list[BaseException] = []

    def produce():
        period = 1.0 / fps_cap if fps_cap else 0.0
        next_t = time.perf_counter()
        try:
            for frame in source:
                if period:
                    delay = next_t - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                    next_t = max(next_t + period, time.perf_counter() - period)
                q.put(frame)
        except (OSError, ValueError) as exc:  # closed socket / bad record
            errors.append(exc)
        finally:
            q.put(_DONE)

    reader = threading.Thread(target=produce, daemon=True)
    reader.start()
    while True:
        item = q.get()
        if item is _DONE:
            break
        result = push_frame(state, item)
        if result.probs is not None:
            on_result(result)
    last = flush(state)
    if last is not None:
        on_result(last)
    reader.join()
    return latency_report(state)
