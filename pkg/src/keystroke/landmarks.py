"""Two-hand landmark containers and causal shift/scale normalization.

Landmarks follow the 21-point hand convention (0 = wrist, 1-4 thumb,
5-8 index, 9-12 middle, 13-16 ring, 17-20 pinky).  A frame stores the left
hand first and the right hand second; a hand that was not detected is the
all-zero sentinel.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

N_POINTS = 21
WRIST = 0
MIDDLE_MCP = 9
SMOOTHING_WINDOW = 15
SCALE_EPS = 1e-6

# |angle| in degrees, uniform scale range, |shear|
MAX_ROTATION_DEG = 15.0
SCALE_RANGE = (0.8, 1.25)
MAX_SHEAR = 0.1


class NoHandsPresent(ValueError):
    """Raised when a frame has neither hand detected."""


class DegenerateScale(ValueError):
    """Raised when a hand's wrist-to-middle-root distance collapses below epsilon."""


@dataclass
class FrameLandmarks:
    left: np.ndarray
    right: np.ndarray
    left_present: bool
    right_present: bool
    timestamp: int = 0
    frame_index: int = 0

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64).reshape(N_POINTS, 3)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(N_POINTS, 3)
        self.left_present = bool(self.left_present)
        self.right_present = bool(self.right_present)

    @classmethod
    def from_hands(cls, left=None, right=None, timestamp=0, frame_index=0):
        """Build a frame, treating ``None`` as an absent hand."""
        zeros = np.zeros((N_POINTS, 3))
        return cls(
            left=zeros if left is None else left,
            right=zeros if right is None else right,
            left_present=left is not None,
            right_present=right is not None,
            timestamp=timestamp,
            frame_index=frame_index,
        )

    @property
    def hands(self) -> np.ndarray:
        """The (2, 21, 3) array, left block first."""
        return np.stack([self.left, self.right])

    @property
    def present(self) -> tuple[bool, bool]:
        return self.left_present, self.right_present

    def flatten(self) -> np.ndarray:
        return self.hands.reshape(-1)


@dataclass
class LandmarkSequence:
    """A recording of frames stored as dense arrays.

    ``points`` has shape (n, 2, 21, 3) and ``present`` shape (n, 2).
    """

    frame_index: np.ndarray
    timestamp_ms: np.ndarray
    present: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.timestamp_ms = np.asarray(self.timestamp_ms, dtype=np.int64)
        self.present = np.asarray(self.present, dtype=bool).reshape(-1, 2)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2, N_POINTS, 3)
        n = len(self.frame_index)
        if not (len(self.timestamp_ms) == len(self.present) == len(self.points) == n):
            raise ValueError("landmark sequence fields have mismatched lengths")

    def __len__(self) -> int:
        return len(self.frame_index)

    def __getitem__(self, i: int) -> FrameLandmarks:
        return FrameLandmarks(
            left=self.points[i, 0],
            right=self.points[i, 1],
            left_present=self.present[i, 0],
            right_present=self.present[i, 1],
            timestamp=int(self.timestamp_ms[i]),
            frame_index=int(self.frame_index[i]),
        )

    def __iter__(self) -> Iterator[FrameLandmarks]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_frames(cls, frames: Sequence[FrameLandmarks]) -> "LandmarkSequence":
        if not frames:
            return cls(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2, N_POINTS, 3)))
        return cls(
            frame_index=[f.frame_index for f in frames],
            timestamp_ms=[f.timestamp for f in frames],
            present=[f.present for f in frames],
            points=np.stack([f.hands for f in frames]),
        )


def _present_hands(frame: FrameLandmarks) -> list[np.ndarray]:
    hands = [h for h, p in ((frame.left, frame.left_present), (frame.right, frame.right_present)) if p]
    if not hands:
        raise NoHandsPresent(f"frame {frame.frame_index} has no hands")
    return hands


def reference_point(frame: FrameLandmarks) -> np.ndarray:
    """Midpoint of the two wrists, or the single visible wrist."""
    hands = _present_hands(frame)
    return np.mean([h[WRIST] for h in hands], axis=0)


def scale_factor(frame: FrameLandmarks, eps: float = SCALE_EPS) -> float:
    """Mean wrist-to-middle-finger-root distance over the visible hands."""
    hands = _present_hands(frame)
    dists = [float(np.linalg.norm(h[MIDDLE_MCP] - h[WRIST])) for h in hands]
    for d in dists:
        if d < eps:
            raise DegenerateScale(f"hand span {d!r} below {eps}")
    return max(float(np.mean(dists)), eps)


@dataclass
class NormalizationState:
    """Trailing buffer of recent (reference point, scale) pairs."""

    window: int = SMOOTHING_WINDOW
    eps: float = SCALE_EPS
    buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.buffer = deque(self.buffer, maxlen=self.window)

    def __len__(self) -> int:
        return len(self.buffer)


def update_and_smooth(state: NormalizationState, frame: FrameLandmarks) -> tuple[np.ndarray, float]:
    """Push this frame's reference/scale and return the window means.

    Frames without hands raise before touching the buffer.
    """
    ref = reference_point(frame)
    scale = scale_factor(frame, state.eps)
    state.buffer.append((ref, scale))
    refs = np.array([r for r, _ in state.buffer])
    scales = np.array([s for _, s in state.buffer])
    return refs.mean(axis=0), float(scales.mean())


def normalize(frame: FrameLandmarks, ref, scale: float, eps: float = SCALE_EPS) -> FrameLandmarks:
    if scale < eps:
        raise DegenerateScale(f"scale {scale!r} below {eps}")
    ref = np.asarray(ref, dtype=np.float64)
    left = (frame.left - ref) / scale if frame.left_present else np.zeros((N_POINTS, 3))
    right = (frame.right - ref) / scale if frame.right_present else np.zeros((N_POINTS, 3))
    return replace(frame, left=left, right=right)


def normalize_frame(state: NormalizationState, frame: FrameLandmarks) -> FrameLandmarks:
    """One causal normalization step; no-hands frames come back all-zero."""
    try:
        ref, scale = update_and_smooth(state, frame)
    except NoHandsPresent:
        return replace(frame, left=np.zeros((N_POINTS, 3)), right=np.zeros((N_POINTS, 3)))
    return normalize(frame, ref, scale, state.eps)


def normalize_sequence(seq: LandmarkSequence, window: int = SMOOTHING_WINDOW,
                       eps: float = SCALE_EPS) -> np.ndarray:
    """Causally normalize a whole recording; returns (n, 2, 21, 3)."""
    state = NormalizationState(window=window, eps=eps)
    out = np.zeros_like(seq.points)
    for i, frame in enumerate(seq):
        out[i] = normalize_frame(state, frame).hands
    return out


@dataclass(frozen=True)
class AugmentParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)
    shear: float = 0.0

    def clamped(self) -> "AugmentParams":
        return AugmentParams(
            angle_deg=float(np.clip(self.angle_deg, -MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
            scale=float(np.clip(self.scale, *SCALE_RANGE)),
            translation=(float(self.translation[0]), float(self.translation[1])),
            shear=float(np.clip(self.shear, -MAX_SHEAR, MAX_SHEAR)),
        )

    def matrix(self) -> np.ndarray:
        a = math.radians(self.angle_deg)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        shear = np.array([[1.0, self.shear], [0.0, 1.0]])
        return self.scale * rot @ shear

    @classmethod
    def sample(cls, rng: np.random.Generator, max_translation: float = 0.05) -> "AugmentParams":
        return cls(
            angle_deg=rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG),
            scale=float(np.exp(rng.uniform(*np.log(SCALE_RANGE)))),
            translation=tuple(rng.uniform(-max_translation, max_translation, size=2)),
            shear=rng.uniform(-MAX_SHEAR, MAX_SHEAR),
        )


def affine_points(points: np.ndarray, present: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply one x/y affine map to the present hands of an (n, 2, 21, 3) array."""
    p = params.clamped()
    out = np.array(points, dtype=np.float64, copy=True)
    mask = np.asarray(present, dtype=bool)
    xy = out[..., :2] @ p.matrix().T + np.asarray(p.translation)
    out[..., :2] = np.where(mask[..., None, None], xy, out[..., :2])
    return out


def augment_landmarks(seq: LandmarkSequence, params: AugmentParams | None = None,
                      seed: int | None = None) -> LandmarkSequence:
    """Apply a single affine transform to x,y of every present hand in the sequence.

    With ``params=None`` the transform is drawn from ``seed``.
    """
    if params is None:
        params = AugmentParams.sample(np.random.default_rng(seed))
    points = affine_points(seq.points, seq.present, params)
    return LandmarkSequence(seq.frame_index.copy(), seq.timestamp_ms.copy(), seq.present.copy(), points)


# --- landmark CSV -----------------------------------------------------------

_COORD_COLS = [f"{hand}{i}_{ax}" for hand in ("l", "r") for i in range(N_POINTS) for ax in "xyz"]
LANDMARK_HEADER = ["frame_index", "timestamp_ms", "left_present", "right_present", *_COORD_COLS]


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_landmark_rows(writer, seq: LandmarkSequence) -> None:
    flat = seq.points.reshape(len(seq), -1)
    for i in range(len(seq)):
        writer.writerow([
            int(seq.frame_index[i]), int(seq.timestamp_ms[i]),
            int(seq.present[i, 0]), int(seq.present[i, 1]),
            *map(_fmt, flat[i]),
        ])


def save_landmarks_csv(path, seq: LandmarkSequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LANDMARK_HEADER)
        write_landmark_rows(writer, seq)


def parse_landmark_row(row: Sequence[str]) -> FrameLandmarks:
    if len(row) != len(LANDMARK_HEADER):
        raise ValueError(f"expected {len(LANDMARK_HEADER)} columns, got {len(row)}")
    coords = np.array([float(v) for v in row[4:]]).reshape(2, N_POINTS, 3)
    return FrameLandmarks(
        left=coords[0], right=coords[1],
        left_present=int(row[2]) != 0, right_present=int(row[3]) != 0,
        timestamp=int(float(row[1])), frame_index=int(row[0]),
    )


def iter_landmarks_csv(path) -> Iterator[FrameLandmarks]:
    """Stream frames from a landmark CSV one row at a time."""
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "frame_index":
                continue
            yield parse_landmark_row(row)


def load_landmarks_csv(path) -> LandmarkSequence:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return LandmarkSequence.from_frames([])
    return LandmarkSequence(
        frame_index=data[:, 0].astype(np.int64),
        timestamp_ms=data[:, 1].astype(np.int64),
        present=data[:, 2:4] != 0,
        points=data[:, 4:].reshape(-1, 2, N_POINTS, 3),
    )

