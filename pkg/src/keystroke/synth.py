"""Deterministic synthetic typing sessions.

Two hands rest on a QWERTY home row seen from above.  For every scripted
character the assigned finger eases from its rest position to the key, dips
while the key is held and eases back.  Sessions get a random camera pose,
a shared random-walk drift (head motion) and i.i.d. landmark jitter, all
drawn from the session seed.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .labels import NUM_CLASSES, KeyClass, KeyEdge, key_to_class, save_keylog_csv
from .landmarks import N_POINTS, LandmarkSequence, save_landmarks_csv

PANGRAMS = (
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "jackdaws love my big sphinx of quartz",
    "how vexingly quick daft zebras jump",
    "the five boxing wizards jump quickly",
    "sphinx of black quartz judge my vow",
    "the jay pig fox zebra and my wolves quack",
    "waltz bad nymph for quick jigs vex",
    "glib jocks quiz nymph to vex dwarf",
    "two driven jocks help fax my big quiz",
    "five quacking zephyrs jolt my wax bed",
    "the quick onyx goblin jumps over the lazy dwarf",
    "amazingly few discotheques provide jukeboxes",
    "my girl wove six dozen plaid jackets before she quit",
    "crazy fredrick bought many very exquisite opal jewels",
    "we promptly judged antique ivory buckles for the next prize",
    "a mad boxer shot a quick gloved jab to the jaw of his dizzy opponent",
    "jived fox nymph grabs quick waltz",
    "heavy boxes perform quick waltzes and jigs",
    "a wizard s job is to vex chumps quickly in fog",
    "watch jeopardy alex trebek s fun tv quiz game",
    "by jove my quick study of lexicography won a prize",
    "the public was amazed to view the quickness and dexterity of the juggler",
    "sixty zippers were quickly picked from the woven jute bag",
    "big july earthquakes confound zany experimental vow",
    "foxy parsons quiz and cajole the lovably dim wiki girl",
    "quick zephyrs blow vexing daft jim",
)

KEY_PITCH_MM = 19.0
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
FINGER_POINTS = {"thumb": (1, 2, 3, 4), "index": (5, 6, 7, 8), "middle": (9, 10, 11, 12),
                 "ring": (13, 14, 15, 16), "pinky": (17, 18, 19, 20)}
# how much of the fingertip displacement each joint of the chain follows
JOINT_FOLLOW = (0.0, 0.4, 0.7, 1.0)

_ROWS = ("qwertyuiop", "asdfghjkl;", "zxcvbnm")
_ROW_STAGGER = (0.0, 0.25, 0.75)

_ASSIGNMENT = {
    **{k: ("left", "pinky") for k in "qaz"},
    **{k: ("left", "ring") for k in "wsx"},
    **{k: ("left", "middle") for k in "edc"},
    **{k: ("left", "index") for k in "rtfgvb"},
    **{k: ("right", "index") for k in "yuhjnm"},
    **{k: ("right", "middle") for k in "ik"},
    **{k: ("right", "ring") for k in "ol"},
    **{k: ("right", "pinky") for k in "p"},
    " ": ("right", "thumb"),
}
_HOME = {("left", "pinky"): "a", ("left", "ring"): "s", ("left", "middle"): "d",
         ("left", "index"): "f", ("right", "index"): "j", ("right", "middle"): "k",
         ("right", "ring"): "l", ("right", "pinky"): ";"}


class UnsupportedCharacter(ValueError):
    pass


def finger_for_key(key: str) -> tuple[str, str]:
    """Touch-typing (hand, finger) for 'a'..'z' or space."""
    k = " " if key in ("SPACE", " ") else key.lower()
    if k not in _ASSIGNMENT:
        raise UnsupportedCharacter(f"no finger for {key!r}")
    return _ASSIGNMENT[k]


@dataclass
class KeyboardLayout:
    """QWERTY key centres in image-plane units (x right, y down)."""

    units_per_mm: float = 0.0022
    origin: tuple[float, float] = (0.29, 0.45)
    centers: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        mm = {}
        for r, (row, stagger) in enumerate(zip(_ROWS, _ROW_STAGGER)):
            for c, k in enumerate(row):
                mm[k] = ((c + stagger) * KEY_PITCH_MM, r * KEY_PITCH_MM)
        mm[" "] = ((mm["b"][0] + mm["n"][0]) / 2, 3 * KEY_PITCH_MM)
        ox, oy = self.origin
        self.centers = {k: np.array([ox + x * self.units_per_mm, oy + y * self.units_per_mm])
                        for k, (x, y) in mm.items()}

    @property
    def pitch(self) -> float:
        return KEY_PITCH_MM * self.units_per_mm

    def center(self, key: str) -> np.ndarray:
        return self.centers[" " if key == "SPACE" else key]

    @property
    def keys(self) -> list[str]:
        return [k for k in self.centers if k != ";"]


@dataclass
class HandKinematicModel:
    press_ms: float = 100.0
    travel_ms: float = 110.0
    ramp_ms: float = 30.0  # dip ease-in before the key-down and ease-out after the key-up
    dip_depth: float = 0.012  # z offset of the fingertip while pressed
    dip_shift: float = 0.004  # y offset of the fingertip while pressed
    noise_std: float = 0.0015
    drift_std: float = 0.0004
    pose_rotation_deg: float = 4.0
    pose_scale: float = 0.08
    pose_translation: float = 0.04

    @classmethod
    def clean(cls, **overrides) -> "HandKinematicModel":
        """No jitter, drift or pose variation."""
        base = dict(noise_std=0.0, drift_std=0.0, pose_rotation_deg=0.0, pose_scale=0.0,
                    pose_translation=0.0)
        base.update(overrides)
        return cls(**base)


def rest_pose(layout: KeyboardLayout) -> np.ndarray:
    """(2, 21, 3) home-row pose, left hand first."""
    u = layout.units_per_mm
    pose = np.zeros((2, N_POINTS, 3))
    thumb_tips = {"left": layout.center(" ") - np.array([1.5 * layout.pitch, 0.0]),
                  "right": layout.center(" ") + np.array([1.0 * layout.pitch, 0.0])}
    for h, hand in enumerate(("left", "right")):
        tips = {f: layout.centers[_HOME[(hand, f)]] for f in FINGERS[1:]}
        tips["thumb"] = thumb_tips[hand]
        inner = tips["index"][0]
        outer = tips["ring"][0]
        wrist = np.array([(inner + outer) / 2 + (8 if hand == "left" else -8) * u,
                          tips["middle"][1] + 100 * u])
        pose[h, 0, :2] = wrist
        for f in FINGERS:
            tip = tips[f]
            base = wrist + (0.3 if f == "thumb" else 0.5) * (tip - wrist)
            pts = FINGER_POINTS[f]
            fracs = (0.0, 0.45, 0.75, 1.0)
            zs = (-0.01, -0.03, -0.02, 0.0)
            for p, frac, z in zip(pts, fracs, zs):
                pose[h, p, :2] = base + frac * (tip - base)
                pose[h, p, 2] = z
    return pose


@dataclass
class TypingScript:
    text: str
    wpm: float = 40.0
    fps: float = 30.0
    seed: int = 0
    duration_s: float | None = None  # when set, the text is cycled to fill the duration
    lead_ms: float = 500.0

    def __post_init__(self):
        if self.wpm <= 0:
            raise ValueError("wpm must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        for ch in self.text:
            if ch != " " and ch not in string.ascii_lowercase:
                raise UnsupportedCharacter(f"cannot type {ch!r}")

    @property
    def interval_ms(self) -> float:
        """Time between key-downs: wpm words of five characters per minute."""
        return 60000.0 / (self.wpm * 5)


@dataclass
class Session:
    session_id: str
    script: TypingScript
    landmarks: LandmarkSequence
    keylog: list[KeyEdge]
    labels: np.ndarray  # generator's own per-frame classes
    events: list[tuple[str, int, int]]  # (char, down_ms, up_ms)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_landmarks_csv(d / "landmarks.csv", self.landmarks)
        save_keylog_csv(d / "keylog.csv", self.keylog)
        return d


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _schedule(script: TypingScript, press_ms: float) -> tuple[list[tuple[str, int, int]], int]:
    gap = script.interval_ms
    if script.duration_s is not None:
        rate = script.wpm * 5 / 60.0
        count = int(math.floor(script.duration_s * rate + 1e-9))
        cycle = script.text if script.text.endswith(" ") else script.text + " "
        chars = [cycle[i % len(cycle)] for i in range(count)] if script.text else []
        start, total = gap / 2, script.duration_s * 1000.0
    else:
        chars = list(script.text)
        start = script.lead_ms
        total = start + len(chars) * gap + script.lead_ms
    events = []
    for i, ch in enumerate(chars):
        down = int(round(start + i * gap))
        events.append((ch, down, int(round(down + press_ms))))
    return events, int(math.floor(total * script.fps / 1000.0 + 1e-9)) + 1


def _finger_path(times, home, events, layout, model):
    """Planar fingertip offset from home for one finger, shape (n, 2)."""
    ramp, travel = model.ramp_ms, model.travel_ms
    kt, kp = [-1e12], [home]
    prev_back = None
    for ch, down, up in events:
        key = layout.center(ch)
        arrive, leave = down - ramp, up + ramp
        depart = arrive - travel
        if prev_back is None:
            kt.append(depart); kp.append(home)
        elif depart >= prev_back:
            kt += [prev_back, depart]; kp += [home, home]
        kt += [arrive, leave]; kp += [key, key]
        prev_back = leave + travel
    if prev_back is not None:
        kt.append(prev_back); kp.append(home)
    kt.append(1e12); kp.append(home)
    kt, kp = np.asarray(kt, dtype=np.float64), np.asarray(kp)
    idx = np.clip(np.searchsorted(kt, times, side="right") - 1, 0, len(kt) - 2)
    span = kt[idx + 1] - kt[idx]
    e = _smoothstep((times - kt[idx]) / span)[:, None]
    pos = kp[idx] + e * (kp[idx + 1] - kp[idx])
    return pos - home


def _dip_envelope(times, events, ramp):
    env = np.zeros(len(times))
    for _, down, up in events:
        rise = _smoothstep((times - (down - ramp)) / ramp) if ramp > 0 else (times >= down).astype(float)
        fall = _smoothstep(((up + ramp) - times) / ramp) if ramp > 0 else (times <= up).astype(float)
        env = np.maximum(env, np.minimum(rise, fall))
    return env


def generate_session(script: TypingScript, model: HandKinematicModel | None = None,
                     layout: KeyboardLayout | None = None, session_id: str = "session") -> Session:
    model = model or HandKinematicModel()
    layout = layout or KeyboardLayout()
    if script.interval_ms <= model.press_ms + 2 * model.ramp_ms:
        raise ValueError(f"{script.wpm} wpm is too fast for a {model.press_ms} ms press")
    rng = np.random.default_rng(script.seed)

    events, n_frames = _schedule(script, model.press_ms)
    times = np.round(np.arange(n_frames) * 1000.0 / script.fps).astype(np.int64)
    t = times.astype(np.float64)
    pose = rest_pose(layout)
    points = np.repeat(pose[None], n_frames, axis=0)

    by_finger: dict[tuple[str, str], list] = {}
    for ev in events:
        by_finger.setdefault(finger_for_key(ev[0]), []).append(ev)
    for (hand, finger), evs in by_finger.items():
        h = 0 if hand == "left" else 1
        pts = FINGER_POINTS[finger]
        offset = _finger_path(t, pose[h, pts[-1], :2], evs, layout, model)
        for p, follow in zip(pts, JOINT_FOLLOW):
            points[:, h, p, :2] += follow * offset
        env = _dip_envelope(t, evs, model.ramp_ms)
        points[:, h, pts[-1], 2] += model.dip_depth * env
        points[:, h, pts[-1], 1] += model.dip_shift * env
        points[:, h, pts[-2], 2] += 0.5 * model.dip_depth * env

    # session camera pose about the image centre
    angle = math.radians(rng.uniform(-1, 1) * model.pose_rotation_deg)
    scale = 1.0 + rng.uniform(-1, 1) * model.pose_scale
    shift = rng.uniform(-1, 1, size=2) * model.pose_translation
    rot = scale * np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    centre = np.array([0.5, 0.5])
    if angle or scale != 1.0 or shift.any():
        points[..., :2] = (points[..., :2] - centre) @ rot.T + centre + shift

    if model.drift_std:
        drift = np.cumsum(rng.normal(0.0, model.drift_std, size=(n_frames, 2)), axis=0)
        points[..., :2] += drift[:, None, None, :]
    if model.noise_std:
        points += rng.normal(0.0, model.noise_std, size=points.shape)

    labels = np.zeros(n_frames, dtype=np.int64)
    latest = np.full(n_frames, -np.inf)
    for ch, down, up in events:
        inside = (times >= down) & (times <= up) & (latest <= down)
        labels[inside] = key_to_class(ch)
        latest[inside] = down

    keylog = []
    for ch, down, up in events:
        token = "SPACE" if ch == " " else ch
        keylog += [KeyEdge(down, token, "down"), KeyEdge(up, token, "up")]
    keylog.sort(key=lambda e: (e.timestamp_ms, e.edge == "down"))

    seq = LandmarkSequence(np.arange(n_frames), times, np.ones((n_frames, 2), bool), points)
    return Session(session_id, script, seq, keylog, labels, events)


def class_count_dict(counts) -> dict[str, int]:
    return {KeyClass(i).name: int(c) for i, c in enumerate(counts)}


def generate_corpus(texts: Sequence[str], wpms: Sequence[float], seeds: Sequence[int], out_dir,
                    model: HandKinematicModel | None = None, layout: KeyboardLayout | None = None,
                    fps: float = 30.0) -> dict:
    """One session per (text, wpm, seed); writes session folders and ``manifest.json``."""
    if not texts or not wpms or not seeds:
        raise ValueError("texts, wpms and seeds must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sessions, totals = [], np.zeros(NUM_CLASSES, dtype=np.int64)
    for ti, text in enumerate(texts):
        for wpm in wpms:
            for seed in seeds:
                sid = f"t{ti:02d}_w{_num(wpm)}_s{seed}"
                # each session draws from its own stream so sessions are independent of order
                sess_seed = int(np.random.SeedSequence([seed, ti, int(round(wpm * 1000))]).generate_state(1)[0])
                script = TypingScript(text, wpm=wpm, fps=fps, seed=sess_seed)
                session = generate_session(script, model, layout, sid)
                session.write(out / sid)
                counts = session.class_counts()
                totals += counts
                sessions.append({
                    "id": sid, "text": text, "wpm": wpm, "seed": seed,
                    "frames": len(session.labels), "class_counts": class_count_dict(counts),
                })
    manifest = {"sessions": sessions, "total_frames": int(totals.sum()),
                "class_counts": class_count_dict(totals), "fps": fps}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else str(x)


def load_manifest(path) -> dict:
    p = Path(path)
    return json.loads((p / "manifest.json" if p.is_dir() else p).read_text())

