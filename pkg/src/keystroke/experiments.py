"""End-to-end synthetic surrogate: generate, train on one split, score held-out sessions."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import build_windows, load_recordings
from .evaluation import EvalReport, evaluate, predict_recording, reference_text
from .nn import ModelConfig, ModelParams
from .synth import PANGRAMS, generate_corpus
from .train import TrainConfig, TrainResult, make_folds, train_model

log = logging.getLogger(__name__)


@dataclass
class SurrogateConfig:
    # texts are disjoint between train and test so the GRUs cannot memorise test sentences
    train_texts: tuple[str, ...] = PANGRAMS[5:]
    train_wpms: tuple[float, ...] = (35, 45)
    train_seeds: tuple[int, ...] = (1,)
    test_texts: tuple[str, ...] = PANGRAMS[:5]
    test_wpm: float = 40
    test_seed: int = 99
    model: ModelConfig = field(default_factory=ModelConfig)
    hyper: TrainConfig = field(default_factory=TrainConfig)
    smoothing: int = 3
    step: int = 64
    folds: int = 5
    debounce: int = 2


@dataclass
class SurrogateResult:
    train_frames: int
    train_windows: int
    val_windows: int
    training: TrainResult
    report: EvalReport
    seconds: float

    @property
    def params(self) -> ModelParams:
        return self.training.params


def run_surrogate(cfg: SurrogateConfig, workdir) -> SurrogateResult:
    start = time.perf_counter()
    work = Path(workdir)
    generate_corpus(cfg.train_texts, cfg.train_wpms, cfg.train_seeds, work / "train")
    generate_corpus(cfg.test_texts, [cfg.test_wpm], [cfg.test_seed], work / "test")
    recs = load_recordings(work / "train")
    test = load_recordings(work / "test")

    train_ids, val_ids = map(set, make_folds([r.recording_id for r in recs], cfg.folds, cfg.hyper.seed).split(0))
    size = cfg.model.window_size
    tw = build_windows([r for r in recs if r.recording_id in train_ids], cfg.smoothing, size, cfg.step)
    vw = build_windows([r for r in recs if r.recording_id in val_ids], cfg.smoothing, size, cfg.step)
    log.info("%d train / %d val windows", len(tw), len(vw))
    result = train_model(tw, vw, cfg.model, cfg.hyper)

    preds = [predict_recording(result.params, r) for r in test]
    report = evaluate(test, preds, [reference_text(r.keylog) for r in test],
                      [cfg.test_wpm] * len(test), cfg.debounce)
    frames = int(sum(len(r.classes) for r in recs))
    return SurrogateResult(frames, len(tw), len(vw), result, report, time.perf_counter() - start)


def class_coverage(recordings) -> np.ndarray:
    return np.bincount(np.concatenate([r.classes for r in recordings]), minlength=28)
