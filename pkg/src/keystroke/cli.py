"""Command-line entry point: ``keystroke {synth,train,eval,stream,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  ``--config``
reads a flat ``key = value`` file whose keys are flag names; flags given on
the command line win over file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import socket
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import build_windows, load_recordings
from .evaluation import evaluate, predict_recording, reference_text
from .labels import NUM_CLASSES, WINDOW_STEP, DatasetStats, KeyClass, class_weights
from .landmarks import iter_landmarks_csv
from .metrics import write_metrics_csv, write_nld_csv
from .nn import ModelConfig, init_params
from .stream import (SourceUnavailable, StreamState, flush, iter_socket_frames, latency_report,
                     push_frame, run_stream)
from .synth import PANGRAMS, HandKinematicModel, TypingScript, generate_corpus, generate_session
from .train import TrainConfig, make_folds, train_model, write_history_csv

log = logging.getLogger("keystroke")

GLOBAL_DEFAULTS = {"seed": 0, "config": None, "out": None, "verbose": False}
DEFAULT_OUT = {"synth": "data", "train": "runs/train", "eval": "runs/eval", "bench": "runs/bench"}


# --- argument types -----------------------------------------------------------

def _positive_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from exc
    if not values or any(v <= 0 or not math.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError(f"values must be positive: {text!r}")
    return [int(v) if v.is_integer() else v for v in values]


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from exc


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# --- parser -------------------------------------------------------------------

def _global_options(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (default 0)")
    p.add_argument("--config", default=d, help="flat key = value file of flag defaults")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d)
    return p


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    for f in fields(ModelConfig):
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, type=type(f.default), default=f.default, dest=f.name)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _global_options(suppress=True)
    parser = argparse.ArgumentParser(prog="keystroke", parents=[common],
                                     description="Keystroke detection from hand landmark streams.")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--text", default="pangrams",
                   help="'pangrams', a literal text, or @file with one text per line")
    p.add_argument("--wpm", type=_positive_list, default=[40], help="comma-separated speeds")
    p.add_argument("--seeds", type=_int_list, default=None,
                   help="comma-separated session seeds (default: --seed)")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--noise-std", type=float, default=HandKinematicModel.noise_std)
    p.add_argument("--drift-std", type=float, default=HandKinematicModel.drift_std)

    p = subs["train"] = sub.add_parser("train", parents=[common], help="cross-validated training")
    p.add_argument("--data", required=True, help="corpus directory of session folders")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--fold-limit", type=_positive_int, default=None, help="train only the first N folds")
    p.add_argument("--epochs", type=_non_negative_int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--loss", choices=("mse", "ce"), default="mse")
    p.add_argument("--smoothing", type=_non_negative_int, default=3)
    p.add_argument("--step", type=_positive_int, default=WINDOW_STEP)
    p.add_argument("--augment", type=_bool, default=False)
    p.add_argument("--debounce", type=_positive_int, default=2)
    _add_model_args(p)

    p = subs["eval"] = sub.add_parser("eval", parents=[common], help="metrics and NLD for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--debounce", type=_positive_int, default=2)
    _add_model_args(p)

    p = subs["stream"] = sub.add_parser("stream", parents=[common], help="real-time inference")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--source", help="landmark CSV file")
    src.add_argument("--listen", help="[host:]port to accept one binary frame stream on")
    p.add_argument("--fps-cap", type=float, default=None)
    p.add_argument("--debounce", type=_positive_int, default=2)
    p.add_argument("--queue-size", type=_positive_int, default=64)
    _add_model_args(p)

    p = subs["bench"] = sub.add_parser("bench", parents=[common], help="per-frame latency benchmark")
    p.add_argument("--checkpoint", default=None, help="default: freshly initialised weights")
    p.add_argument("--frames", type=_positive_int, default=10_000)
    _add_model_args(p)
    return parser, subs


def read_config_file(path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _convert(action: argparse.Action, raw: str):
    if action.nargs == 0:  # store_true style flags
        return _bool(raw)
    if action.choices is not None and raw not in action.choices:
        raise argparse.ArgumentTypeError(f"{raw!r} not in {sorted(action.choices)}")
    return action.type(raw) if action.type else raw


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    # locate --config and the subcommand before the full parse so file values
    # can satisfy required flags
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config_path = pre.parse_known_args(argv)[0].config
    command = next((a for a in argv if a in subs), None)
    global_keys = {}
    if config_path and command:
        try:
            file_values = read_config_file(config_path)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config: {exc}")
        sub = subs[command]
        actions = {a.dest: a for a in sub._actions}
        other = {a.dest for s in subs.values() for a in s._actions}
        defaults = {}
        for key, raw in file_values.items():
            if key in ("config", "command", "help"):
                continue
            if key not in actions:
                if key in other:
                    continue  # belongs to another subcommand, e.g. a train snapshot given to eval
                parser.error(f"unknown config key {key!r}")
            try:
                defaults[key] = _convert(actions[key], raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"config key {key!r}: {exc}")
        global_keys = {k: defaults.pop(k) for k in list(defaults) if k in GLOBAL_DEFAULTS}
        for a in sub._actions:
            if a.dest in defaults and a.required:
                a.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for k, v in {**GLOBAL_DEFAULTS, **global_keys}.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.out is None:
        args.out = DEFAULT_OUT.get(args.command)
    return args


def model_config_from(args) -> ModelConfig:
    return ModelConfig(**{f.name: getattr(args, f.name) for f in fields(ModelConfig)})


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def write_config_snapshot(path, args) -> None:
    skip = {"command", "config", "verbose"}
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(vars(args).items())
             if k not in skip and v is not None]
    Path(path).write_text("\n".join(lines) + "\n")


# --- subcommands ----------------------------------------------------------------

def _texts(spec: str) -> list[str]:
    if spec == "pangrams":
        return list(PANGRAMS)
    if spec.startswith("@"):
        return [t.strip().lower() for t in Path(spec[1:]).read_text().splitlines() if t.strip()]
    return [spec]


def cmd_synth(args) -> int:
    model = HandKinematicModel(noise_std=args.noise_std, drift_std=args.drift_std)
    seeds = args.seeds if args.seeds else [args.seed]
    manifest = generate_corpus(_texts(args.text), args.wpm, seeds, args.out, model=model, fps=args.fps)
    print(f"{len(manifest['sessions'])} sessions, {manifest['total_frames']} frames -> {args.out}")
    return 0


def _session_wpms(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        return {}
    return {s["id"]: s["wpm"] for s in json.loads(path.read_text())["sessions"]}


def _report(params, recs, wpm_map, debounce):
    preds = [predict_recording(params, r) for r in recs]
    refs = [reference_text(r.keylog) for r in recs]
    return evaluate(recs, preds, refs, [wpm_map.get(r.recording_id) for r in recs], debounce)


def cmd_train(args) -> int:
    from .train import EmptyDataset

    recs = load_recordings(args.data)
    if not recs:
        raise EmptyDataset(f"no sessions found under {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(out / "config.txt", args)
    config = model_config_from(args)
    plan = make_folds([r.recording_id for r in recs], args.folds, args.seed)
    (out / "folds.json").write_text(json.dumps({"k": plan.k, "seed": args.seed, "folds": plan.folds}, indent=2))
    wpm_map = _session_wpms(args.data)
    limit = min(plan.k, args.fold_limit or plan.k)

    header = ["fold", "best_epoch", "best_val_loss", "macro_recall", "macro_precision", "macro_f1", "mean_nld"]
    rows = []
    for i in range(limit):
        train_ids, val_ids = map(set, plan.split(i))
        tr = [r for r in recs if r.recording_id in train_ids]
        va = [r for r in recs if r.recording_id in val_ids]
        tw = build_windows(tr, args.smoothing, config.window_size, args.step)
        vw = build_windows(va, args.smoothing, config.window_size, args.step)
        if not tw or not vw:
            raise EmptyDataset(f"fold {i}: recordings are shorter than one {config.window_size}-frame window")
        weights = None
        if args.loss == "ce":
            counts = np.bincount(np.concatenate([r.classes for r in tr]), minlength=NUM_CLASSES)
            weights = class_weights(DatasetStats(counts), participating=counts > 0)
        hyper = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, loss=args.loss,
                            augment=args.augment, seed=args.seed + i)
        log.info("fold %d: %d train / %d val windows", i, len(tw), len(vw))
        res = train_model(tw, vw, config, hyper, class_weights=weights)
        fold_dir = out / f"fold{i}"
        fold_dir.mkdir(exist_ok=True)
        write_history_csv(fold_dir / "history.csv", res.history)
        save_checkpoint(fold_dir / "model.ckpt", res.params,
                        extra={"fold": i, "best_epoch": res.best_epoch, "seed": args.seed,
                               "train": sorted(train_ids), "val": sorted(val_ids)})
        best_val = min((h.val_loss for h in res.history), default=math.nan)
        rep = _report(res.params, va, wpm_map, args.debounce)
        rows.append([i, "" if res.best_epoch is None else res.best_epoch, best_val, rep.metrics.macro_recall,
                     rep.metrics.macro_precision, rep.metrics.macro_f1, rep.mean_nld])
        print(f"fold {i}: best epoch {res.best_epoch}, val loss {best_val:.6g}, "
              f"macro recall {rep.metrics.macro_recall:.4f}, NLD {rep.mean_nld:.4f}")

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        means = [_nanmean([r[c] for r in rows]) for c in range(2, len(header))]
        writer.writerow(["mean", ""] + [repr(v) for v in means])
    return 0


def _nanmean(values) -> float:
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if arr.size else math.nan


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint, expect=model_config_from(args))
    recs = load_recordings(args.data)
    if not recs:
        raise ValueError(f"no sessions found under {args.data}")
    rep = _report(params, recs, _session_wpms(args.data), args.debounce)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", rep.metrics)
    with open(out / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        names = [KeyClass(i).name for i in range(NUM_CLASSES)]
        writer.writerow(["true\\pred"] + names)
        for name, row in zip(names, rep.confusion):
            writer.writerow([name] + [int(v) for v in row])
    write_nld_csv(out / "nld.csv", [(s.session, s.wpm, s.nld) for s in rep.sessions])
    with open(out / "nld_by_wpm.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wpm", "sessions", "mean_nld"])
        for wpm, value in rep.nld_by_wpm().items():
            writer.writerow([wpm, sum(s.wpm == wpm for s in rep.sessions), value])
    print(f"macro recall {rep.metrics.macro_recall:.4f}  precision {rep.metrics.macro_precision:.4f}  "
          f"F1 {rep.metrics.macro_f1:.4f}")
    for wpm, value in rep.nld_by_wpm().items():
        print(f"NLD @ {wpm} wpm: {value:.4f}")
    return 0


def _listen(spec: str):
    host, _, port = spec.rpartition(":")
    try:
        server = socket.create_server((host or "127.0.0.1", int(port)))
    except (OSError, ValueError) as exc:
        raise SourceUnavailable(f"cannot listen on {spec}: {exc}") from exc
    addr = server.getsockname()
    print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)
    conn, _ = server.accept()
    server.close()
    return conn


def _print_latency(rep, stream=None) -> None:
    print(f"frames {rep.frames}  mean {rep.mean_us:.1f} us  p95 {rep.p95_us:.1f} us  "
          f"max {rep.max_us:.1f} us  {rep.fps:.1f} FPS", file=stream or sys.stderr)


def cmd_stream(args) -> int:
    params = load_checkpoint(args.checkpoint, expect=model_config_from(args))
    state = StreamState(params, debounce=args.debounce)
    conn = None
    if args.source:
        if not Path(args.source).is_file():
            raise SourceUnavailable(f"no such landmark file: {args.source}")
        source = iter_landmarks_csv(args.source)
    elif args.listen:
        conn = _listen(args.listen)
        source = iter_socket_frames(conn)
    else:
        raise SourceUnavailable("give --source FILE or --listen PORT")

    def on_result(result):
        if result.event is not None:
            print(result.event.to_json(), flush=True)

    try:
        rep = run_stream(state, source, on_result, queue_size=args.queue_size, fps_cap=args.fps_cap)
    finally:
        if conn is not None:
            conn.close()
    _print_latency(rep)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_latency(out, "stream", state.latencies_us, rep)
    return 0


def _write_latency(out: Path, stem: str, latencies, rep) -> None:
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "latency_us"])
        writer.writerows(enumerate(latencies))
    with open(out / f"{stem}_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frames", "mean_us", "p95_us", "max_us", "fps"])
        writer.writerow([rep.frames, rep.mean_us, rep.p95_us, rep.max_us, rep.fps])


def bench_frames(n: int, seed: int, fps: float = 30.0):
    """``n`` synthetic frames of continuous typing."""
    script = TypingScript(" ".join(PANGRAMS), wpm=40, fps=fps, seed=seed, duration_s=n / fps)
    seq = generate_session(script).landmarks
    return [seq[i] for i in range(n)]


def cmd_bench(args) -> int:
    config = model_config_from(args)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, expect=config)
    else:
        params = init_params(config, args.seed)
    state = StreamState(params)
    for frame in bench_frames(args.frames, args.seed):
        push_frame(state, frame)
    flush(state)
    rep = latency_report(state)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_latency(out, "bench", state.latencies_us, rep)
    _print_latency(rep, sys.stdout)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "stream": cmd_stream, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.captureWarnings(True)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
