"""Train the default model on a synthetic corpus and score held-out 40 wpm sessions.

    python3 scripts/run_surrogate.py --out runs/surrogate [--epochs 100] [--seed 0]
"""

import argparse
import logging
from pathlib import Path

from keystroke.checkpoint import save_checkpoint
from keystroke.experiments import SurrogateConfig, run_surrogate
from keystroke.metrics import write_metrics_csv, write_nld_csv
from keystroke.train import TrainConfig, write_history_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/surrogate")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--augment", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    cfg = SurrogateConfig(hyper=TrainConfig(epochs=args.epochs, seed=args.seed, augment=args.augment))
    res = run_surrogate(cfg, out / "data")
    write_history_csv(out / "history.csv", res.training.history)
    write_metrics_csv(out / "metrics.csv", res.report.metrics)
    write_nld_csv(out / "nld.csv", [(s.session, s.wpm, s.nld) for s in res.report.sessions])
    save_checkpoint(out / "model.ckpt", res.params, extra={"best_epoch": res.training.best_epoch})

    print(f"train frames {res.train_frames}, windows {res.train_windows}/{res.val_windows}, "
          f"best epoch {res.training.best_epoch}, {res.seconds:.0f} s")
    print(f"macro recall {res.report.metrics.macro_recall:.4f}, mean NLD {res.report.mean_nld:.4f}")
    for s in res.report.sessions:
        print(f"  {s.session}: NLD {s.nld:.4f}\n    ref {s.reference!r}\n    got {s.decoded!r}")


if __name__ == "__main__":
    main()
