"""Train every ablation variant on one synthetic split and write a summary.

    python3 scripts/run_ablation_grid.py --out runs/grid --steps 300 --width 16
"""

import argparse
import logging
import sys

from wavehdr.experiments import ABLATIONS, run_grid, summary_table, synthetic_split
from wavehdr.model import ModelConfig
from wavehdr.train import TrainConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--train-count", type=int, default=16)
    ap.add_argument("--test-count", type=int, default=10)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--precision", choices=["float32", "float64"], default="float32")
    ap.add_argument("--variants", nargs="*", choices=list(ABLATIONS), default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    train_set, test_set = synthetic_split(args.train_count, args.test_count, args.size, args.seed)
    base = TrainConfig(
        steps=args.steps, batch=args.batch, crop=args.size, lr=args.lr, seed=args.seed,
        lr_schedule=((0, args.lr), (int(args.steps * 0.7), args.lr / 10)),
        precision=args.precision, log_every=0, model=ModelConfig(width=args.width),
    )
    summary = run_grid(train_set, test_set, base, args.out, args.variants)
    print(summary_table(summary), end="")
    return 0 if all(row["status"] == "ok" for row in summary.values()) else 3


if __name__ == "__main__":
    sys.exit(main())
