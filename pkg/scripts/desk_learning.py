"""Desk-scale learning run: five synthetic classes, 200/50/100 split, desk preset.

    python3 scripts/desk_learning.py --seed 0 --out results/desk_seed0.json
"""

import argparse
import json
from pathlib import Path

from threadpoolctl import threadpool_limits

from spconvot.experiments import desk_learning

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--batch-size", type=int, default=16)
ap.add_argument("--budget", type=float, default=1200.0, help="training wall-clock seconds")
ap.add_argument("--threads", type=int, default=1)
ap.add_argument("--out", type=Path, default=None)
args = ap.parse_args()

with threadpool_limits(args.threads):
    res = desk_learning(args.seed, batch_size=args.batch_size, time_budget=args.budget)
print(f"test accuracy {res['test_accuracy']:.3f} after {res['epochs_run']} epochs, "
      f"{res['train_seconds']:.0f}s training, {res['generation_seconds']:.0f}s data generation")
if args.out:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(res, indent=2))
