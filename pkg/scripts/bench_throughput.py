"""Forward-only throughput table: points x persons at batch size 1, geometry-only input.

    python3 scripts/bench_throughput.py --preset desk --repeats 5
"""

import argparse

from threadpoolctl import threadpool_limits

from spconvot.engine import set_precision
from spconvot.harness import benchmark
from spconvot.model import ModelConfig

ap = argparse.ArgumentParser()
ap.add_argument("--preset", choices=["desk", "full"], default="desk")
ap.add_argument("--repeats", type=int, default=3)
ap.add_argument("--precision", type=int, choices=[32, 64], default=32)
ap.add_argument("--threads", type=int, default=1)
args = ap.parse_args()

set_precision(args.precision)
cfg = ModelConfig.desk() if args.preset == "desk" else ModelConfig()
with threadpool_limits(args.threads):
    rows = benchmark(cfg, repeats=args.repeats)
print("points  persons  seq/s   spread")
for r in rows:
    print(f"{r['points']:>6}  {r['persons']:>7}  {r['seq_per_s']:6.2f}  {r['spread']:.1%}")
