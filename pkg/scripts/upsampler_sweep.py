#!/usr/bin/env python3
"""Train the same desk-scale config once per feature-upsampling operator
and tabulate final masked-L1 against wall time.

Writes upsampler_comparison.csv (schema 1) into --out. No quality ordering
is asserted; this is the swap harness, not a leaderboard.
"""

import argparse
import os
import sys
import time

import numpy as np

from saugan.config import RunConfig, UPSAMPLERS, parse_config
from saugan.train import evaluate_palette_accuracy, run_training


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="sweep_out")
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-count", type=int, default=32)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for kind in UPSAMPLERS:
        cfg = parse_config(f"upsampler={kind}\nsteps={args.steps}\nseed={args.seed}\n"
                           "checkpoint_interval=0", base=RunConfig())
        t0 = time.perf_counter()
        result = run_training(cfg, out_dir=os.path.join(args.out, kind))
        wall = time.perf_counter() - t0
        acc = evaluate_palette_accuracy(result.model, count=args.eval_count)
        rows.append((kind, result.final_l1(), wall, acc))
        print(f"{kind:12s} final masked-L1 {rows[-1][1]:.4f}  "
              f"wall {wall:6.1f}s  palette acc {acc:.3f}")

    path = os.path.join(args.out, "upsampler_comparison.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# schema=1\n")
        fh.write("upsampler,final_masked_l1,wall_seconds,palette_accuracy\n")
        for kind, l1, wall, acc in rows:
            fh.write(f"{kind},{str(np.float32(l1))},{wall:.3f},{acc:.4f}\n")
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
