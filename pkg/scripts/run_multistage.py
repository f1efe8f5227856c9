#!/usr/bin/env python3
"""Multistage suppression sweep: suppress syntactic attention until a release
step, then train normally; summarize quality at a fixed step and at a fixed
offset after release, plus onset timing and spike magnitude per run.
"""

from __future__ import annotations

import argparse

from saslab.harness import multistage_sweep
from run_directional import small_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs-root", default="runs")
    ap.add_argument("--steps", type=int, default=6000)
    ap.add_argument("--release", default="0,500,1000,2000,6000")
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--lam", type=float, default=0.01)
    ap.add_argument("--offset", type=int, default=2000)
    args = ap.parse_args()

    base = small_config("multistage", 0.0, args.steps)
    releases = [int(x) for x in args.release.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    summary = multistage_sweep(base, releases, seeds, args.runs_root,
                               lam=args.lam, offset_steps=args.offset)
    for row in summary["rows"]:
        print(f"release={row['release_step']:>6} seed={row['seed']} "
              f"loss@eval={row['eval_loss_at_eval']:.3f} "
              f"uas@eval={row['uas_at_eval']:.3f} "
              f"pair@eval={row['pair_accuracy_at_eval']:.3f} "
              f"onset={row['structure_onset']}")


if __name__ == "__main__":
    main()
