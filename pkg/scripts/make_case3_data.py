#!/usr/bin/env python3
"""Generate the synthetic stand-in experiment file for the ingest pipeline.

The real vehicle log is not distributable, so a slip-based rollout under
the experimental control law, rotated to inertial-frame velocities and
lightly noised, stands in for it.  The output is clearly synthetic.
"""

import argparse
from pathlib import Path

from vdflow.harness import make_synthetic_experiment

SLIP_GAMMA = [5.0, 0.4, 0.082, 0.098, 2.5, 0.015, 2.0, 2.0]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/experiment_case3.csv")
    ap.add_argument("--rows", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=1e-4)
    args = ap.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    make_synthetic_experiment(args.out, SLIP_GAMMA, n_rows=args.rows,
                              seed=args.seed, noise=args.noise)
    print(f"wrote {args.rows} synthetic rows to {args.out}")


if __name__ == "__main__":
    main()
