"""PGD-AT vs the FRL variants on the four-class Gaussian benchmark.

    python3 scripts/frl_benchmark.py --seeds 0 1 2 3 4 --out results/frl
"""

import argparse
import json
from pathlib import Path

from fairrobust.experiments import BenchmarkSetup, frl_comparison

ARMS = ("pretrained", "pgd_at", "frl_both", "frl_reweight", "frl_remargin")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--tau", type=float, default=0.05)
    ap.add_argument("--finetune-lr", type=float, default=1e-3)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    setup = BenchmarkSetup(tau=args.tau, finetune_lr=args.finetune_lr)
    results = {}
    print(f"{'seed':>4} {'arm':<14} {'avg std':>8} {'worst std':>9} {'avg rob':>8} {'worst rob':>9}")
    for seed in args.seeds:
        reps = frl_comparison(seed, setup)
        results[seed] = {arm: reps[arm].to_dict() for arm in ARMS}
        for arm in ARMS:
            r = reps[arm]
            print(f"{seed:>4} {arm:<14} {r.average('standard'):8.4f} {r.worst('standard')[1]:9.4f} "
                  f"{r.average('robust'):8.4f} {r.worst('robust')[1]:9.4f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "frl_benchmark.json").write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
