"""Boundary-weight and margin sweeps for one target class."""

import argparse

from fairrobust.experiments import BenchmarkSetup, ablation_curves, spearman


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()

    setup = BenchmarkSetup(ablation_target=args.target, ablation_epochs=args.epochs)
    t = args.target
    for mode, curve in ablation_curves(args.seed, setup).items():
        ratios = [r for r, _ in curve]
        std = [rep.standard_rate[t] for _, rep in curve]
        bnd = [rep.boundary_rate[t] for _, rep in curve]
        print(f"{mode} sweep, class {t}")
        for r, s, b in zip(ratios, std, bnd):
            print(f"  ratio {r:4.1f}  standard {s:.4f}  boundary {b:.4f}")
        print(f"  rank corr: standard {spearman(ratios, std):+.2f}, boundary {spearman(ratios, bnd):+.2f}")


if __name__ == "__main__":
    main()
