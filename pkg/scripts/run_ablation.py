"""Hybrid vs. plain-Transformer validation MSE over several seeds.

    python scripts/run_ablation.py --seeds 0 1 2 3 4 --jobs 2
"""
import argparse
import statistics

from gpumem.cli import run_benchmark
from gpumem.data import generate_synthetic


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n", type=int, default=452)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=2)
    args = ap.parse_args()

    mse = {"hybrid": [], "transformer": []}
    for seed in args.seeds:
        res = run_benchmark(generate_synthetic(args.n, seed), seed, epochs=args.epochs, jobs=args.jobs,
                            kinds=("transformer", "hybrid"))
        row = {k: res[k]["val"].mse for k in mse}
        for k, v in row.items():
            mse[k].append(v)
        print(f"seed {seed}: val MSE hybrid={row['hybrid']:.2f} transformer={row['transformer']:.2f}", flush=True)
    med = {k: statistics.median(v) for k, v in mse.items()}
    print(f"median val MSE: hybrid={med['hybrid']:.2f} transformer={med['transformer']:.2f} "
          f"-> hybrid {'<=' if med['hybrid'] <= med['transformer'] else '>'} transformer")


if __name__ == "__main__":
    main()
