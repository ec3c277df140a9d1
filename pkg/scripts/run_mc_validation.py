"""Cross-check every exact query against repeated Monte Carlo runs.

Trains a small multi-output model on the quadratic generator, folds it, and
t-tests the analytic mean, covariance, conditional moments, and expected
conditional covariance against 30-run MC estimates per sample size.
"""

import argparse
import json

from deeppce.circuit import build
from deeppce.data import gen_quadratic, split
from deeppce.mc import McConfig, validation_report
from deeppce.training import TrainConfig, fold_batchnorm, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=8, help="input and output dimension")
    ap.add_argument("--sizes", default="1e5,1e6", help="comma-separated MC sample sizes")
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--subset", default="1,2,3,5", help="conditioning inputs, 1-based")
    ap.add_argument("--out", default=None, help="optional JSON report path")
    args = ap.parse_args()

    ds = gen_quadratic(3000, args.d, args.d, seed=2)
    tr, va = split(ds, (0.9, 0.1), seed=1)
    model = build(args.d, args.d, scope_size=2, max_order=2, n_nodes=6, seed=0)
    report = train(model, TrainConfig(max_epochs=30, early_stop_patience=10, seed=0), tr, va)
    folded = fold_batchnorm(report.best_model)

    sizes = tuple(int(float(s)) for s in args.sizes.split(","))
    subset = [int(s) - 1 for s in args.subset.split(",")]
    cfg = McConfig(sample_sizes=sizes, n_runs=args.runs, seed=args.seed)
    result = validation_report(folded, cfg, subset)

    print(f"{args.runs} runs per size, conditioning on {{{args.subset}}}")
    for query, entry in result["queries"].items():
        for size, stats in entry["sizes"].items():
            print(f"{query:28s} n={int(size):>9,d}  min p = {min(stats['p_values']):.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
