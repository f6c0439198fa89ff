"""Train the default network with each Rprop variant on the same dataset and compare.

    python scripts/compare_variants.py --dataset runs/.../dataset.csv --epochs 500
"""

import argparse

from threadpoolctl import threadpool_limits

from bdcsense import dataset, pipeline
from bdcsense.config import RunConfig
from bdcsense.rprop import Variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", required=True, help="dataset CSV written by `bdcsense gendata`")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    ds = dataset.read_csv(args.dataset)
    print(f"{'variant':<14} {'epochs':>7} {'initial':>10} {'best train':>11} {'best val':>10}  stop")
    for variant in Variant:
        cfg = RunConfig().with_values({"rprop.variant": variant.value, "seed": str(args.seed),
                                       "stop.max_epochs": str(args.epochs)})
        tr, va = dataset.kfold(ds, cfg.train.folds, cfg.seed_for("folds"))[0]
        with threadpool_limits(1):
            _, rep = pipeline.train(tr, va, cfg.topology(), cfg.rprop, cfg.stop, cfg.seed_for("init"),
                                    init_scale=cfg.network.init_scale)
        print(f"{variant.value:<14} {rep.epochs:7d} {rep.initial_sse:10.4g} {rep.best_train_sse:11.4g} "
              f"{rep.val_sse[rep.best_epoch - 1]:10.4g}  {rep.stop_reason}")


if __name__ == "__main__":
    main()
