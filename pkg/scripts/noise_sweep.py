"""Train and evaluate at several noise multiples on one shared S1 trajectory.

    python scripts/noise_sweep.py --scales 0.1 1 2 --epochs 1000 --out runs/noise_sweep
"""

import argparse
from pathlib import Path

from threadpoolctl import threadpool_limits

from bdcsense import cli
from bdcsense.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", type=float, nargs="+", default=[0.1, 0.5, 1.0, 2.0])
    ap.add_argument("--epochs", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="runs/noise_sweep")
    args = ap.parse_args()

    base = RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg0 = base.with_values({"seed": str(args.seed), "stop.max_epochs": str(args.epochs)})
    traj, _ = cli.stage_simulate(cfg0, out)

    print(f"{'scale':>6} {'sigma_v':>8} {'sigma_i':>8} {'speed %':>9} {'theta K':>9} {'R %':>7}")
    for scale in args.scales:
        cfg = cfg0.with_values({"dataset.sigma_v": repr(base.dataset.sigma_v * scale),
                                "dataset.sigma_i": repr(base.dataset.sigma_i * scale)})
        run = out / f"scale_{scale:g}"
        run.mkdir(exist_ok=True)
        with threadpool_limits(1):
            ds = cli.stage_gendata(cfg, traj, run)
            weights = cli.stage_train(cfg, ds, run)
            rep = cli.stage_evaluate(cfg, weights, ds.scaler, traj, ds, run)
        print(f"{scale:6g} {cfg.dataset.sigma_v:8.4g} {cfg.dataset.sigma_i:8.4g} "
              f"{rep.relative['speed'] * 100:9.4f} {rep.absolute['temperature']:9.3f} "
              f"{rep.relative['resistance'] * 100:7.3f}")


if __name__ == "__main__":
    main()
