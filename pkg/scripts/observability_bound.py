"""Best achievable steady-state error for an estimator that sees one noisy current sample.

Along the S1 run the armature current barely moves once the machine is up to
speed, while the winding temperature climbs by tens of kelvin.  A noisy
instantaneous current reading therefore carries almost no information about
where on the thermal transient the machine is.  This script computes the
posterior-mean estimate of (omega, theta) given a single reading i + noise,
with the prior uniform over the run's samples, and reports its mean absolute
error over the steady-state window.  No trained network that maps
instantaneous (v, i) to (omega, theta) can beat it on average.

Voltage is constant in S1, so it adds nothing and is left out.

    python scripts/observability_bound.py --sigma-i 0.125 0.0125 0.00125
"""

import argparse

import numpy as np

from bdcsense.dataset import subsample
from bdcsense.motor_model import default_setup, simulate


def posterior_mean_errors(traj, sigma, seed=0, steady_fraction=0.1):
    rng = np.random.default_rng(seed)
    tail = traj.t >= (1 - steady_fraction) * traj.t[-1]
    readings = traj.i_a[tail] + sigma * rng.standard_normal(tail.sum())
    # log-likelihood of every reading against every sample on the run
    ll = -0.5 * ((readings[:, None] - traj.i_a[None, :]) / sigma) ** 2
    w = np.exp(ll - ll.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    est_omega, est_theta = w @ traj.omega, w @ traj.theta
    return (np.mean(np.abs(est_omega - traj.omega[tail])),
            np.mean(np.abs(est_theta - traj.theta[tail])))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma-i", type=float, nargs="+", default=[0.25, 0.125, 0.0125, 0.00125])
    ap.add_argument("--rate", type=float, default=2.0)
    args = ap.parse_args()

    cal, profile = default_setup()
    traj = subsample(simulate(cal.params, profile), args.rate)
    after_start = traj.t > 10.0
    lo, hi = traj.i_a[after_start].min(), traj.i_a[after_start].max()
    print(f"current after start-up: {lo:.4f} .. {hi:.4f} A (spread {hi - lo:.4f} A)")
    print(f"temperature over run:   {traj.theta.min():.2f} .. {traj.theta.max():.2f} K")
    print(f"{'sigma_i [A]':>12} {'speed MAE [rad/s]':>18} {'speed rel':>10} {'theta MAE [K]':>14}")
    for sigma in args.sigma_i:
        e_w, e_th = posterior_mean_errors(traj, sigma)
        print(f"{sigma:12.5g} {e_w:18.4f} {e_w / traj.omega[-1] * 100:9.3f}% {e_th:14.3f}")


if __name__ == "__main__":
    main()
