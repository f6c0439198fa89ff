"""Simulate the S1 duty run and print the thermal fixed point next to the Newton solution.

    python scripts/run_s1.py [--t-end SECONDS] [--out trajectory.csv]
"""

import argparse
import time

from bdcsense.motor_model import (default_setup, energy_balance_error, simulate, slowest_time_constant,
                                  steady_state, write_trajectory_csv)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=None, help="horizon in s (default 5 H/K)")
    ap.add_argument("--out", default=None, help="write the 10 Hz trajectory here")
    args = ap.parse_args()

    cal, profile = default_setup()
    p = cal.params
    print("\n".join(cal.report()))

    t0 = time.perf_counter()
    traj = simulate(p, profile, t_end=args.t_end)
    wall = time.perf_counter() - t0
    final = traj.state(len(traj) - 1)
    ss = steady_state(p, cal.v_a, cal.t_l)
    tau = slowest_time_constant(ss, cal.v_a, cal.t_l, p)

    print(f"horizon          {traj.t[-1]:.1f} s ({wall:.1f} s wall)")
    print(f"slowest mode     {tau:.1f} s")
    print(f"{'':16} {'simulated':>12} {'newton':>12}")
    for name, a, b in (("i_a [A]", final.i_a, ss.i_a), ("omega [rad/s]", final.omega, ss.omega),
                       ("theta [K]", final.theta, ss.theta)):
        print(f"{name:<16} {a:12.5f} {b:12.5f}")
    print(f"resistance       {traj.resistance[-1]:.5f} ohm")
    print(f"energy balance   {energy_balance_error(final, p) * 100:.4f} %")
    if args.out:
        write_trajectory_csv(traj, args.out)


if __name__ == "__main__":
    main()
