"""Mean terminal wealth against the target under constant parameters, for several step sizes.

Prints, for each number of steps per unit horizon, the Monte Carlo mean of
X_T, its standard error and the exact expected value of the discretized
dynamics (whose gap to z is the discretization bias).
"""

import argparse
import csv
import time

import numpy as np

from virtualbid.backtest import BacktestConfig, run_simulated_backtest, summarize
from virtualbid.policy import ObjectiveConfig, policy_coefficients
from virtualbid.simulate import constant_truth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=2023)
    ap.add_argument("--steps", type=int, nargs="+", default=[50, 125, 250, 500])
    ap.add_argument("--z", type=float, default=105.0)
    ap.add_argument("--gamma", type=float, default=0.001)
    ap.add_argument("--csv", help="optional output file")
    args = ap.parse_args()

    b = np.array([0.3, 0.2])
    S = np.array([[0.16, 0.03], [0.03, 0.09]])
    objective = ObjectiveConfig(z=args.z, gamma=args.gamma, X0=100.0, T=1.0)
    coef = policy_coefficients(b, S, 0.0, objective)
    truth = constant_truth(b, S)
    print(f"rho = {coef.rho:.6f}  w = {coef.w:.6f}  z = {args.z}")
    print(f"{'steps':>6} {'mean':>10} {'se':>8} {'z-score':>8} {'exact':>10} {'bias':>10} {'sec':>6}")
    rows = []
    for N in args.steps:
        t0 = time.perf_counter()
        cfg = BacktestConfig(
            objective=objective, paths=args.paths, seed=args.seed, horizon=1.0, dt=1.0 / N, record_allocations=False
        )
        s = summarize(run_simulated_backtest(truth, np.zeros((N, 2, 3)), cfg))
        exact = coef.w + (objective.X0 - coef.w) * (1 - coef.rho / N) ** N
        zs = (s["mean"] - args.z) / s["mc_standard_error"]
        dt = time.perf_counter() - t0
        print(f"{N:>6} {s['mean']:>10.4f} {s['mc_standard_error']:>8.4f} {zs:>+8.2f} {exact:>10.5f} {exact - args.z:>+10.2e} {dt:>6.1f}")
        rows.append([N, s["mean"], s["mc_standard_error"], exact, exact - args.z])
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["steps", "mean", "standard_error", "exact_mean", "bias"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
