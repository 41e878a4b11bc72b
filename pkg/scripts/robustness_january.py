"""Backtests on simulated January-length markets with perturbed parameters.

For each draw the true drift coefficients are multiplied by 1 + eps N(0,1),
the strategy trades 21 days on 9 nodes against markets drawn from the
truth, and the mean terminal wealth over the paths is recorded.
"""

import argparse
import dataclasses
from datetime import date

import numpy as np

from virtualbid.backtest import BacktestConfig, run_simulated_backtest
from virtualbid.simulate import (
    WeatherProcessConfig,
    derive_rng,
    perturb_params,
    simulate_weather,
    trading_dates,
    typical_truth,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=50)
    ap.add_argument("--paths", type=int, default=20)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.05, 0.10, 0.20])
    ap.add_argument("--cap", type=float, default=None, help="optional per-node dollar cap")
    args = ap.parse_args()

    n, days = 9, 21
    wcfg = WeatherProcessConfig.typical(n, seed=201)
    truth = typical_truth(n, wcfg, seed=202)
    january = [d for d in trading_dates(date(2022, 1, 1), 31) if d.weekday() < 5][:days]
    print(f"{'noise':>6} {'median':>10} {'mean':>12} {'p10':>10} {'p90':>10} {'> X0':>6}")
    for eps in args.noise:
        means = []
        for i in range(args.draws):
            params = perturb_params(truth, eps, derive_rng(300, i))
            theta = np.stack([m.values for m in simulate_weather(dataclasses.replace(wcfg, seed=400 + i), days)])
            cfg = BacktestConfig(paths=args.paths, seed=500 + i, record_allocations=False, max_abs_allocation=args.cap)
            rep = run_simulated_backtest(truth, theta, cfg, params=params, dates=january)
            means.append(float(np.mean(rep.terminal_wealth)))
        m = np.array(means)
        p10, p90 = np.percentile(m, [10, 90])
        print(f"{eps:>6.2f} {np.median(m):>10.4f} {m.mean():>12.4f} {p10:>10.4f} {p90:>10.4f} {np.mean(m > 100):>6.2f}")


if __name__ == "__main__":
    main()
