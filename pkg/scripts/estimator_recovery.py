"""Drift recovery versus sample length, and gradient ascent against least squares."""

import argparse
import time

import numpy as np

from virtualbid.estimation import EstimatorConfig, fit, fit_ols
from virtualbid.simulate import WeatherProcessConfig, covariance_frobenius_error, market_from_weather, typical_truth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", type=int, nargs="+", default=[100, 250, 500, 1000, 2000])
    ap.add_argument("--variance", type=float, default=2.5e-5)
    ap.add_argument("--drift-scale", type=float, default=0.05)
    ap.add_argument("--full-iters", type=int, default=2000, help="budget for the full-covariance fit")
    args = ap.parse_args()

    wcfg = WeatherProcessConfig.typical(3, seed=101)
    truth = typical_truth(3, wcfg, seed=102, drift_scale=args.drift_scale, variance=args.variance, correlation=0.3)
    coef = truth.drift.coefficients
    print(f"{'T':>6} {'max rel err':>12} {'ga-ols':>9} {'cov err':>10} {'full H gain':>12} {'conv':>5} {'sec':>6}")
    for T in args.lengths:
        t0 = time.perf_counter()
        data = market_from_weather(truth, wcfg, T, seed=103).training_set()
        ols = fit_ols(data).coefficients
        rel = np.max(np.abs(ols - coef) / np.abs(coef))
        ga = fit(data, "grad", "drift_only").params.drift().coefficients
        full = fit(data, "grad", "full", EstimatorConfig(max_iters=args.full_iters))
        gain = full.trace[-1][1] - full.trace[0][1]
        cov_err = covariance_frobenius_error(full.params.covariance(), truth.covariance.matrix)
        dt = time.perf_counter() - t0
        print(
            f"{T:>6} {rel:>12.4%} {np.max(np.abs(ga - ols)):>9.1e} {cov_err:>10.2e} {gain:>12.4f} "
            f"{str(full.converged):>5} {dt:>6.1f}"
        )


if __name__ == "__main__":
    main()
