import dataclasses
import math
import statistics
from datetime import date

import numpy as np
import pytest

from virtualbid.backtest import (
    BacktestConfig,
    BacktestReport,
    load_report,
    max_drawdown,
    run_backtest,
    run_simulated_backtest,
    step_wealth,
    summarize,
    write_report,
)
from virtualbid.errors import InsufficientHistory
from virtualbid.market_model import cholesky, eval_drift
from virtualbid.policy import Allocation, ObjectiveConfig, WealthState, optimal_policy
from virtualbid.simulate import WeatherProcessConfig, constant_truth, derive_rng, market_from_weather, typical_truth

from conftest import make_training_set


@pytest.fixture
def market():
    wcfg = WeatherProcessConfig.typical(3, seed=31)
    truth = typical_truth(3, wcfg, seed=32)
    return truth, market_from_weather(truth, wcfg, 30, seed=33).training_set()


def test_step_wealth_examples():
    assert step_wealth(100.0, np.zeros(2), np.array([0.3, -0.1])) == 100.0
    assert step_wealth(100.0, Allocation(np.array([10.0])), np.array([0.05])) == pytest.approx(100.5)
    assert step_wealth(100.0, np.array([5.0, -5.0]), np.array([0.02, 0.02])) == 100.0


def test_zero_drift_day_is_flat():
    data = make_training_set(np.zeros((1, 2, 1)), np.array([[0.4, -0.2]]))
    params = constant_truth([0.0, 0.0], np.eye(2) * 0.01, k=1)
    rep = run_backtest(data, params, BacktestConfig(paths=3))
    assert np.all(rep.terminal_wealth == 100.0)
    assert rep.degenerate_dates == [data.dates[0]]


def naive_paths(data, params, cfg):
    """Day-by-day loop over the public single-step API."""
    D = data.T
    T = D * cfg.dt
    obj = dataclasses.replace(cfg.objective, T=T)
    S = params.covariance.ridged()
    out = np.empty((cfg.paths, D + 1))
    for p in range(cfg.paths):
        b_all = eval_drift(params.drift, data.weather)
        active = [optimal_policy_or_none(b_all[d], S, d * cfg.dt, obj) is not None for d in range(D)]
        xi = derive_rng(cfg.seed, p, 0).standard_normal((sum(active), data.n))
        X, j = obj.X0, 0
        out[p, 0] = X
        for d in range(D):
            pol = optimal_policy_or_none(b_all[d], S, d * cfg.dt, obj, X)
            if pol is None:
                q = np.zeros(data.n)
            else:
                q = pol.mean + cholesky(pol.covariance) @ xi[j]
                j += 1
            X = step_wealth(X, q, data.diffs[d])
            out[p, d + 1] = X
    return out


def optimal_policy_or_none(b, S, t, obj, X=None):
    from virtualbid.errors import DegenerateDrift

    try:
        return optimal_policy(b, S, WealthState(obj.X0 if X is None else X, t), obj)
    except DegenerateDrift:
        return None


def test_matches_naive_loop(market):
    truth, data = market
    cfg = BacktestConfig(paths=7, seed=3)
    rep = run_backtest(data, truth, cfg)
    np.testing.assert_allclose(rep.wealth, naive_paths(data, truth, cfg), rtol=1e-12, atol=1e-9)


def test_wealth_accounting(market):
    truth, data = market
    rep = run_backtest(data, truth, BacktestConfig(paths=5, seed=1))
    for p in range(rep.paths):
        pnl = math.fsum(float(rep.allocations[p, d] @ data.diffs[d]) for d in range(data.T))
        assert rep.terminal_wealth[p] - rep.X0 == pytest.approx(pnl, abs=1e-9)


def test_paths_do_not_depend_on_batch(market):
    truth, data = market
    small = run_backtest(data, truth, BacktestConfig(paths=3, seed=8))
    big = run_backtest(data, truth, BacktestConfig(paths=10, seed=8))
    assert np.array_equal(small.wealth, big.wealth[:3])


def test_mode_equivalence_for_weather_free_drift(market):
    _, data = market
    params = constant_truth([0.02, -0.01, 0.015], np.eye(3) * 0.02)
    same = run_backtest(data, params, BacktestConfig(paths=4, weather_mode="same_day"))
    nxt = run_backtest(data, params, BacktestConfig(paths=4, weather_mode="next_day"))
    assert np.array_equal(same.wealth, nxt.wealth)


def test_allocation_cap(market):
    truth, data = market
    rep = run_backtest(data, truth, BacktestConfig(paths=20, max_abs_allocation=5.0))
    assert np.max(np.abs(rep.allocations)) <= 5.0


def test_determinism(market):
    truth, data = market
    a = run_backtest(data, truth, BacktestConfig(paths=6, seed=42))
    b = run_backtest(data, truth, BacktestConfig(paths=6, seed=42))
    assert a.wealth.tobytes() == b.wealth.tobytes()


def test_rolling_needs_history(market):
    _, data = market
    with pytest.raises(InsufficientHistory):
        run_backtest(data, None, BacktestConfig(mode="rolling", window=60))


def test_rolling_mode_runs():
    wcfg = WeatherProcessConfig.typical(2, seed=5)
    truth = typical_truth(2, wcfg, seed=6)
    data = market_from_weather(truth, wcfg, 90, seed=7).training_set()
    rep = run_backtest(data, None, BacktestConfig(mode="rolling", window=60, paths=3, max_abs_allocation=50.0))
    assert rep.dates == list(data.dates[60:])
    assert np.all(np.isfinite(rep.wealth))


def test_gamma_doubling_does_not_shrink_variance():
    truth = constant_truth([0.3, 0.2], [[0.16, 0.03], [0.03, 0.09]])
    data = market_from_weather(truth, WeatherProcessConfig(np.zeros((2, 3)), 0.0, 1.0), 40, seed=2).training_set()
    var = []
    for g in (0.001, 0.002):
        cfg = BacktestConfig(objective=ObjectiveConfig(gamma=g), paths=5000, seed=10, horizon=1.0, dt=1 / 40)
        var.append(run_backtest(data, truth, cfg).stats["variance"])
    assert var[1] >= var[0]


def test_two_path_statistics():
    rep = BacktestReport({}, 0, [date(2023, 1, 2)], np.array([[100.0, 104.0], [100.0, 106.0]]), 100.0, 105.0, [106.0])
    s = summarize(rep)
    assert s["mean"] == 105.0 and s["variance"] == 2.0


def test_single_flat_path():
    rep = BacktestReport({}, 0, [date(2023, 1, 2)], np.array([[100.0, 100.0]]), 100.0, 105.0, [math.nan])
    s = summarize(rep)
    assert s["variance"] == 0.0 and s["max_drawdown"] == [0.0]


def test_summary_matches_spreadsheet_recomputation(market):
    truth, data = market
    rep = run_backtest(data, truth, BacktestConfig(paths=9, seed=4))
    s = summarize(rep)
    rows = [list(map(float, r)) for r in rep.wealth]
    XT = [r[-1] for r in rows]
    assert s["mean"] == pytest.approx(statistics.fmean(XT), rel=1e-10)
    assert s["variance"] == pytest.approx(statistics.variance(XT), rel=1e-10)
    assert s["median"] == pytest.approx(statistics.median(XT), rel=1e-10)
    for p, r in enumerate(rows):
        peak, dd = r[0], 0.0
        for x in r:
            peak = max(peak, x)
            dd = max(dd, peak - x)
        assert s["max_drawdown"][p] == pytest.approx(dd, rel=1e-10, abs=1e-12)
    w = next(x for x in rep.w_sequence if math.isfinite(x))
    obj = statistics.fmean([(x - w) ** 2 for x in XT]) - (w - 105.0) ** 2
    assert s["mean_variance_objective"] == pytest.approx(obj, rel=1e-10)


def test_max_drawdown_dollars():
    assert max_drawdown(np.array([[100, 110, 90, 120, 100]])).tolist() == [20.0]


def test_report_round_trip(market, tmp_path):
    truth, data = market
    rep = run_backtest(data, truth, BacktestConfig(paths=4, seed=2))
    write_report(rep, tmp_path)
    back = load_report(tmp_path)
    assert back.stats == rep.stats
    assert back.wealth.tobytes() == rep.wealth.tobytes()
    header = (tmp_path / "wealth_paths.csv").read_text().splitlines()[0]
    assert header == "path,date,wealth"


def test_report_files_are_deterministic(market, tmp_path):
    truth, data = market
    for sub in ("a", "b"):
        write_report(run_backtest(data, truth, BacktestConfig(paths=3, seed=5)), tmp_path / sub)
    for name in ("report.json", "wealth_paths.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulated_market_paths_differ(market):
    truth, data = market
    rep = run_simulated_backtest(truth, data.weather, BacktestConfig(paths=3, seed=1))
    assert len(set(rep.terminal_wealth)) == 3


@pytest.mark.slow
def test_daily_target_wealth():
    # dt = 1 day over 250 days with per-day parameters
    b = np.array([0.3, 0.2]) / 250
    S = np.array([[0.16, 0.03], [0.03, 0.09]]) / 250
    truth = constant_truth(b, S)
    weather = np.zeros((250, 2, 3))
    rep = run_simulated_backtest(truth, weather, BacktestConfig(paths=20_000, seed=2023, record_allocations=False))
    s = summarize(rep)
    rho = float(b @ np.linalg.solve(S, b))
    w = rep.first_w
    exact = w + (100.0 - w) * (1 - rho) ** 250
    bias = exact - 105.0
    assert abs(s["mean"] - 105.0) <= 3 * s["mc_standard_error"] + abs(bias)
