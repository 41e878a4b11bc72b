import math
from datetime import date

import numpy as np
import pytest

from virtualbid.ingest import ingest_files
from virtualbid.market_model import CovarianceModel, MarketParams
from virtualbid.simulate import (
    PriceExportConfig,
    WeatherProcessConfig,
    constant_truth,
    derive_rng,
    export_market_csv,
    market_from_weather,
    perturb_params,
    simulate_prices,
    simulate_weather,
    typical_truth,
)


def series(cfg, T):
    return np.stack([m.values for m in simulate_weather(cfg, T)])


def lag1(x):
    x = x - x.mean()
    return float(np.sum(x[1:] * x[:-1]) / np.sum(x * x))


def test_noiseless_weather_is_constant():
    cfg = WeatherProcessConfig(mean=[[5.0, -1.0]], persistence=0.6, stdev=0.0)
    x = series(cfg, 50)
    assert np.array_equal(x, np.broadcast_to([[5.0, -1.0]], x.shape))


def test_zero_persistence_is_iid():
    cfg = WeatherProcessConfig(mean=[[2.0]], persistence=0.0, stdev=1.5, seed=4)
    x = series(cfg, 20_000)[1:, 0, 0]
    assert abs(x.mean() - 2.0) < 4 * 1.5 / math.sqrt(x.size)
    assert x.std() == pytest.approx(1.5, rel=0.03)
    assert abs(lag1(x)) < 0.03


def test_ar1_autocorrelation():
    cfg = WeatherProcessConfig(mean=[[0.0]], persistence=0.9, stdev=1.0, seed=9)
    x = series(cfg, 10_000)[:, 0, 0]
    assert abs(lag1(x) - 0.9) <= 0.03


def test_weather_config_validation():
    with pytest.raises(ValueError):
        WeatherProcessConfig(mean=[[0.0]], persistence=1.0, stdev=1.0)
    with pytest.raises(ValueError):
        WeatherProcessConfig(mean=[[0.0]], persistence=0.5, stdev=-1.0)


def test_noiseless_prices_equal_drift():
    wcfg = WeatherProcessConfig.typical(2, seed=1)
    truth = typical_truth(2, wcfg, seed=2)
    tiny = MarketParams(truth.drift, CovarianceModel(1e-30 * np.eye(2), ridge=0.0))
    weather = simulate_weather(wcfg, 30)
    market = simulate_prices(tiny, weather, seed=3)
    ts = market.training_set()
    from virtualbid.market_model import eval_drift

    np.testing.assert_allclose(ts.diffs, eval_drift(truth.drift, ts.weather), atol=1e-10)


def test_zero_drift_clt():
    truth = constant_truth([0.0, 0.0], np.eye(2))
    weather = simulate_weather(WeatherProcessConfig(mean=np.zeros((2, 3)), persistence=0.0, stdev=1.0), 10_000)
    f = simulate_prices(truth, weather, seed=5).training_set().diffs
    assert np.all(np.abs(f.mean(axis=0)) < 4 / math.sqrt(10_000))


def test_simulation_is_deterministic():
    wcfg = WeatherProcessConfig.typical(3, seed=11)
    truth = typical_truth(3, wcfg, seed=12)
    a = market_from_weather(truth, wcfg, 40, seed=13).training_set()
    b = market_from_weather(truth, wcfg, 40, seed=13).training_set()
    assert a.diffs.tobytes() == b.diffs.tobytes()
    assert a.weather.tobytes() == b.weather.tobytes()
    c = market_from_weather(truth, wcfg, 40, seed=14).training_set()
    assert not np.array_equal(a.diffs, c.diffs)


def test_derived_streams_are_independent_of_order():
    x = derive_rng(5, 1, 0).standard_normal(3)
    derive_rng(5, 0, 0).standard_normal(100)
    assert np.array_equal(derive_rng(5, 1, 0).standard_normal(3), x)
    assert not np.array_equal(derive_rng(5, 1, 1).standard_normal(3), x)


def test_typical_truth_magnitudes():
    wcfg = WeatherProcessConfig.typical(4, seed=0)
    truth = typical_truth(4, wcfg, seed=1, drift_scale=0.02, variance=0.02, correlation=0.3)
    assert np.allclose(np.diag(truth.covariance.matrix), 0.02)
    b = truth.drift.intercepts + np.sum(truth.drift.slopes * wcfg.mean, axis=1)
    assert np.all((np.abs(b) >= 0.01 - 1e-12) & (np.abs(b) <= 0.03 + 1e-12))


def test_perturbation_is_relative():
    truth = constant_truth([0.1, -0.2], np.eye(2) * 0.01)
    p = perturb_params(truth, 0.0, np.random.default_rng(0))
    assert np.array_equal(p.drift.coefficients, truth.drift.coefficients)
    q = perturb_params(truth, 0.1, np.random.default_rng(0), covariance=True)
    assert np.all(q.drift.coefficients[:, 1:] == 0.0)
    assert q.covariance.cholesky().shape == (2, 2)


def test_exported_csv_reingests_to_same_differences(tmp_path):
    wcfg = WeatherProcessConfig.typical(3, seed=21)
    truth = typical_truth(3, wcfg, seed=22)
    market = market_from_weather(truth, wcfg, 30, seed=23, start=date(2022, 3, 1), node_ids=("A", "B", "C"))
    paths = export_market_csv(market, tmp_path, PriceExportConfig(seed=24))
    res = ingest_files(
        paths["da_lmp"], paths["rt_lmp"], paths["weather"], ("A", "B", "C"), 17, ("temperature", "humidity", "wind_speed")
    )
    ts = market.training_set()
    assert len(res.exclusions) == 0
    assert res.training_set.dates == ts.dates
    np.testing.assert_allclose(res.training_set.diffs, ts.diffs, rtol=0, atol=1e-12)
    assert np.array_equal(res.training_set.weather, ts.weather)
