"""Synthetic weather and price-difference generator with known ground truth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimation import TrainingSet
from .market_model import (
    CovarianceModel,
    DriftParams,
    MarketParams,
    MeteoMatrix,
    PriceDiffVector,
    eval_drift,
)

DEFAULT_VARIABLES = ("temperature", "humidity", "wind_speed")


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``(seed, key...)``; the same key always gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True, eq=False)
class WeatherProcessConfig:
    """Per-(node, variable) AR(1): ``x_t = mu + phi (x_{t-1} - mu) + s eps_t``.

    ``mean``, ``persistence`` and ``stdev`` broadcast to shape ``(n, k)``.
    """

    mean: np.ndarray
    persistence: np.ndarray
    stdev: np.ndarray
    seed: int = 0
    n: int | None = None
    k: int | None = None

    def __post_init__(self):
        n = self.n if self.n is not None else np.shape(self.mean)[0]
        k = self.k if self.k is not None else np.shape(self.mean)[-1]
        shape = (n, k)
        arrs = {}
        for name in ("mean", "persistence", "stdev"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape).copy()
            a.setflags(write=False)
            arrs[name] = a
        if np.any(np.abs(arrs["persistence"]) >= 1):
            raise ValueError("AR(1) persistence must lie in (-1, 1)")
        if np.any(arrs["stdev"] < 0):
            raise ValueError("innovation stdev must be nonnegative")
        for name, a in arrs.items():
            object.__setattr__(self, name, a)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    @classmethod
    def typical(cls, n: int, seed: int = 0) -> "WeatherProcessConfig":
        """Temperature (C), relative humidity (%) and wind speed (m/s) with mild node offsets."""
        offsets = np.linspace(-1.0, 1.0, n)[:, None] if n > 1 else np.zeros((1, 1))
        mean = np.array([12.0, 60.0, 4.0]) + offsets * np.array([3.0, 8.0, 1.0])
        return cls(
            mean=mean,
            persistence=np.array([0.7, 0.5, 0.4]),
            stdev=np.array([2.5, 8.0, 1.2]),
            seed=seed,
            n=n,
            k=3,
        )


@dataclass(eq=False)
class SimulatedMarket:
    days: list[tuple[MeteoMatrix, PriceDiffVector]]
    truth: MarketParams
    seed: int
    node_ids: tuple[str, ...] = ()
    variables: tuple[str, ...] = DEFAULT_VARIABLES

    def training_set(self) -> TrainingSet:
        return TrainingSet.from_days(self.days, self.node_ids, self.variables)


def trading_dates(start: date, count: int) -> list[date]:
    return [start + timedelta(days=i) for i in range(count)]


def simulate_weather(
    cfg: WeatherProcessConfig, T: int, start: date = date(2022, 1, 1), hour: int = 17
) -> list[MeteoMatrix]:
    """Stationary AR(1) paths started at the mean level; one MeteoMatrix per day."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = derive_rng(cfg.seed, 0)
    eps = rng.standard_normal((T, cfg.n, cfg.k))
    x = np.empty((T, cfg.n, cfg.k))
    x[0] = cfg.mean
    for t in range(1, T):
        x[t] = cfg.mean + cfg.persistence * (x[t - 1] - cfg.mean) + cfg.stdev * eps[t]
    return [MeteoMatrix(d, hour, x[t]) for t, d in enumerate(trading_dates(start, T))]


def simulate_prices(
    truth: MarketParams,
    weather: Sequence[MeteoMatrix],
    seed: int,
    node_ids: Sequence[str] | None = None,
    variables: Sequence[str] = DEFAULT_VARIABLES,
) -> SimulatedMarket:
    """``f_t = b(theta_t) + L xi_t`` with ``L`` the Cholesky factor of the true covariance."""
    theta = np.stack([m.values for m in weather])
    b = eval_drift(truth.drift, theta)
    L = truth.covariance.cholesky()
    xi = derive_rng(seed, 1).standard_normal(b.shape)
    f = b + xi @ L.T
    node_ids = tuple(node_ids) if node_ids is not None else tuple(f"N{i + 1}" for i in range(truth.n))
    days = [(m, PriceDiffVector(m.day, m.hour, f[t])) for t, m in enumerate(weather)]
    return SimulatedMarket(days, truth, seed, node_ids, tuple(variables)[: truth.k])


def perturb_drift(drift: DriftParams, rel_noise: float, rng: np.random.Generator) -> DriftParams:
    """Multiply every coefficient by ``1 + rel_noise * N(0, 1)``."""
    noise = rng.standard_normal(drift.coefficients.shape)
    return DriftParams(drift.coefficients * (1.0 + rel_noise * noise))


def perturb_params(
    truth: MarketParams, rel_noise: float, rng: np.random.Generator, covariance: bool = False
) -> MarketParams:
    drift = perturb_drift(truth.drift, rel_noise, rng)
    cov = truth.covariance
    if covariance:
        # scale the Cholesky factor entrywise; keeps the result SPD
        L = cov.cholesky() * (1.0 + rel_noise * rng.standard_normal(cov.matrix.shape))
        L = np.tril(L)
        cov = CovarianceModel(0.5 * ((L @ L.T) + (L @ L.T).T), ridge=cov.ridge)
    return MarketParams(drift, cov)


def typical_truth(
    n: int,
    weather_cfg: WeatherProcessConfig,
    seed: int = 0,
    drift_scale: float = 0.02,
    variance: float = 0.02,
    correlation: float = 0.3,
) -> MarketParams:
    """Ground truth with drift of order ``drift_scale`` and covariance diagonal ``variance``.

    Slopes are drawn so each weather term moves the drift by about
    ``drift_scale / 2`` per stdev of that variable; intercepts centre the drift
    at a node-specific level of magnitude ``drift_scale``.
    """
    rng = derive_rng(seed, 2)
    k = weather_cfg.k
    ar_sd = weather_cfg.stdev / np.sqrt(1.0 - weather_cfg.persistence**2)
    with np.errstate(divide="ignore"):
        unit = np.where(ar_sd > 0, 1.0 / ar_sd, 0.0)
    signs = rng.choice([-1.0, 1.0], size=(n, k))
    slopes = 0.5 * drift_scale * signs * rng.uniform(0.5, 1.0, size=(n, k)) * unit
    level = drift_scale * rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 1.5, size=n)
    intercepts = level - np.sum(slopes * weather_cfg.mean, axis=1)
    coef = np.column_stack([intercepts, slopes])
    corr = np.full((n, n), correlation)
    np.fill_diagonal(corr, 1.0)
    sigma = variance * corr
    return MarketParams(DriftParams(coef), CovarianceModel(sigma, ridge=0.0))


def constant_truth(b: Sequence[float], sigma, k: int = 3) -> MarketParams:
    """Weather-independent truth: intercepts ``b``, zero slopes."""
    b = np.asarray(b, dtype=float)
    coef = np.zeros((b.size, k + 1))
    coef[:, 0] = b
    return MarketParams(DriftParams(coef), CovarianceModel(np.asarray(sigma, dtype=float), ridge=0.0))


@dataclass(frozen=True)
class PriceExportConfig:
    base_price: float = 40.0
    price_volatility: float = 0.2
    intervals: int = 12
    interval_jitter: float = 0.05
    seed: int = 0


def export_market_csv(
    market: SimulatedMarket | TrainingSet,
    directory: str | Path,
    cfg: PriceExportConfig | None = None,
) -> dict[str, Path]:
    """Write ``da_lmp.csv``, ``rt_lmp.csv`` and ``weather.csv`` consistent with the price differences.

    The real-time hourly average ``p`` is drawn log-normally around
    ``base_price``; the day-ahead price is ``p * exp(f)``. Interval prices are
    jittered around ``p`` and re-centred so their arithmetic mean is ``p``.
    """
    cfg = cfg or PriceExportConfig()
    data = market.training_set() if isinstance(market, SimulatedMarket) else market
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(cfg.seed, 3)
    hour = data.hour
    paths = {"da_lmp": out / "da_lmp.csv", "rt_lmp": out / "rt_lmp.csv", "weather": out / "weather.csv"}
    with open(paths["da_lmp"], "w", newline="") as fda, open(paths["rt_lmp"], "w", newline="") as frt, open(
        paths["weather"], "w", newline=""
    ) as fw:
        da, rt, wx = csv.writer(fda), csv.writer(frt), csv.writer(fw)
        da.writerow(["date", "hour", "node_id", "price"])
        rt.writerow(["date", "hour", "interval", "node_id", "price"])
        wx.writerow(["date", "hour", "node_id", "variable", "value"])
        for t, d in enumerate(data.dates):
            iso = d.isoformat()
            for i, node in enumerate(data.node_ids):
                p_rt = cfg.base_price * math.exp(cfg.price_volatility * rng.standard_normal())
                jitter = rng.standard_normal(cfg.intervals) * cfg.interval_jitter
                jitter -= jitter.mean()
                intervals = p_rt * (1.0 + jitter)
                p_rt = float(np.mean(intervals))
                p_da = p_rt * math.exp(data.diffs[t, i])
                da.writerow([iso, hour, node, repr(p_da)])
                for j, p in enumerate(intervals, start=1):
                    rt.writerow([iso, hour, j, node, repr(float(p))])
                for v, name in enumerate(data.variables):
                    wx.writerow([iso, hour, node, name, repr(float(data.weather[t, i, v]))])
    return paths


def market_from_weather(
    truth: MarketParams,
    weather_cfg: WeatherProcessConfig,
    T: int,
    seed: int,
    start: date = date(2022, 1, 1),
    hour: int = 17,
    node_ids: Sequence[str] | None = None,
) -> SimulatedMarket:
    weather = simulate_weather(weather_cfg, T, start=start, hour=hour)
    return simulate_prices(truth, weather, seed, node_ids=node_ids)


def covariance_frobenius_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(estimate) - np.asarray(truth)))


__all__ = [
    "WeatherProcessConfig",
    "SimulatedMarket",
    "simulate_weather",
    "simulate_prices",
    "perturb_drift",
    "perturb_params",
    "typical_truth",
    "constant_truth",
    "export_market_csv",
    "derive_rng",
    "market_from_weather",
    "PriceExportConfig",
    "trading_dates",
]
