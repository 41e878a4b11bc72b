"""Daily trading loop for the exploratory policy, with seeded Monte Carlo paths.

Each path owns two random streams derived from ``(master seed, path index)``:
one for policy sampling and one for market innovations (used only when the
market itself is simulated per path). Paths are independent of how many
other paths run, so a path's result never depends on the batch it ran in.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateDrift, InsufficientHistory, NumericError
from .estimation import DEFAULT_WINDOW, TrainingSet, drift_residuals, fit_ols, trailing_covariance
from .market_model import MarketParams, cholesky, eval_drift
from .policy import Allocation, ObjectiveConfig, PolicyCoefficients, policy_coefficients
from .simulate import derive_rng

POLICY_STREAM = 0
MARKET_STREAM = 1
CHUNK_PATHS = 2048


@dataclass(frozen=True)
class BacktestConfig:
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    window: int = DEFAULT_WINDOW
    mode: Literal["fixed", "rolling"] = "fixed"
    weather_mode: Literal["same_day", "next_day"] = "same_day"
    paths: int = 1
    seed: int = 0
    degenerate: Literal["flat"] = "flat"
    max_abs_allocation: float | None = None
    covariance_input: Literal["residuals", "raw"] = "residuals"
    refit: Literal["monthly", "never"] = "monthly"
    horizon: float | None = None  # None: number of trading days * dt
    dt: float = 1.0
    record_allocations: bool = True

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("covariance window must be at least 2")
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if self.mode not in ("fixed", "rolling"):
            raise ValueError(f"unknown estimation mode {self.mode!r}")
        if self.weather_mode not in ("same_day", "next_day"):
            raise ValueError(f"unknown weather mode {self.weather_mode!r}")
        if self.degenerate != "flat":
            raise ValueError("only the 'flat' degenerate-day behaviour is supported")
        if self.max_abs_allocation is not None and not self.max_abs_allocation > 0:
            raise ValueError("max_abs_allocation must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(eq=False)
class WealthPath:
    """One path. ``wealth[0]`` is the initial wealth, ``wealth[d + 1]`` the wealth after day ``d``."""

    dates: list[date]
    wealth: np.ndarray
    allocations: np.ndarray | None = None
    policy_means: np.ndarray | None = None
    policy_cov_diag: np.ndarray | None = None

    def __post_init__(self):
        if len(self.wealth) != len(self.dates) + 1:
            raise ValueError("wealth must have one more entry than dates")

    @property
    def terminal(self) -> float:
        return float(self.wealth[-1])


@dataclass(frozen=True, eq=False)
class DayPlan:
    """Path-independent per-day quantities of the policy."""

    dates: list[date]
    drift: np.ndarray  # (D, n) drift used by the policy
    covariance: np.ndarray  # (D, n, n)
    slope: np.ndarray  # (D, n)
    w: np.ndarray  # (D,), nan on flat days
    policy_chol: np.ndarray  # (D, n, n), zeros on flat days
    policy_cov_diag: np.ndarray  # (D, n)
    active: np.ndarray  # (D,) bool
    times: np.ndarray  # (D,)
    horizon: float
    forecast_fallback: np.ndarray  # (D,) bool: next-day mode fell back to same-day weather

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def degenerate_dates(self) -> list[date]:
        return [d for d, a in zip(self.dates, self.active) if not a]


@dataclass(eq=False)
class BacktestReport:
    config: dict
    seed: int
    dates: list[date]
    wealth: np.ndarray  # (P, D + 1)
    X0: float
    z: float
    w_sequence: list[float]
    degenerate_dates: list[date] = field(default_factory=list)
    allocations: np.ndarray | None = None  # (P, D, n)
    policy_means: np.ndarray | None = None  # (P, D, n)
    policy_cov_diag: np.ndarray | None = None  # (D, n)
    exclusions: list[tuple[date, str]] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stats:
            self.stats = terminal_statistics(self.wealth[:, -1])

    @property
    def paths(self) -> int:
        return self.wealth.shape[0]

    @property
    def terminal_wealth(self) -> np.ndarray:
        return self.wealth[:, -1]

    def path(self, p: int) -> WealthPath:
        return WealthPath(
            list(self.dates),
            self.wealth[p],
            None if self.allocations is None else self.allocations[p],
            None if self.policy_means is None else self.policy_means[p],
            self.policy_cov_diag,
        )

    @property
    def first_w(self) -> float:
        finite = [w for w in self.w_sequence if math.isfinite(w)]
        return finite[0] if finite else float("nan")


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def step_wealth(X: float, q: Allocation | np.ndarray, f) -> float:
    """``X + q^T f``."""
    qv = q.values if isinstance(q, Allocation) else np.asarray(q, dtype=float)
    fv = getattr(f, "values", f)
    fv = np.asarray(fv, dtype=float)
    if qv.shape != fv.shape:
        raise ValueError(f"allocation shape {qv.shape} does not match price differences {fv.shape}")
    return float(X + qv @ fv)


# ---------------------------------------------------------------------------
# planning: per-day drift/covariance and policy coefficients
# ---------------------------------------------------------------------------


def effective_weather(data: TrainingSet, weather_mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Weather the strategy conditions on for each day, plus next-day fallback flags.

    In ``next_day`` mode day ``t`` sees the realized weather of day ``t+1``; the
    last day has no successor and keeps its own weather (flagged).
    """
    theta = data.weather
    fallback = np.zeros(data.T, dtype=bool)
    if weather_mode == "same_day" or data.T == 0:
        return theta, fallback
    shifted = np.concatenate([theta[1:], theta[-1:]], axis=0)
    fallback[-1] = True
    return shifted, fallback


def _coefficients(b, S, t, objective) -> PolicyCoefficients | None:
    try:
        return policy_coefficients(b, S, t, objective)
    except DegenerateDrift:
        return None


def _plan(
    dates: Sequence[date],
    drift: np.ndarray,
    covariance: np.ndarray,
    objective: ObjectiveConfig,
    dt: float,
    fallback: np.ndarray | None = None,
) -> DayPlan:
    D, n = drift.shape
    times = np.arange(D) * dt
    slope = np.zeros((D, n))
    w = np.full(D, np.nan)
    chol = np.zeros((D, n, n))
    cov_diag = np.zeros((D, n))
    active = np.zeros(D, dtype=bool)
    for d in range(D):
        try:
            c = _coefficients(drift[d], covariance[d], float(times[d]), objective)
            if c is None:
                continue
            chol[d] = cholesky(c.covariance, "policy covariance")
        except NumericError as exc:
            raise NumericError(f"{dates[d]}: {exc}") from exc
        slope[d], w[d], cov_diag[d] = c.slope, c.w, np.diag(c.covariance)
        active[d] = True
    return DayPlan(
        list(dates),
        drift,
        covariance,
        slope,
        w,
        chol,
        cov_diag,
        active,
        times,
        objective.T,
        np.zeros(D, dtype=bool) if fallback is None else fallback,
    )


def _resolve_objective(cfg: BacktestConfig, n_days: int) -> ObjectiveConfig:
    T = cfg.horizon if cfg.horizon is not None else n_days * cfg.dt
    return dataclasses.replace(cfg.objective, T=float(T))


def plan_fixed(data: TrainingSet, params: MarketParams, cfg: BacktestConfig) -> DayPlan:
    theta, fallback = effective_weather(data, cfg.weather_mode)
    drift = eval_drift(params.drift, theta)
    S = params.covariance.ridged()
    cov = np.broadcast_to(S, (data.T,) + S.shape)
    return _plan(list(data.dates), drift, cov, _resolve_objective(cfg, data.T), cfg.dt, fallback)


def _month(d: date) -> tuple[int, int]:
    return (d.year, d.month)


def plan_rolling(data: TrainingSet, cfg: BacktestConfig) -> tuple[DayPlan, int]:
    """Refit the drift by OLS on all prior days (monthly) and the covariance on the trailing window (daily).

    The first ``window`` days are history only; trading starts on day ``window``.
    Returns the plan and the index of the first traded day.
    """
    start = cfg.window
    if data.T <= start:
        raise InsufficientHistory(start + 1, data.T)
    theta, fallback = effective_weather(data, cfg.weather_mode)
    fit_view = (theta, data.diffs)
    D = data.T - start
    drift = np.empty((D, data.n))
    cov = np.empty((D, data.n, data.n))
    current = None
    last_month = None
    for j, t in enumerate(range(start, data.T)):
        month = _month(data.dates[t])
        if current is None or (cfg.refit == "monthly" and month != last_month):
            current = fit_ols((theta[:t], data.diffs[:t]))
            last_month = month
        hist = slice(t - cfg.window, t)
        if cfg.covariance_input == "residuals":
            source = drift_residuals(current, (fit_view[0][hist], fit_view[1][hist]))
        else:
            source = data.diffs[hist]
        cov[j] = trailing_covariance(source, cfg.window).ridged()
        drift[j] = eval_drift(current, theta[t])
    objective = _resolve_objective(cfg, D)
    return _plan(list(data.dates[start:]), drift, cov, objective, cfg.dt, fallback[start:]), start


# ---------------------------------------------------------------------------
# path engine
# ---------------------------------------------------------------------------


def _policy_draws(rng: np.random.Generator, n_active: int, n: int) -> np.ndarray:
    # one standard_normal(n) per active day, in day order
    return rng.standard_normal((n_active, n))


def _simulate_paths(
    plan: DayPlan,
    objective: ObjectiveConfig,
    cfg: BacktestConfig,
    realized: np.ndarray | None = None,
    market_drift: np.ndarray | None = None,
    market_chol: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Run all paths. Either ``realized`` (D, n) shared price differences, or a per-path market."""
    D = plan.n_days
    n = plan.slope.shape[1]
    P = cfg.paths
    active_idx = np.cumsum(plan.active) - 1
    n_active = int(plan.active.sum())
    wealth = np.empty((P, D + 1))
    record = cfg.record_allocations
    allocations = np.zeros((P, D, n)) if record else None
    means = np.zeros((P, D, n)) if record else None
    cap = cfg.max_abs_allocation
    sqdt = math.sqrt(cfg.dt)

    for lo in range(0, P, CHUNK_PATHS):
        hi = min(P, lo + CHUNK_PATHS)
        m = hi - lo
        xi = np.stack([_policy_draws(derive_rng(cfg.seed, p, POLICY_STREAM), n_active, n) for p in range(lo, hi)])
        if realized is None:
            eta = np.stack([derive_rng(cfg.seed, p, MARKET_STREAM).standard_normal((D, n)) for p in range(lo, hi)])
        X = np.full(m, float(objective.X0))
        wealth[lo:hi, 0] = X
        for d in range(D):
            if plan.active[d]:
                mean = -plan.slope[d][None, :] * (X - plan.w[d])[:, None]
                q = mean + xi[:, active_idx[d], :] @ plan.policy_chol[d].T
                if cap is not None:
                    q = np.clip(q, -cap, cap)
            else:
                mean = np.zeros((m, n))
                q = np.zeros((m, n))
            if realized is not None:
                f = realized[d][None, :]
            else:
                f = market_drift[d][None, :] * cfg.dt + sqdt * (eta[:, d, :] @ market_chol.T)
            X = X + np.sum(q * f, axis=1)
            if not np.all(np.isfinite(X)):
                raise NumericError(f"{plan.dates[d]}: wealth became non-finite")
            wealth[lo:hi, d + 1] = X
            if record:
                allocations[lo:hi, d] = q
                means[lo:hi, d] = mean
    return wealth, allocations, means


def _report(
    plan: DayPlan,
    objective: ObjectiveConfig,
    cfg: BacktestConfig,
    wealth,
    allocations,
    means,
    exclusions=(),
    extra: dict | None = None,
) -> BacktestReport:
    config = cfg.to_dict()
    config["objective"]["T"] = objective.T
    if extra:
        config.update(extra)
    return BacktestReport(
        config=config,
        seed=cfg.seed,
        dates=list(plan.dates),
        wealth=wealth,
        X0=objective.X0,
        z=objective.z,
        w_sequence=[float(x) for x in plan.w],
        degenerate_dates=plan.degenerate_dates,
        allocations=allocations,
        policy_means=means,
        policy_cov_diag=plan.policy_cov_diag if cfg.record_allocations else None,
        exclusions=list(exclusions),
    )


def run_backtest(
    data: TrainingSet,
    params: MarketParams | None,
    cfg: BacktestConfig,
    exclusions: Sequence[tuple[date, str]] = (),
) -> BacktestReport:
    """Trade the exploratory policy over historical (or pre-simulated) price differences.

    ``params`` is required in ``fixed`` mode and ignored in ``rolling`` mode.
    Every path sees the same realized prices; paths differ only through policy
    sampling.
    """
    if data.T == 0:
        raise InsufficientHistory(1, 0)
    if cfg.mode == "fixed":
        if params is None:
            raise ValueError("fixed mode needs market parameters")
        plan = plan_fixed(data, params, cfg)
        start = 0
    else:
        plan, start = plan_rolling(data, cfg)
    objective = dataclasses.replace(cfg.objective, T=plan.horizon)
    wealth, alloc, means = _simulate_paths(plan, objective, cfg, realized=data.diffs[start:])
    return _report(plan, objective, cfg, wealth, alloc, means, exclusions)


def run_simulated_backtest(
    truth: MarketParams,
    weather: np.ndarray,
    cfg: BacktestConfig,
    params: MarketParams | None = None,
    dates: Sequence[date] | None = None,
) -> BacktestReport:
    """Each path trades against its own market drawn from ``truth``.

    Over a step of length ``dt`` the price difference is
    ``b(theta_t) dt + sqrt(dt) L eta_t``. The policy uses ``params`` (default:
    the truth) with per-unit-time drift and covariance.
    """
    theta = np.asarray(weather, dtype=float)
    D = theta.shape[0]
    if dates is None:
        dates = [date(2000, 1, 1) + timedelta(days=i) for i in range(D)]
    policy_params = params or truth
    placeholder = TrainingSet(
        tuple(dates), [str(i) for i in range(truth.n)], [str(j) for j in range(truth.k)], theta, np.zeros((D, truth.n))
    )
    plan = plan_fixed(placeholder, policy_params, cfg)
    objective = dataclasses.replace(cfg.objective, T=plan.horizon)
    market_drift = eval_drift(truth.drift, theta)
    wealth, alloc, means = _simulate_paths(
        plan, objective, cfg, market_drift=market_drift, market_chol=truth.covariance.cholesky()
    )
    return _report(plan, objective, cfg, wealth, alloc, means, extra={"market": "simulated per path"})


# ---------------------------------------------------------------------------
# statistics and serialization
# ---------------------------------------------------------------------------


def terminal_statistics(terminal: np.ndarray) -> dict:
    x = np.asarray(terminal, dtype=float)
    P = x.size
    return {
        "paths": int(P),
        "mean": float(np.mean(x)),
        "variance": float(np.var(x, ddof=1)) if P > 1 else 0.0,
        "min": float(np.min(x)),
        "max": float(np.max(x)),
        "median": float(np.median(x)),
    }


def max_drawdown(wealth: np.ndarray) -> np.ndarray:
    """Largest peak-to-trough drop in dollars for each row of ``wealth``."""
    W = np.atleast_2d(np.asarray(wealth, dtype=float))
    peak = np.maximum.accumulate(W, axis=1)
    return np.max(peak - W, axis=1)


def summarize(report: BacktestReport) -> dict:
    """Terminal statistics, per-path drawdowns and the realized mean-variance objective.

    The objective is ``mean((X_T - w)^2) - (w - z)^2`` with ``w`` taken from the
    first non-flat day.
    """
    XT = report.terminal_wealth
    stats = terminal_statistics(XT)
    w = report.first_w
    if math.isfinite(w):
        objective = float(np.mean((XT - w) ** 2) - (w - report.z) ** 2)
    else:
        objective = float("nan")
    dd = max_drawdown(report.wealth)
    return {
        **stats,
        "mc_standard_error": math.sqrt(stats["variance"] / stats["paths"]),
        "max_drawdown": [float(x) for x in dd],
        "mean_max_drawdown": float(np.mean(dd)),
        "min_wealth": float(np.min(report.wealth)),
        "w": w,
        "mean_variance_objective": objective,
        "degenerate_days": len(report.degenerate_dates),
    }


def _json_default(o):
    if isinstance(o, date):
        return o.isoformat()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def write_report(report: BacktestReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.json`` and ``wealth_paths.csv`` (``path,date,wealth``).

    The CSV's first row per path carries the initial wealth, dated the day
    before the first trading day.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(report)
    payload = {
        "config": report.config,
        "seed": report.seed,
        "X0": report.X0,
        "z": report.z,
        "dates": [d.isoformat() for d in report.dates],
        "w_sequence": [_finite_or_none(w) for w in report.w_sequence],
        "degenerate_dates": [d.isoformat() for d in report.degenerate_dates],
        "exclusions": [[d.isoformat(), r] for d, r in report.exclusions],
        "statistics": report.stats,
        "summary": {k: v for k, v in summary.items() if k != "max_drawdown"},
        "terminal_wealth": [float(x) for x in report.terminal_wealth],
    }
    paths = {"report": out / "report.json", "wealth_paths": out / "wealth_paths.csv"}
    with open(paths["report"], "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    start = (report.dates[0] - timedelta(days=1)).isoformat() if report.dates else ""
    with open(paths["wealth_paths"], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path", "date", "wealth"])
        iso = [d.isoformat() for d in report.dates]
        for p in range(report.paths):
            row = report.wealth[p]
            wr.writerow([p, start, repr(float(row[0]))])
            for d, x in zip(iso, row[1:]):
                wr.writerow([p, d, repr(float(x))])
    return paths


def load_report(out_dir: str | Path) -> BacktestReport:
    """Reload a written report; statistics are recomputed from the stored wealth paths and checked."""
    out = Path(out_dir)
    with open(out / "report.json") as fh:
        payload = json.load(fh)
    dates = [date.fromisoformat(d) for d in payload["dates"]]
    P = len(payload["terminal_wealth"])
    wealth = np.empty((P, len(dates) + 1))
    with open(out / "wealth_paths.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        counters = [0] * P
        for row in reader:
            p = int(row["path"])
            wealth[p, counters[p]] = float(row["wealth"])
            counters[p] += 1
    report = BacktestReport(
        config=payload["config"],
        seed=payload["seed"],
        dates=dates,
        wealth=wealth,
        X0=payload["X0"],
        z=payload["z"],
        w_sequence=[float("nan") if w is None else w for w in payload["w_sequence"]],
        degenerate_dates=[date.fromisoformat(d) for d in payload["degenerate_dates"]],
        exclusions=[(date.fromisoformat(d), r) for d, r in payload["exclusions"]],
    )
    if report.stats != payload["statistics"]:
        raise ValueError("stored statistics do not match the stored wealth paths")
    if list(report.terminal_wealth) != payload["terminal_wealth"]:
        raise ValueError("terminal wealth in report.json does not match wealth_paths.csv")
    return report
