"""Command-line driver: ``virtualbid <command> [--config run.toml] [overrides]``.

Commands: ingest, simulate, fit, check-grad, backtest, policy. Errors are
reported as one JSON line on stderr; exit code 1 means a numeric failure and
2 an input/file problem.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from datetime import date
from pathlib import Path

import numpy as np

from .backtest import (
    BacktestConfig,
    effective_weather,
    plan_fixed,
    plan_rolling,
    run_backtest,
    run_simulated_backtest,
    summarize,
    write_report,
)
from .config import RunConfig, config_echo, load_config
from .errors import ConfigError, InputError, VirtualBidError
from .estimation import (
    EstimatorConfig,
    TrainingSet,
    check_gradient,
    drift_residuals,
    finite_difference_gradient,
    fit,
    gradient_errors,
    initial_params,
    likelihood_gradient,
    GRAD_CHECK_RTOL,
    trailing_covariance,
)
from .ingest import ExclusionLog, ingest_files, write_training_set
from .market_model import CovarianceModel, DriftParams, MarketParams
from .policy import ObjectiveConfig
from .simulate import (
    DEFAULT_VARIABLES,
    PriceExportConfig,
    WeatherProcessConfig,
    derive_rng,
    export_market_csv,
    market_from_weather,
    perturb_params,
    typical_truth,
)

# stream keys under the master seed
SUBSEED_KEY = 100
CHECK_GRAD_KEY = 101


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _subseeds(seed: int) -> dict[str, int]:
    vals = derive_rng(seed, SUBSEED_KEY).integers(0, 2**63, size=5)
    return dict(zip(("weather", "truth", "market", "export", "perturb"), (int(v) for v in vals)))


def weather_config(cfg: RunConfig, seed: int) -> WeatherProcessConfig:
    n = len(cfg.nodes)
    if tuple(cfg.variables) == DEFAULT_VARIABLES:
        return WeatherProcessConfig.typical(n, seed=seed)
    # standardized generic variables
    return WeatherProcessConfig(mean=0.0, persistence=0.5, stdev=1.0, seed=seed, n=n, k=len(cfg.variables))


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """Training data plus, in simulation mode, the truth and the trading slice."""

    history: TrainingSet
    trading: TrainingSet
    exclusions: ExclusionLog
    truth: MarketParams | None = None


def simulated_market(cfg: RunConfig):
    sim = cfg.simulation
    seeds = _subseeds(cfg.seed)
    wcfg = weather_config(cfg, seeds["weather"])
    truth = typical_truth(len(cfg.nodes), wcfg, seeds["truth"], sim.drift_scale, sim.variance, sim.correlation)
    market = market_from_weather(
        truth, wcfg, sim.history_days + sim.days, seeds["market"], sim.start, cfg.hour, cfg.nodes
    )
    ts = TrainingSet.from_days(market.days, cfg.nodes, cfg.variables)
    return ts, truth


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data is not None:
        d = cfg.data
        res = ingest_files(
            d.da_lmp, d.rt_lmp, d.weather, cfg.nodes, cfg.hour, cfg.variables, d.intervals_expected, d.price_floor
        )
        return Dataset(res.training_set, res.training_set, res.exclusions)
    ts, truth = simulated_market(cfg)
    h = cfg.simulation.history_days
    return Dataset(ts.take(slice(0, h)), ts.take(slice(h, ts.T)), ExclusionLog(), truth)


def estimator_config(cfg: RunConfig) -> EstimatorConfig:
    e = cfg.estimator
    return EstimatorConfig(e.learning_rate, e.max_iters, e.grad_tolerance or None, cfg.seed)


def fitted_params(cfg: RunConfig, data: TrainingSet):
    """Run the configured estimator; returns (MarketParams, FitResult).

    The drift-only layout freezes a diagonal covariance during fitting, but
    the returned covariance is the full trailing covariance of the fitted
    residuals.
    """
    e = cfg.estimator
    res = fit(data, e.method, e.layout, estimator_config(cfg), e.window, e.covariance_input)
    drift = res.params.drift()
    if e.layout == "full":
        cov = CovarianceModel(res.params.market_params().covariance.matrix)
    else:
        src = drift_residuals(drift, data) if e.covariance_input == "residuals" else data.diffs
        cov = trailing_covariance(src, min(e.window, data.T))
    return MarketParams(drift, cov), res


def _float_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def params_payload(params: MarketParams, data: TrainingSet, cfg: RunConfig, res=None) -> dict:
    out = {
        "node_ids": list(data.node_ids),
        "variables": list(data.variables),
        "hour": data.hour,
        "drift": params.drift.coefficients.tolist(),
        "covariance": params.covariance.matrix.tolist(),
        "ridge": params.covariance.ridge,
        "method": cfg.estimator.method,
        "layout": cfg.estimator.layout,
    }
    if res is not None:
        out.update(
            trace=[[int(i), float(h)] for i, h in res.trace],
            converged=bool(res.converged),
            iterations=int(res.iterations),
            grad_norm=_float_or_none(res.grad_norm),
        )
    return out


def load_params(path: str | Path) -> MarketParams:
    """Read a ``params.json`` written by ``fit`` (or ``truth.json`` from ``simulate``)."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: file not found")
    try:
        with open(p) as fh:
            payload = json.load(fh)
        drift = DriftParams(np.array(payload["drift"], dtype=float))
        cov = CovarianceModel(np.array(payload["covariance"], dtype=float), ridge=payload.get("ridge"))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{p}: not a parameter file ({exc})") from None
    return MarketParams(drift, cov)


def write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def policy_params(cfg: RunConfig, ds: Dataset) -> MarketParams:
    source = cfg.backtest.params
    if source == "fit":
        return fitted_params(cfg, ds.history)[0]
    if source == "truth":
        return ds.truth
    if source == "perturbed":
        rng = derive_rng(_subseeds(cfg.seed)["perturb"], 0)
        sim = cfg.simulation
        return perturb_params(ds.truth, sim.perturbation, rng, covariance=sim.perturb_covariance)
    params = load_params(source)
    if params.n != ds.history.n or params.k != ds.history.k:
        raise InputError(f"{source}: shape ({params.n}, {params.k}) does not match the data")
    return params


def backtest_config(cfg: RunConfig) -> BacktestConfig:
    o, b = cfg.objective, cfg.backtest
    return BacktestConfig(
        objective=ObjectiveConfig(z=o.z, gamma=o.gamma, X0=o.x0),
        window=b.window,
        mode=b.mode,
        weather_mode=b.weather_mode,
        paths=b.paths,
        seed=cfg.seed,
        max_abs_allocation=b.max_abs_allocation or None,
        covariance_input=cfg.estimator.covariance_input,
        refit=b.refit,
        horizon=o.horizon or None,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args) -> int:
    if cfg.data is None:
        raise ConfigError("ingest needs a [data] block")
    ds = load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_training_set(ds.history, out / "training_set.csv")
    ds.exclusions.sorted().write_csv(out / "exclusions.csv")
    print(f"training days {ds.history.T}, excluded days {len(ds.exclusions)} -> {out}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.simulation is None:
        raise ConfigError("simulate needs a [simulation] block")
    ts, truth = simulated_market(cfg)
    out = Path(cfg.out)
    export_market_csv(ts, out, PriceExportConfig(seed=_subseeds(cfg.seed)["export"]))
    write_json(params_payload(truth, ts, cfg) | {"method": "truth", "layout": "truth"}, out / "truth.json")
    print(f"simulated {ts.T} days x {ts.n} nodes -> {out}")
    return 0


def cmd_fit(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    params, res = fitted_params(cfg, ds.history)
    out = Path(cfg.out) / "params.json"
    write_json(params_payload(params, ds.history, cfg, res), out)
    print(
        f"method {cfg.estimator.method} layout {cfg.estimator.layout}: "
        f"log-likelihood {res.trace[-1][1]:.6f} after {res.iterations} iterations "
        f"(converged {res.converged}) -> {out}"
    )
    return 0


def cmd_check_grad(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    layout = cfg.estimator.layout
    phi = initial_params(ds.history, layout, cfg.estimator.window, cfg.estimator.covariance_input)
    if args.at == "perturbed":
        rng = derive_rng(cfg.seed, CHECK_GRAD_KEY)
        v = phi.values
        phi = phi.with_values(v + 0.1 * np.maximum(np.abs(v), 0.1) * rng.standard_normal(v.size))
    if args.corrupt_gradient:
        analytic = likelihood_gradient(phi, ds.history).values.copy()
        analytic[0] += 1e-3 * max(1.0, abs(analytic[0]))
        errs = gradient_errors(analytic, finite_difference_gradient(phi, ds.history))
        err = float(np.max(errs))
    else:
        err = check_gradient(phi, ds.history)
    ok = err <= GRAD_CHECK_RTOL
    print(json.dumps({"max_relative_error": err, "parameters": int(phi.values.size), "layout": layout, "ok": ok}))
    return 0 if ok else 1


def cmd_backtest(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    bcfg = backtest_config(cfg)
    excl = list(ds.exclusions.sorted())
    if bcfg.mode == "rolling":
        data = ds.trading if cfg.simulation is None else _rolling_slice(cfg, ds)
        report = run_backtest(data, None, bcfg, excl)
    else:
        params = policy_params(cfg, ds)
        if ds.truth is not None:
            theta, _ = effective_weather(ds.trading, bcfg.weather_mode)
            report = run_simulated_backtest(ds.truth, theta, bcfg, params, ds.trading.dates)
        else:
            report = run_backtest(ds.trading, params, bcfg, excl)
    report.config = {"run": config_echo(cfg), "backtest": report.config}
    out = Path(cfg.out)
    write_report(report, out)
    s = summarize(report)
    print(f"paths {s['paths']}  days {len(report.dates)}  w {s['w']:.6f}")
    print(f"terminal wealth mean {s['mean']:.6f}  sd {math.sqrt(s['variance']):.6f}  median {s['median']:.6f}")
    print(f"mc standard error {s['mc_standard_error']:.6f}  mean max drawdown {s['mean_max_drawdown']:.6f}")
    print(f"mean-variance objective {s['mean_variance_objective']:.6f}")
    if report.degenerate_dates:
        flat = ", ".join(d.isoformat() for d in report.degenerate_dates)
        print(f"flat (degenerate drift) days: {flat}")
    print(f"-> {out / 'report.json'}, {out / 'wealth_paths.csv'}")
    return 0


def _rolling_slice(cfg: RunConfig, ds: Dataset) -> TrainingSet:
    # the last `window` history days followed by the trading days
    w = cfg.backtest.window
    if ds.history.T < w:
        raise ConfigError(f"history_days={ds.history.T} is shorter than the backtest window {w}")
    h = ds.history.take(slice(ds.history.T - w, ds.history.T))
    return TrainingSet(
        h.dates + ds.trading.dates,
        h.node_ids,
        h.variables,
        np.concatenate([h.weather, ds.trading.weather]),
        np.concatenate([h.diffs, ds.trading.diffs]),
        h.hour,
    )


def cmd_policy(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    bcfg = backtest_config(cfg)
    try:
        day = date.fromisoformat(args.date)
    except ValueError:
        raise InputError(f"--date {args.date!r} is not an ISO date") from None
    if bcfg.mode == "rolling":
        data = ds.trading if cfg.simulation is None else _rolling_slice(cfg, ds)
        plan, _ = plan_rolling(data, bcfg)
    else:
        plan = plan_fixed(ds.trading, policy_params(cfg, ds), bcfg)
    if day not in plan.dates:
        raise InputError(f"date {day} is not a trading day of this run")
    d = plan.dates.index(day)
    X = float(args.wealth)
    if plan.active[d]:
        mean = -plan.slope[d] * (X - plan.w[d])
        cov_diag = plan.policy_cov_diag[d]
        w = float(plan.w[d])
    else:
        mean = np.zeros(plan.slope.shape[1])
        cov_diag = np.zeros(plan.slope.shape[1])
        w = None
    nodes = list(ds.trading.node_ids)
    payload = {
        "date": day.isoformat(),
        "wealth": X,
        "t": float(plan.times[d]),
        "horizon": float(plan.horizon),
        "w": w,
        "degenerate": not bool(plan.active[d]),
        "nodes": nodes,
        "mean": [float(x) for x in mean],
        "covariance_diagonal": [float(x) for x in cov_diag],
    }
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"date {payload['date']}  wealth {X!r}  t {payload['t']!r} of {payload['horizon']!r}  w {w!r}")
        if payload["degenerate"]:
            print("degenerate drift: flat position")
        for node, m, v in zip(nodes, payload["mean"], payload["covariance_diagonal"]):
            print(f"{node}  mean {m!r}  var {v!r}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "check-grad": cmd_check_grad,
    "backtest": cmd_backtest,
    "policy": cmd_policy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--gamma", type=float)
    common.add_argument("--z", type=float)
    common.add_argument("--hour", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--method", choices=("ols", "grad"))

    parser = argparse.ArgumentParser(prog="virtualbid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="CSV files -> training_set.csv + exclusions.csv")
    sub.add_parser("simulate", parents=[common], help="write a synthetic CSV corpus and truth.json")
    sub.add_parser("fit", parents=[common], help="estimate drift and covariance -> params.json")
    cg = sub.add_parser("check-grad", parents=[common], help="analytic vs finite-difference likelihood gradient")
    cg.add_argument("--at", choices=("init", "perturbed"), default="perturbed")
    cg.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    sub.add_parser("backtest", parents=[common], help="Monte Carlo backtest -> report.json + wealth_paths.csv")
    pol = sub.add_parser("policy", parents=[common], help="policy mean and variance for one day")
    pol.add_argument("--wealth", type=float, required=True)
    pol.add_argument("--date", required=True)
    pol.add_argument("--json", action="store_true")
    return parser


def _error_line(exc: BaseException, code: int) -> str:
    info = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    for attr in ("path", "line", "column", "node"):
        if hasattr(exc, attr):
            info[attr] = getattr(exc, attr)
    return json.dumps(info, default=str)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: getattr(args, k) for k in ("seed", "paths", "gamma", "z", "hour", "out", "method")}
    try:
        cfg = load_config(args.config, flags)
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        print(_error_line(exc, 2), file=sys.stderr)
        return 2
    except (OSError, UnicodeDecodeError) as exc:
        print(_error_line(exc, 2), file=sys.stderr)
        return 2
    except (VirtualBidError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(_error_line(exc, 1), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
