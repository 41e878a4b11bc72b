"""Virtual bidding in two-settlement electricity markets with an exploratory mean-variance policy."""

from .backtest import BacktestConfig, BacktestReport, run_backtest, run_simulated_backtest, summarize
from .errors import InputError, NumericError, VirtualBidError
from .estimation import EstimatorConfig, TrainingSet, fit, fit_gradient_ascent, fit_ols, likelihood_gradient
from .market_model import CovarianceModel, DriftParams, MarketParams, NodeSet
from .policy import ObjectiveConfig, WealthState, optimal_policy, sample_allocation

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "run_backtest",
    "run_simulated_backtest",
    "summarize",
    "InputError",
    "NumericError",
    "VirtualBidError",
    "EstimatorConfig",
    "TrainingSet",
    "fit",
    "fit_gradient_ascent",
    "fit_ols",
    "likelihood_gradient",
    "CovarianceModel",
    "DriftParams",
    "MarketParams",
    "NodeSet",
    "ObjectiveConfig",
    "WealthState",
    "optimal_policy",
    "sample_allocation",
]
