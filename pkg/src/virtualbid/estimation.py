"""Maximum-likelihood fitting of the price-difference model.

The parameter vector ``phi`` is laid out as the flattened ``n x (k+1)`` drift
coefficient matrix, optionally followed by the lower triangle of a Cholesky
factor ``L`` of the covariance (``Sigma = L L^T``) with diagonal entries stored
as logarithms. When the covariance is held fixed only the drift part is free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    Diverged,
    InsufficientHistory,
    NotPositiveDefinite,
    SingularDesign,
)
from .market_model import (
    ABSOLUTE_RIDGE_FLOOR,
    CovarianceModel,
    DriftParams,
    MarketParams,
    MeteoMatrix,
    PriceDiffVector,
    cholesky,
    default_ridge,
    drift_design,
    eval_drift,
)

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_WINDOW = 60
FD_REL_STEP = 1e-5
GRAD_CHECK_RTOL = 1e-6
GRAD_CHECK_ATOL = 1e-9


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Aligned daily samples ``(theta_t, f_t)``.

    Stored as stacked arrays: ``weather`` has shape ``(T, n, k)`` and
    ``diffs`` has shape ``(T, n)``.
    """

    dates: tuple[date, ...]
    node_ids: tuple[str, ...]
    variables: tuple[str, ...]
    weather: np.ndarray
    diffs: np.ndarray
    hour: int = 0

    def __post_init__(self):
        w = np.array(self.weather, dtype=float)
        f = np.array(self.diffs, dtype=float)
        dates = tuple(self.dates)
        T = len(dates)
        n, k = len(self.node_ids), len(self.variables)
        if w.shape != (T, n, k):
            raise DimensionMismatch("TrainingSet.weather", (T, n, k), w.shape)
        if f.shape != (T, n):
            raise DimensionMismatch("TrainingSet.diffs", (T, n), f.shape)
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("TrainingSet dates must be strictly increasing")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(f))):
            raise ValueError("TrainingSet contains non-finite values")
        w.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "weather", w)
        object.__setattr__(self, "diffs", f)

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def k(self) -> int:
        return len(self.variables)

    def __len__(self) -> int:
        return self.T

    @property
    def days(self) -> list[tuple[MeteoMatrix, PriceDiffVector]]:
        return [
            (MeteoMatrix(d, self.hour, self.weather[t]), PriceDiffVector(d, self.hour, self.diffs[t]))
            for t, d in enumerate(self.dates)
        ]

    @classmethod
    def from_days(
        cls,
        days: Sequence[tuple[MeteoMatrix, PriceDiffVector]],
        node_ids: Sequence[str],
        variables: Sequence[str],
    ) -> "TrainingSet":
        if not days:
            n, k = len(node_ids), len(variables)
            return cls((), tuple(node_ids), tuple(variables), np.zeros((0, n, k)), np.zeros((0, n)))
        for m, p in days:
            if m.day != p.day:
                raise ValueError(f"weather dated {m.day} paired with prices dated {p.day}")
        return cls(
            dates=tuple(m.day for m, _ in days),
            node_ids=tuple(node_ids),
            variables=tuple(variables),
            weather=np.stack([m.values for m, _ in days]),
            diffs=np.stack([p.values for _, p in days]),
            hour=days[0][0].hour,
        )

    def take(self, index) -> "TrainingSet":
        """Sub-select days by slice or sorted integer index."""
        idx = np.arange(self.T)[index]
        return TrainingSet(
            tuple(self.dates[i] for i in idx),
            self.node_ids,
            self.variables,
            self.weather[idx],
            self.diffs[idx],
            self.hour,
        )


def _arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, TrainingSet):
        return data.weather, data.diffs
    weather, diffs = data
    return np.asarray(weather, dtype=float), np.asarray(diffs, dtype=float)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParamLayout:
    n: int
    k: int
    covariance: Literal["fixed", "cholesky"] = "cholesky"
    fixed_covariance: np.ndarray | None = None

    def __post_init__(self):
        if self.covariance not in ("fixed", "cholesky"):
            raise ValueError(f"unknown covariance layout {self.covariance!r}")
        if self.covariance == "fixed":
            if self.fixed_covariance is None:
                raise ValueError("fixed covariance layout needs fixed_covariance")
            cov = self.fixed_covariance
            if isinstance(cov, CovarianceModel):
                cov = cov.ridged()
            cov = np.array(cov, dtype=float)
            if cov.shape != (self.n, self.n):
                raise DimensionMismatch("fixed_covariance", (self.n, self.n), cov.shape)
            cov.setflags(write=False)
            object.__setattr__(self, "fixed_covariance", cov)

    @property
    def n_drift(self) -> int:
        return self.n * (self.k + 1)

    @property
    def n_cov(self) -> int:
        return self.n * (self.n + 1) // 2 if self.covariance == "cholesky" else 0

    @property
    def size(self) -> int:
        return self.n_drift + self.n_cov

    @property
    def drift_slice(self) -> slice:
        return slice(0, self.n_drift)

    @property
    def cov_slice(self) -> slice:
        return slice(self.n_drift, self.size)

    def tril(self) -> tuple[np.ndarray, np.ndarray]:
        return np.tril_indices(self.n)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.shape != (self.layout.size,):
            raise DimensionMismatch("ParamVector.values", (self.layout.size,), v.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def drift(self) -> DriftParams:
        return DriftParams(self.values[self.layout.drift_slice].reshape(self.layout.n, self.layout.k + 1))

    def cholesky_factor(self) -> np.ndarray:
        lay = self.layout
        if lay.covariance == "fixed":
            return cholesky(lay.fixed_covariance, "fixed covariance")
        rows, cols = lay.tril()
        L = np.zeros((lay.n, lay.n))
        L[rows, cols] = self.values[lay.cov_slice]
        d = np.diag_indices(lay.n)
        L[d] = np.exp(L[d])
        return L

    def covariance(self) -> np.ndarray:
        if self.layout.covariance == "fixed":
            return np.array(self.layout.fixed_covariance)
        L = self.cholesky_factor()
        return L @ L.T

    def unpack(self) -> tuple[DriftParams, np.ndarray]:
        return self.drift(), self.covariance()

    def market_params(self, ridge: float | None = 0.0) -> MarketParams:
        return MarketParams(self.drift(), CovarianceModel(_symmetrize(self.covariance()), ridge=ridge))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)


def pack(drift: DriftParams, layout: ParamLayout, covariance: np.ndarray | None = None) -> ParamVector:
    """Flatten drift (and, for the Cholesky layout, a covariance) into a ParamVector."""
    if (drift.n, drift.k) != (layout.n, layout.k):
        raise DimensionMismatch("drift", (layout.n, layout.k + 1), drift.coefficients.shape)
    parts = [drift.coefficients.ravel()]
    if layout.covariance == "cholesky":
        if covariance is None:
            raise ValueError("Cholesky layout needs a covariance to pack")
        L = np.array(cholesky(covariance, "pack"))
        d = np.diag_indices(layout.n)
        L[d] = np.log(L[d])
        parts.append(L[layout.tril()])
    return ParamVector(np.concatenate(parts), layout)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


# ---------------------------------------------------------------------------
# likelihood and gradient
# ---------------------------------------------------------------------------


def _residuals(phi: ParamVector, weather: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    drift = phi.drift()
    if weather.shape[1:] != (drift.n, drift.k):
        raise DimensionMismatch("weather", (drift.n, drift.k), weather.shape[1:])
    return diffs - eval_drift(drift, weather)


def log_likelihood(phi: ParamVector, data) -> float:
    """Exact Gaussian log-likelihood summed over days."""
    weather, diffs = _arrays(data)
    T, n = diffs.shape
    sigma = phi.covariance()
    C = cholesky(sigma, "log_likelihood covariance")
    logdet = 2.0 * float(np.sum(np.log(np.diag(C))))
    R = _residuals(phi, weather, diffs)
    Z = np.linalg.solve(C, R.T)  # C^{-1} r_t as columns
    quad = np.sum(Z * Z, axis=0)
    per_day = -0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * quad
    return float(np.sum(per_day))


def covariance_derivatives(phi: ParamVector) -> list[np.ndarray]:
    """``dSigma/dphi_j`` for every covariance parameter, in layout order."""
    lay = phi.layout
    if lay.covariance == "fixed":
        return []
    L = phi.cholesky_factor()
    out = []
    for a, b in zip(*lay.tril()):
        E = np.zeros((lay.n, lay.n))
        E[a, b] = 1.0
        dS = E @ L.T + L @ E.T
        if a == b:
            dS *= L[a, a]  # diagonal entries are stored as logs
        out.append(dS)
    return out


def likelihood_gradient(phi: ParamVector, data) -> ParamVector:
    """Analytic gradient of :func:`log_likelihood` with respect to ``phi``.

    Per day the contribution is

        -1/2 tr(S^-1 dS) + (db)^T S^-1 r + 1/2 r^T S^-1 dS S^-1 r

    with ``r = f - b``. The covariance terms vanish for a fixed covariance.
    """
    lay = phi.layout
    weather, diffs = _arrays(data)
    T = diffs.shape[0]
    sigma = phi.covariance()
    C = cholesky(sigma, "likelihood_gradient covariance")
    R = _residuals(phi, weather, diffs)
    # U[t] = S^{-1} r_t
    U = np.linalg.solve(C.T, np.linalg.solve(C, R.T)).T

    # db_i/dcoef_{i,:} is the design row (1, theta_t^i); other nodes do not depend on it
    X = drift_design(weather)
    g_drift = np.einsum("ti,tij->ij", U, X)

    grad = np.empty(lay.size)
    grad[lay.drift_slice] = g_drift.ravel()
    if lay.covariance == "cholesky":
        sigma_inv = np.linalg.solve(C.T, np.linalg.solve(C, np.eye(lay.n)))
        UU = U.T @ U
        g_cov = []
        for dS in covariance_derivatives(phi):
            trace_term = -0.5 * T * float(np.sum(sigma_inv * dS.T))
            quad_term = 0.5 * float(np.sum(dS * UU))
            g_cov.append(trace_term + quad_term)
        grad[lay.cov_slice] = g_cov
    return ParamVector(grad, lay)


def finite_difference_gradient(phi: ParamVector, data, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |phi_j|)``."""
    base = np.array(phi.values)
    out = np.empty_like(base)
    for j in range(base.size):
        h = rel_step * max(1.0, abs(base[j]))
        up, dn = base.copy(), base.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (log_likelihood(phi.with_values(up), data) - log_likelihood(phi.with_values(dn), data)) / (
            (base[j] + h) - (base[j] - h)
        )
    return out


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, atol: float = GRAD_CHECK_ATOL) -> np.ndarray:
    """Componentwise relative error; differences at or below ``atol`` count as zero."""
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff <= atol, 0.0, diff / scale)
    return rel


def check_gradient(phi: ParamVector, data, rel_step: float = FD_REL_STEP) -> float:
    """Max componentwise relative error between analytic and finite-difference gradients."""
    errs = gradient_errors(likelihood_gradient(phi, data).values, finite_difference_gradient(phi, data, rel_step))
    return float(np.max(errs)) if errs.size else 0.0


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    learning_rate: float = 1.0
    max_iters: int = 10_000
    grad_tolerance: float | None = None  # None: 1e-6 * T
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.grad_tolerance is not None and not self.grad_tolerance > 0:
            raise ValueError("grad_tolerance must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def tolerance_for(self, T: int) -> float:
        return self.grad_tolerance if self.grad_tolerance is not None else 1e-6 * T


@dataclass
class FitResult:
    params: ParamVector
    trace: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    grad_norm: float = float("nan")

    def __iter__(self):
        # allows ``phi, trace = fit_gradient_ascent(...)``
        return iter((self.params, self.trace))


def _safe_loglik(phi: ParamVector, data) -> float:
    try:
        return log_likelihood(phi, data)
    except (NotPositiveDefinite, ValueError, FloatingPointError):
        return -math.inf


def fit_gradient_ascent(phi0: ParamVector, data, cfg: EstimatorConfig) -> FitResult:
    """Gradient ascent ``phi <- phi + alpha * dH/dphi`` with step halving.

    A trial step is accepted only if the likelihood does not decrease;
    otherwise ``alpha`` is halved and the reduced value is kept for later
    iterations. Every likelihood evaluation of a trial point counts toward
    ``max_iters``.
    """
    weather, diffs = _arrays(data)
    T = diffs.shape[0]
    tol = cfg.tolerance_for(T)
    phi = phi0
    with np.errstate(over="ignore", invalid="ignore"):
        H = _safe_loglik(phi, data)
    if not math.isfinite(H):
        raise Diverged("log-likelihood is not finite at the starting point", last_finite=None, iteration=0)
    trace = [(0, H)]
    alpha = cfg.learning_rate
    it = 0
    converged = False
    gnorm = math.inf
    while True:
        g = likelihood_gradient(phi, data).values
        if not np.all(np.isfinite(g)):
            raise Diverged("gradient is not finite", last_finite=phi, iteration=it)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= tol:
            converged = True
            break
        if it >= cfg.max_iters:
            break
        accepted = False
        while it < cfg.max_iters:
            it += 1
            with np.errstate(over="ignore", invalid="ignore"):
                trial_values = phi.values + alpha * g
                if not np.all(np.isfinite(trial_values)):
                    H_trial = -math.inf
                else:
                    trial = phi.with_values(trial_values)
                    H_trial = _safe_loglik(trial, data)
            if math.isfinite(H_trial) and H_trial >= H:
                phi, H = trial, H_trial
                trace.append((it, H))
                accepted = True
                break
            alpha *= 0.5
            if alpha == 0.0:
                break
        if not accepted:
            break
    return FitResult(phi, trace, converged, it, gnorm)


def fit_ols(data) -> DriftParams:
    """Per-node least squares of ``f_t^i`` on ``(1, theta_t^i)``."""
    weather, diffs = _arrays(data)
    T, n, k = weather.shape
    node_ids = data.node_ids if isinstance(data, TrainingSet) else [str(i) for i in range(n)]
    if T < k + 1:
        raise InsufficientHistory(k + 1, T)
    X = drift_design(weather)
    coef = np.empty((n, k + 1))
    for i in range(n):
        Xi = X[:, i, :]
        sol, _, rank, _ = np.linalg.lstsq(Xi, diffs[:, i], rcond=None)
        if rank < k + 1:
            raise SingularDesign(node_ids[i], int(rank), k + 1)
        coef[i] = sol
    return DriftParams(coef)


def trailing_covariance(
    residuals: Iterable[np.ndarray] | np.ndarray, window: int = DEFAULT_WINDOW, ridge: float | None = None
) -> CovarianceModel:
    """Sample covariance (denominator ``window - 1``) of the last ``window`` residual vectors.

    With ``ridge=None`` the ridge is ``1e-8 * trace / n``, floored at 1e-12 so a
    zero sample covariance still yields a valid model.
    """
    R = np.asarray(list(residuals) if not isinstance(residuals, np.ndarray) else residuals, dtype=float)
    if window < 2:
        raise ValueError("window must be at least 2")
    if R.ndim != 2 or R.shape[0] < window:
        raise InsufficientHistory(window, R.shape[0] if R.ndim == 2 else 0)
    W = R[-window:]
    D = W - W.mean(axis=0)
    S = _symmetrize(D.T @ D / (window - 1))
    if ridge is None:
        ridge = max(default_ridge(S), ABSOLUTE_RIDGE_FLOOR)
    return CovarianceModel(S, ridge=ridge)


def drift_residuals(drift: DriftParams, data) -> np.ndarray:
    weather, diffs = _arrays(data)
    return diffs - eval_drift(drift, weather)


def initial_params(
    data,
    layout: Literal["drift_only", "full"] = "full",
    window: int = DEFAULT_WINDOW,
    covariance_input: Literal["residuals", "raw"] = "residuals",
    fixed_covariance: np.ndarray | None = None,
) -> ParamVector:
    """OLS drift plus a trailing-window covariance.

    For ``layout="drift_only"`` the covariance is frozen; unless given it is the
    diagonal of the trailing covariance, which makes the OLS drift the exact
    likelihood maximiser.
    """
    weather, diffs = _arrays(data)
    T, n, k = weather.shape
    drift = fit_ols(data)
    if covariance_input not in ("residuals", "raw"):
        raise ValueError(f"unknown covariance input {covariance_input!r}")
    source = drift_residuals(drift, data) if covariance_input == "residuals" else diffs
    cov = trailing_covariance(source, window=min(window, T) if T >= 2 else window).ridged()
    if layout == "drift_only":
        fixed = np.diag(np.diag(cov)) if fixed_covariance is None else fixed_covariance
        return pack(drift, ParamLayout(n, k, "fixed", fixed))
    if layout == "full":
        return pack(drift, ParamLayout(n, k, "cholesky"), _symmetrize(cov))
    raise ValueError(f"unknown layout {layout!r}")


def fit(
    data,
    method: Literal["ols", "grad"] = "ols",
    layout: Literal["drift_only", "full"] = "drift_only",
    cfg: EstimatorConfig | None = None,
    window: int = DEFAULT_WINDOW,
    covariance_input: Literal["residuals", "raw"] = "residuals",
) -> FitResult:
    """Fit drift (and optionally covariance) starting from the OLS/trailing initialisation."""
    cfg = cfg or EstimatorConfig()
    phi0 = initial_params(data, layout, window, covariance_input)
    if method == "ols":
        return FitResult(phi0, [(0, log_likelihood(phi0, data))], True, 0, float("nan"))
    if method == "grad":
        return fit_gradient_ascent(phi0, data, cfg)
    raise ValueError(f"unknown method {method!r}")
