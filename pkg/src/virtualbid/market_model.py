"""Price-difference model: weather-linear drift plus a constant covariance.

For a fixed delivery hour, the per-node difference between day-ahead and
real-time log LMPs on day ``t`` is modelled as

    f_t = b(theta_t) + sigma dW_t,     Sigma = sigma sigma^T

where ``theta_t`` is the ``n x k`` matrix of weather observations. Only the
product ``Sigma`` is ever stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonpositivePrice, NotPositiveDefinite

DEFAULT_PRICE_FLOOR = 0.01
RELATIVE_RIDGE = 1e-8
ABSOLUTE_RIDGE_FLOOR = 1e-12
SYMMETRY_RTOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NodeSet:
    node_ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(str(x) for x in self.node_ids)
        if not ids:
            raise ValueError("NodeSet must contain at least one node")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate node identifiers in {ids}")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "_index", {nid: i for i, nid in enumerate(ids)})

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def index(self, node_id: str) -> int:
        return self._index[node_id]

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def __iter__(self):
        return iter(self.node_ids)

    def __len__(self):
        return len(self.node_ids)


@dataclass(frozen=True)
class MeteoMatrix:
    """Weather at every node for one day and hour; row ``i`` is node ``i``."""

    day: date
    hour: int
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise DimensionMismatch("MeteoMatrix.values", "(n, k)", v.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite weather value on {self.day}")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour {self.hour} outside 0..23")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PriceDiffVector:
    day: date
    hour: int
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1:
            raise DimensionMismatch("PriceDiffVector.values", "(n,)", v.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite price difference on {self.day}")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour {self.hour} outside 0..23")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DriftParams:
    """Per-node linear drift. Column 0 is the intercept, columns 1..k the weather slopes."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = _frozen(self.coefficients)
        if c.ndim != 2 or c.shape[1] < 1:
            raise DimensionMismatch("DriftParams.coefficients", "(n, k+1)", c.shape)
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite drift coefficient")
        object.__setattr__(self, "coefficients", c)

    @property
    def n(self) -> int:
        return self.coefficients.shape[0]

    @property
    def k(self) -> int:
        return self.coefficients.shape[1] - 1

    @property
    def intercepts(self) -> np.ndarray:
        return self.coefficients[:, 0]

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[:, 1:]

    @classmethod
    def zeros(cls, n: int, k: int) -> "DriftParams":
        return cls(np.zeros((n, k + 1)))

    def __add__(self, other: "DriftParams") -> "DriftParams":
        return DriftParams(self.coefficients + other.coefficients)

    def __mul__(self, scalar: float) -> "DriftParams":
        return DriftParams(scalar * self.coefficients)

    __rmul__ = __mul__


def smallest_pivot(matrix: np.ndarray) -> float:
    """Run an unpivoted Cholesky and return the first non-positive pivot (or the minimum)."""
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    L = np.zeros_like(a)
    pivots = []
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        pivots.append(d)
        if not d > 0:
            return float(d)
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return float(min(pivots)) if pivots else float("nan")


def cholesky(matrix: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefinite with the failing pivot."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(context or "matrix", "(n, n)", m.shape)
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite(float("nan"), context or "non-finite matrix")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(smallest_pivot(m), context) from None


def default_ridge(matrix: np.ndarray) -> float:
    m = np.asarray(matrix, dtype=float)
    return max(RELATIVE_RIDGE * float(np.trace(m)) / m.shape[0], 0.0)


@dataclass(frozen=True)
class CovarianceModel:
    """Constant SPD covariance ``Sigma`` with a diagonal ridge.

    ``ridge=None`` picks ``1e-8 * trace(Sigma) / n``.
    """

    matrix: np.ndarray
    ridge: float | None = None

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch("CovarianceModel.matrix", "(n, n)", m.shape)
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
            raise ValueError("covariance matrix is not symmetric")
        ridge = default_ridge(m) if self.ridge is None else float(self.ridge)
        if ridge < 0 or not math.isfinite(ridge):
            raise ValueError(f"ridge must be finite and nonnegative, got {ridge}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "ridge", ridge)
        chol = cholesky(self.ridged(), "CovarianceModel")
        chol.setflags(write=False)
        object.__setattr__(self, "_chol", chol)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def ridged(self) -> np.ndarray:
        if self.ridge == 0.0:
            return np.array(self.matrix)
        return self.matrix + self.ridge * np.eye(self.n)

    def cholesky(self) -> np.ndarray:
        return self._chol


@dataclass(frozen=True)
class MarketParams:
    drift: DriftParams
    covariance: CovarianceModel

    def __post_init__(self):
        if self.drift.n != self.covariance.n:
            raise DimensionMismatch("MarketParams", (self.drift.n, self.drift.n), self.covariance.matrix.shape)

    @property
    def n(self) -> int:
        return self.drift.n

    @property
    def k(self) -> int:
        return self.drift.k


def _weather_array(weather) -> np.ndarray:
    if isinstance(weather, MeteoMatrix):
        return weather.values
    return np.asarray(weather, dtype=float)


def eval_drift(params: DriftParams, weather) -> np.ndarray:
    """Drift ``b_i = intercept_i + sum_j slope_ij * theta_ij``.

    ``weather`` may be a MeteoMatrix, an ``(n, k)`` array, or a stack of shape
    ``(..., n, k)``; the result has the matching leading shape.
    """
    theta = _weather_array(weather)
    if theta.shape[-2:] != (params.n, params.k):
        raise DimensionMismatch("weather", (params.n, params.k), theta.shape[-2:])
    out = params.intercepts + np.einsum("...ij,ij->...i", theta, params.slopes)
    if not np.all(np.isfinite(out)):
        raise ValueError("drift evaluated to a non-finite value")
    return out


def eval_covariance(params: CovarianceModel) -> np.ndarray:
    return params.ridged()


def log_price_diff(da_price: float, rt_price: float, price_floor: float = DEFAULT_PRICE_FLOOR) -> float:
    """``log(da) - log(rt)``; prices at or below the floor are rejected."""
    for p in (da_price, rt_price):
        if not p > price_floor:
            raise NonpositivePrice(p, price_floor)
    return math.log(da_price) - math.log(rt_price)


def drift_design(weather: np.ndarray) -> np.ndarray:
    """Prepend the intercept column: ``(..., n, k) -> (..., n, k+1)``."""
    theta = np.asarray(weather, dtype=float)
    ones = np.ones(theta.shape[:-1] + (1,))
    return np.concatenate([ones, theta], axis=-1)


def as_node_set(nodes: Sequence[str] | NodeSet) -> NodeSet:
    return nodes if isinstance(nodes, NodeSet) else NodeSet(tuple(nodes))


__all__ = [
    "NodeSet",
    "MeteoMatrix",
    "PriceDiffVector",
    "DriftParams",
    "CovarianceModel",
    "MarketParams",
    "eval_drift",
    "eval_covariance",
    "log_price_diff",
    "cholesky",
    "drift_design",
    "as_node_set",
    "DEFAULT_PRICE_FLOOR",
]
