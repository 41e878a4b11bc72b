"""Entropy-regularized (exploratory) mean-variance bidding policy.

Allocations ``q`` are dollar positions per node; a positive entry gains when
the day-ahead log price exceeds the real-time one, so wealth moves by
``q^T (b dt + sigma dW)``. Minimising ``E[(X_T - w)^2] - (w - z)^2`` with an
entropy bonus of temperature ``gamma`` gives a Gaussian policy in closed form:

    mean = -S^-1 b (X_t - w)
    cov  = gamma/2 * S^-1 * exp(rho (T - t)),      rho = b^T S^-1 b
    w    = (z e^{rho T} - X_0) / (e^{rho T} - 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDrift, DimensionMismatch
from .market_model import cholesky

RHO_FLOOR = 1e-12


@dataclass(frozen=True)
class ObjectiveConfig:
    z: float = 105.0
    gamma: float = 0.001
    X0: float = 100.0
    T: float = 1.0
    rho_floor: float = RHO_FLOOR

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        for name in ("z", "X0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=float)
        c = np.array(self.covariance, dtype=float)
        if m.ndim != 1 or c.shape != (m.size, m.size):
            raise DimensionMismatch("GaussianPolicy", (m.size, m.size), c.shape)
        if not np.all(np.isfinite(m)):
            raise ValueError("policy mean is not finite")
        chol = cholesky(c, "policy covariance")
        for a in (m, c, chol):
            a.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", c)
        object.__setattr__(self, "_chol", chol)

    @property
    def n(self) -> int:
        return self.mean.size

    def cholesky(self) -> np.ndarray:
        return self._chol


@dataclass(frozen=True, eq=False)
class Allocation:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("allocation is not finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class WealthState:
    X: float
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("elapsed time must be nonnegative")


def _solve_spd(A: np.ndarray, rhs: np.ndarray, context: str) -> tuple[np.ndarray, np.ndarray]:
    C = cholesky(A, context)
    x = np.linalg.solve(C.T, np.linalg.solve(C, rhs))
    return x, C


def _spd_inverse(A: np.ndarray, context: str) -> np.ndarray:
    inv, _ = _solve_spd(A, np.eye(A.shape[0]), context)
    return 0.5 * (inv + inv.T)


def gaussian_quadratic_minimizer(a, A, gamma: float) -> GaussianPolicy:
    """Density minimising ``E[a^T q + q^T A q / 2] + gamma * E[log pi]``.

    The minimiser is ``N(-A^-1 a, gamma A^-1)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (a.size, a.size):
        raise DimensionMismatch("A", (a.size, a.size), A.shape)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    A_inv = _spd_inverse(A, "quadratic coefficient")
    mean, _ = _solve_spd(A, -a, "quadratic coefficient")
    return GaussianPolicy(mean, gamma * A_inv)


def signal_strength(b, sigma) -> float:
    """``rho = b^T S^-1 b``."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    if S.shape != (b.size, b.size):
        raise DimensionMismatch("covariance", (b.size, b.size), S.shape)
    x, _ = _solve_spd(S, b, "price covariance")
    return float(b @ x)


def _multiplier(rho: float, cfg: ObjectiveConfig) -> float:
    if not rho > cfg.rho_floor:
        raise DegenerateDrift(rho, cfg.rho_floor)
    # (z e^{rho T} - X0) / (e^{rho T} - 1) written as X0 + (z - X0) / (1 - e^{-rho T}):
    # finite for large rho T and free of cancellation for small rho T
    return cfg.X0 + (cfg.z - cfg.X0) / -math.expm1(-rho * cfg.T)


def lagrange_multiplier(b, sigma, cfg: ObjectiveConfig) -> float:
    return _multiplier(signal_strength(b, sigma), cfg)


@dataclass(frozen=True, eq=False)
class PolicyCoefficients:
    """Wealth-independent pieces of the closed form: ``mean = -slope * (X - w)``."""

    slope: np.ndarray
    rho: float
    w: float
    covariance: np.ndarray

    def mean(self, X: float) -> np.ndarray:
        return -self.slope * (X - self.w)


def policy_coefficients(b, sigma, t: float, cfg: ObjectiveConfig) -> PolicyCoefficients:
    b = np.atleast_1d(np.asarray(b, dtype=float))
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    if S.shape != (b.size, b.size):
        raise DimensionMismatch("covariance", (b.size, b.size), S.shape)
    if t > cfg.T:
        raise ValueError(f"t={t} is past the horizon T={cfg.T}")
    slope, _ = _solve_spd(S, b, "price covariance")
    rho = float(b @ slope)
    w = _multiplier(rho, cfg)
    scale = cfg.gamma / 2.0 * math.exp(rho * (cfg.T - t))
    return PolicyCoefficients(slope, rho, w, scale * _spd_inverse(S, "price covariance"))


def optimal_policy(b, sigma, state: WealthState, cfg: ObjectiveConfig) -> GaussianPolicy:
    """Closed-form exploratory policy for drift ``b`` and covariance ``sigma`` at ``state``."""
    c = policy_coefficients(b, sigma, state.t, cfg)
    return GaussianPolicy(c.mean(state.X), c.covariance)


def sample_allocation(policy: GaussianPolicy, rng: np.random.Generator) -> Allocation:
    """``mean + L xi`` with ``L`` the Cholesky factor and ``xi`` standard normal."""
    xi = rng.standard_normal(policy.n)
    return Allocation(policy.mean + policy.cholesky() @ xi)


def wealth_moments(policy: GaussianPolicy, b, sigma, dt: float) -> tuple[float, float]:
    """Expected wealth increment and its second moment under ``policy`` over ``dt``."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    if b.size != policy.n or S.shape != (policy.n, policy.n):
        raise DimensionMismatch("wealth_moments", (policy.n, policy.n), S.shape)
    m = policy.mean
    mean_inc = float(b @ m) * dt
    second = (float(m @ S @ m) + float(np.sum(S * policy.covariance.T))) * dt
    return mean_inc, second
