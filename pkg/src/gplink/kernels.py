"""Separable correlation kernels and their Gaussian moment integrals.

A kernel is a product over input dimensions of one-dimensional correlation
functions k_d. Two families are supported:

    squared-exponential   k_d(h) = exp(-h^2 / gamma_d^2)
    matern-2.5            k_d(h) = (1 + a + a^2/3) exp(-a),  a = sqrt(5) h / gamma_d

A nugget eta is added whenever two input rows are exactly equal (so the
diagonal of a correlation matrix is 1 + eta).

xi and zeta are the first and second moments of the squared-exponential
kernel against a normal input; they are what lets a GP node consume the
normal output of an upstream node in closed form. Closed forms for the
Matern family are not provided, which is why validation restricts that
family to nodes whose inputs are never stochastic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .accel import MATERN25, SQEXP, corr_matrix_impl, cross_corr_impl
from .exceptions import ValidationError

__all__ = [
    "SQUARED_EXPONENTIAL",
    "MATERN_2_5",
    "FAMILIES",
    "KernelConfig",
    "corr_matrix",
    "cross_corr",
    "xi",
    "zeta",
]

SQUARED_EXPONENTIAL = "squared-exponential"
MATERN_2_5 = "matern-2.5"

FAMILIES = {SQUARED_EXPONENTIAL: SQEXP, MATERN_2_5: MATERN25}

ETA_MAX = 1e6


@dataclass
class KernelConfig:
    """Kernel family plus its per-dimension lengthscales and nugget.

    Args:
        family: one of SQUARED_EXPONENTIAL, MATERN_2_5.
        gamma: positive lengthscale per input dimension, shape (D,).
        eta: nugget in [0, 1e6], added on exactly-equal input rows.
    """

    family: str = SQUARED_EXPONENTIAL
    gamma: np.ndarray = field(default_factory=lambda: np.ones(1))
    eta: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family: {self.family!r}")
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if self.gamma.ndim != 1:
            raise ValidationError("gamma must be a 1-D array of lengthscales")
        if not np.all(np.isfinite(self.gamma)) or np.any(self.gamma <= 0.0):
            raise ValidationError("lengthscales must be finite and positive")
        self.eta = float(self.eta)
        if not (0.0 <= self.eta <= ETA_MAX) or not math.isfinite(self.eta):
            raise ValidationError(f"eta must lie in [0, {ETA_MAX:g}]")

    @property
    def ndim(self):
        return self.gamma.shape[0]

    @property
    def family_code(self):
        return FAMILIES[self.family]


def _check_inputs(X, config, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[1] != config.ndim:
        raise ValidationError(
            f"{name} has {X.shape[1]} columns but config has {config.ndim} lengthscales"
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def corr_matrix(X, config):
    """Correlation matrix of the design rows, shape (M, M).

    The diagonal is 1 + eta; any pair of exactly equal rows also receives
    the nugget. Symmetric by construction.
    """
    X = _check_inputs(X, config)
    return corr_matrix_impl(X, config.gamma, config.eta, config.family_code)


def cross_corr(X, xstar, config):
    """Correlations between query points and design rows.

    Args:
        X: design, shape (M, D).
        xstar: one query of shape (D,) or a batch of shape (B, D).

    Returns:
        shape (M,) for a single query, (B, M) for a batch. A query that
        exactly equals a design row gets the nugget added, mirroring
        corr_matrix.
    """
    X = _check_inputs(X, config)
    xq = np.asarray(xstar, dtype=float)
    single = xq.ndim == 1
    xq = _check_inputs(np.atleast_2d(xq), config, name="xstar")
    out = cross_corr_impl(X, xq, config.gamma, config.eta, config.family_code)
    return out[0] if single else out


def _check_moment_args(gamma, var):
    if not (math.isfinite(gamma) and gamma > 0.0):
        raise ValidationError("gamma must be finite and positive")
    if not (math.isfinite(var) and var >= 0.0):
        raise ValidationError("var must be finite and non-negative")


def xi(gamma, mu, var, x):
    """E[k(w, x)] for w ~ N(mu, var) and the squared-exponential k.

        xi = (1 + 2 var / gamma^2)^(-1/2) exp(-(x - mu)^2 / (gamma^2 + 2 var))

    At var = 0 this reduces to k(mu, x). Always in (0, 1].
    """
    _check_moment_args(gamma, var)
    if not (math.isfinite(mu) and math.isfinite(x)):
        raise ValidationError("mu and x must be finite")
    g2 = gamma * gamma
    den = g2 + 2.0 * var
    d = x - mu
    return math.sqrt(g2 / den) * math.exp(-d * d / den)


def zeta(gamma, mu, var, xi_, xj):
    """E[k(w, xi_) k(w, xj)] for w ~ N(mu, var), squared-exponential k.

        zeta = (1 + 4 var / gamma^2)^(-1/2)
               * exp(-(xi_ - xj)^2 / (2 gamma^2))
               * exp(-(xbar - mu)^2 / (gamma^2 / 2 + 2 var)),   xbar = (xi_ + xj) / 2

    At var = 0 this reduces to k(mu, xi_) k(mu, xj).
    """
    _check_moment_args(gamma, var)
    if not (math.isfinite(mu) and math.isfinite(xi_) and math.isfinite(xj)):
        raise ValidationError("mu, xi_ and xj must be finite")
    g2 = gamma * gamma
    diff = xi_ - xj
    mid = 0.5 * (xi_ + xj) - mu
    den = 0.5 * g2 + 2.0 * var
    return math.sqrt(g2 / (g2 + 4.0 * var)) * math.exp(
        -diff * diff / (2.0 * g2) - mid * mid / den
    )
