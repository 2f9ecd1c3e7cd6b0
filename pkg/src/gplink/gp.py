"""Single-output Gaussian process emulators.

A zero-mean GP with a separable correlation kernel is fit to a design by
maximum profile likelihood: the signal variance sigma2 is concentrated out
analytically (sigma2_hat = y' R^-1 y / M) and the lengthscales (optionally
the nugget) are optimized in log space with analytic gradients from several
restarts. Inputs are min-max scaled to [0, 1] per dimension and outputs are
standardized before fitting, so lengthscale bounds and defaults are
expressed on the scaled box.

Prediction follows the standard kriging equations; linked_moments is the
closed-form pushforward of independent normal inputs through the emulator,
which is the building block that lets emulators feed each other.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .accel import corr_matrix_impl, cross_corr_impl, linked_moments_impl
from .exceptions import NumericalError, ValidationError
from .kernels import FAMILIES, MATERN_2_5, SQUARED_EXPONENTIAL, KernelConfig
from .scaling import InputScaler, OutputScaler

__all__ = [
    "Prediction",
    "TrainOptions",
    "GPModel",
    "train_gp",
    "build_gp",
    "predict_gp",
    "predict_gp_batch",
    "linked_moments",
    "log_likelihood",
    "model_to_dict",
    "model_from_dict",
]

GAMMA_BOUNDS = (1e-3, 1e3)
ETA_BOUNDS = (1e-8, 1e6)
DEFAULT_NUGGET = 1e-8
JITTERS = (0.0, 1e-10, 1e-8)
VAR_CLAMP_TOL = 1e-10


@dataclass
class Prediction:
    """Predictive mean and variance at one query point."""

    mean: float
    var: float

    @property
    def sd(self):
        return math.sqrt(self.var)


@dataclass
class TrainOptions:
    """Knobs for train_gp.

    Args:
        family: kernel family for the fitted model.
        n_starts: number of local optimizations (first start is the warm
            init when given, otherwise a fixed heuristic; the rest are drawn
            from a seeded stream).
        seed: seed for the restart stream.
        nugget: "fixed" keeps eta at nugget_value (deterministic
            simulators); "estimate" optimizes it in log space.
        nugget_value: eta used when nugget == "fixed".
        init: optional KernelConfig to warm-start the first restart.
        scale_inputs / standardize_output: affine preprocessing switches;
            both stay on for plain training and are turned off internally
            when fitting latent-layer nodes.
        maxiter: L-BFGS-B iteration cap per restart.
    """

    family: str = SQUARED_EXPONENTIAL
    n_starts: int = 10
    seed: int = 0
    nugget: str = "fixed"
    nugget_value: float = DEFAULT_NUGGET
    init: KernelConfig | None = None
    scale_inputs: bool = True
    standardize_output: bool = True
    maxiter: int = 100

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family: {self.family!r}")
        if self.nugget not in ("fixed", "estimate"):
            raise ValidationError("nugget must be 'fixed' or 'estimate'")
        if self.n_starts < 1:
            raise ValidationError("n_starts must be >= 1")


def _chol_with_jitter(R):
    """Cholesky with the escalation policy: no jitter, 1e-10, 1e-8, error."""
    M = R.shape[0]
    for j in JITTERS:
        try:
            A = R if j == 0.0 else R + j * np.eye(M)
            c, low = cho_factor(A, lower=True, check_finite=False)
            return c, low
        except LinAlgError:
            continue
    raise NumericalError(
        "correlation matrix is not positive definite even after 1e-8 jitter"
    )


class GPModel:
    """A trained (or explicitly constructed) GP node.

    Holds the scaled design, standardized outputs, kernel configuration,
    signal variance and the cached factorization. X and y here are always
    on the internal scale; the attached scalers map to and from raw units.
    """

    def __init__(self, X, y, config, sigma2, in_scaler, out_scaler):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.config = config
        self.sigma2 = float(sigma2)
        self.in_scaler = in_scaler
        self.out_scaler = out_scaler
        chol, low = _chol_with_jitter(
            corr_matrix_impl(self.X, config.gamma, config.eta, config.family_code)
        )
        self._chol = (chol, low)
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self._alpha = cho_solve(self._chol, self.y, check_finite=False)
        self._Rinv = None
        m = self.n_points
        quad = float(self.y @ self._alpha)
        self.loglik = -0.5 * (
            m * math.log(self.sigma2) + self._logdet + quad / self.sigma2
        ) - 0.5 * m * math.log(2.0 * math.pi)

    @property
    def n_points(self):
        return self.X.shape[0]

    @property
    def ndim(self):
        return self.X.shape[1]

    @property
    def alpha(self):
        return self._alpha

    @property
    def Rinv(self):
        if self._Rinv is None:
            self._Rinv = cho_solve(
                self._chol, np.eye(self.n_points), check_finite=False
            )
        return self._Rinv


def _validate_training_data(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-D, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValidationError("y must be 1-D with one value per design row")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 design points")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("training data contains non-finite values")
    if y.max() == y.min():
        raise ValidationError("constant training outputs: nothing to emulate")
    return X, y


def _check_duplicates(Xs):
    uniq = np.unique(Xs, axis=0)
    if uniq.shape[0] != Xs.shape[0]:
        raise ValidationError("duplicate design rows after scaling")


def build_gp(X, y, config, sigma2=None, scale_inputs=True, standardize_output=True):
    """Construct a GP node at explicit hyperparameters, no optimization.

    sigma2 defaults to the profile estimate y' R^-1 y / M on the
    standardized outputs.
    """
    X, y = _validate_training_data(X, y)
    if config.ndim != X.shape[1]:
        raise ValidationError("config dimensionality does not match X")
    in_scaler = InputScaler.fit(X) if scale_inputs else InputScaler.identity(X.shape[1])
    out_scaler = OutputScaler.fit(y) if standardize_output else OutputScaler.identity()
    Xs = in_scaler.transform(X)
    ys = out_scaler.transform(y)
    _check_duplicates(Xs)
    if sigma2 is None:
        chol = _chol_with_jitter(
            corr_matrix_impl(
                np.ascontiguousarray(Xs), config.gamma, config.eta, config.family_code
            )
        )
        alpha = cho_solve(chol, ys, check_finite=False)
        sigma2 = float(ys @ alpha) / len(ys)
    return GPModel(Xs, ys, config, sigma2, in_scaler, out_scaler)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _loo_products(per_dim):
    """Leave-one-out products along the last axis via prefix/suffix scans."""
    D = per_dim.shape[-1]
    out = np.empty_like(per_dim)
    prefix = np.ones(per_dim.shape[:-1])
    for d in range(D):
        out[..., d] = prefix
        prefix = prefix * per_dim[..., d]
    suffix = np.ones(per_dim.shape[:-1])
    for d in range(D - 1, -1, -1):
        out[..., d] = out[..., d] * suffix
        suffix = suffix * per_dim[..., d]
    return out


class _Objective:
    """Negative profile log-likelihood and its gradient in log space."""

    def __init__(self, Xs, ys, family_code, eta_fixed, estimate_eta):
        self.X = np.ascontiguousarray(Xs)
        self.y = ys
        self.M, self.D = Xs.shape
        self.family_code = family_code
        self.eta_fixed = eta_fixed
        self.estimate_eta = estimate_eta
        self.diff = Xs[:, None, :] - Xs[None, :, :]
        self.diff2 = self.diff**2
        self.absdiff = np.abs(self.diff)

    def __call__(self, theta):
        D = self.D
        gamma = np.exp(theta[:D])
        eta = math.exp(theta[D]) if self.estimate_eta else self.eta_fixed
        R = corr_matrix_impl(self.X, gamma, eta, self.family_code)
        try:
            chol = _chol_with_jitter(R)
        except NumericalError:
            return 1e10, np.zeros_like(theta)
        alpha = cho_solve(chol, self.y, check_finite=False)
        sigma2 = max(float(self.y @ alpha) / self.M, 1e-300)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
        f = 0.5 * (self.M * math.log(sigma2) + logdet)
        Rinv = cho_solve(chol, np.eye(self.M), check_finite=False)

        grad = np.empty_like(theta)
        if self.family_code == 0:
            C = R - eta * np.eye(self.M)
            for d in range(D):
                Rdot = C * (2.0 * self.diff2[:, :, d] / (gamma[d] * gamma[d]))
                grad[d] = -(
                    float(alpha @ Rdot @ alpha) / (2.0 * sigma2)
                    - 0.5 * float(np.sum(Rinv * Rdot))
                )
        else:
            s = math.sqrt(5.0) * self.absdiff / gamma
            e = np.exp(-s)
            k = (1.0 + s + s * s / 3.0) * e
            dk = (s * s / 3.0) * (1.0 + s) * e  # d k / d log gamma
            loo = _loo_products(k)
            for d in range(D):
                Rdot = loo[:, :, d] * dk[:, :, d]
                grad[d] = -(
                    float(alpha @ Rdot @ alpha) / (2.0 * sigma2)
                    - 0.5 * float(np.sum(Rinv * Rdot))
                )
        if self.estimate_eta:
            # dR/d log eta = eta * I for distinct design rows
            grad[D] = -(
                eta * float(alpha @ alpha) / (2.0 * sigma2)
                - 0.5 * eta * float(np.trace(Rinv))
            )
        return f, grad


def train_gp(X, y, options=None):
    """Fit a GP by multi-start maximum profile likelihood.

    Returns the GPModel with the best restart's hyperparameters; exact
    likelihood ties go to the smallest ||log gamma||.
    """
    options = options or TrainOptions()
    X, y = _validate_training_data(X, y)
    D = X.shape[1]
    in_scaler = (
        InputScaler.fit(X) if options.scale_inputs else InputScaler.identity(D)
    )
    out_scaler = (
        OutputScaler.fit(y) if options.standardize_output else OutputScaler.identity()
    )
    Xs = in_scaler.transform(X)
    ys = out_scaler.transform(y)
    _check_duplicates(Xs)

    estimate_eta = options.nugget == "estimate"
    family_code = FAMILIES[options.family]
    obj = _Objective(Xs, ys, family_code, options.nugget_value, estimate_eta)

    lo_g, hi_g = math.log(GAMMA_BOUNDS[0]), math.log(GAMMA_BOUNDS[1])
    bounds = [(lo_g, hi_g)] * D
    if estimate_eta:
        bounds.append((math.log(ETA_BOUNDS[0]), math.log(ETA_BOUNDS[1])))

    if options.init is not None:
        if options.init.ndim != D:
            raise ValidationError("init config dimensionality does not match X")
        first = np.log(options.init.gamma)
        first_eta = math.log(max(options.init.eta, ETA_BOUNDS[0]))
    else:
        first = np.full(D, math.log(0.5))
        first_eta = math.log(1e-6)
    starts = [np.append(first, first_eta) if estimate_eta else first]
    rng = np.random.default_rng(options.seed)
    for _ in range(options.n_starts - 1):
        g = rng.uniform(math.log(1e-2), math.log(1e2), size=D)
        if estimate_eta:
            g = np.append(g, rng.uniform(math.log(1e-8), math.log(1e-1)))
        starts.append(g)

    best = None
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(
            obj,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": options.maxiter},
        )
        if not np.all(np.isfinite(res.x)) or not math.isfinite(res.fun):
            continue
        f, norm = float(res.fun), float(np.linalg.norm(res.x[:D]))
        if (
            best is None
            or f < best[0] - 1e-10 * (1.0 + abs(best[0]))
            or (abs(f - best[0]) <= 1e-10 * (1.0 + abs(best[0])) and norm < best[1])
        ):
            best = (f, norm, res.x.copy())
    if best is None:
        raise NumericalError("all training restarts failed")

    theta = best[2]
    gamma = np.exp(theta[:D])
    eta = math.exp(theta[D]) if estimate_eta else options.nugget_value
    config = KernelConfig(options.family, gamma, eta)
    chol = _chol_with_jitter(
        corr_matrix_impl(np.ascontiguousarray(Xs), gamma, eta, family_code)
    )
    alpha = cho_solve(chol, ys, check_finite=False)
    sigma2 = float(ys @ alpha) / len(ys)
    return GPModel(Xs, ys, config, sigma2, in_scaler, out_scaler)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _predict_scaled(model, Xq_scaled, clamp=True):
    cfg = model.config
    r = cross_corr_impl(
        model.X, np.ascontiguousarray(Xq_scaled), cfg.gamma, cfg.eta, cfg.family_code
    )
    mean = r @ model.alpha
    t = cho_solve(model._chol, r.T, check_finite=False)
    quad = np.einsum("bm,mb->b", r, t)
    raw = model.sigma2 * (1.0 + cfg.eta - quad)
    var = np.maximum(raw, 0.0) if clamp else raw
    return mean, var


def predict_gp_batch(model, Xq):
    """Predictive means and variances at raw-unit query rows, shape (B, D)."""
    Xq = np.asarray(Xq, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[:, None] if model.ndim == 1 else Xq[None, :]
    if Xq.shape[1] != model.ndim:
        raise ValidationError(
            f"query has {Xq.shape[1]} columns, model expects {model.ndim}"
        )
    if not np.all(np.isfinite(Xq)):
        raise ValidationError("query contains non-finite values")
    mean, var = _predict_scaled(model, model.in_scaler.transform(Xq))
    return model.out_scaler.inverse_moments(mean, var)


def predict_gp(model, xstar):
    """Predictive distribution at a single query point (raw units)."""
    mean, var = predict_gp_batch(model, np.atleast_1d(np.asarray(xstar, float))[None, :])
    return Prediction(mean=float(mean[0]), var=float(var[0]))


def _moments_scaled(model, mu_s, var_s):
    """Closed-form moment propagation on scaled coordinates."""
    if model.config.family != SQUARED_EXPONENTIAL:
        raise ValidationError(
            "stochastic inputs require the squared-exponential family"
        )
    cfg = model.config
    return linked_moments_impl(
        model.X, cfg.gamma, cfg.eta, model.sigma2, model.alpha, model.Rinv, mu_s, var_s
    )


def linked_moments(model, mu, var, return_raw=False):
    """Push independent normal inputs N(mu, var) through the emulator.

    mu and var are (B, D) in raw units; deterministic dimensions are
    expressed with zero variance. Rows whose variances are all exactly zero
    reduce to (and reuse) the plain predictive equations, nugget indicator
    included, independent of the rest of the batch. Stochastic rows use the
    closed-form moment integrals, which require the squared-exponential
    family.

    Returns (means, vars) in raw output units; with return_raw=True a third
    array carries the unclamped standardized-scale variances.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    var = np.atleast_2d(np.asarray(var, dtype=float))
    if mu.shape != var.shape or mu.shape[1] != model.ndim:
        raise ValidationError("mu/var shape mismatch with model dimensionality")
    if np.any(var < 0.0):
        var = np.where((var < 0.0) & (var > -1e-12), 0.0, var)
        if np.any(var < 0.0):
            raise ValidationError("negative input variance")
    mu_s, var_s = model.in_scaler.transform_moments(mu, var)
    # Route each row by its own variances so results never depend on what
    # else happens to share the batch: all-deterministic rows reuse the
    # plain predictive equations (better conditioned than the var=0 limit
    # of the integral path, which differs by interpolation round-off).
    zero_rows = ~np.any(var_s > 0.0, axis=1)
    if np.all(zero_rows):
        mean_s, var_out = _predict_scaled(model, mu_s, clamp=False)
    elif not np.any(zero_rows):
        mean_s, var_out = _moments_scaled(model, mu_s, var_s)
    else:
        mean_s = np.empty(mu_s.shape[0])
        var_out = np.empty(mu_s.shape[0])
        mean_s[zero_rows], var_out[zero_rows] = _predict_scaled(
            model, mu_s[zero_rows], clamp=False
        )
        live = ~zero_rows
        mean_s[live], var_out[live] = _moments_scaled(
            model, mu_s[live], var_s[live]
        )
    raw = var_out
    mean, var_o = model.out_scaler.inverse_moments(mean_s, np.maximum(raw, 0.0))
    if return_raw:
        return mean, var_o, raw
    return mean, var_o


def log_likelihood(model):
    """Profile log-likelihood of the model at its stored hyperparameters."""
    return model.loglik


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_dict(model):
    return {
        "family": model.config.family,
        "gamma": model.config.gamma.tolist(),
        "eta": model.config.eta,
        "sigma2": model.sigma2,
        "X": model.X.tolist(),
        "y": model.y.tolist(),
        "scalers": {
            "input": model.in_scaler.to_dict(),
            "output": model.out_scaler.to_dict(),
        },
    }


def model_from_dict(d):
    try:
        config = KernelConfig(d["family"], np.asarray(d["gamma"], float), float(d["eta"]))
        return GPModel(
            np.asarray(d["X"], float),
            np.asarray(d["y"], float),
            config,
            float(d["sigma2"]),
            InputScaler.from_dict(d["scalers"]["input"]),
            OutputScaler.from_dict(d["scalers"]["output"]),
        )
    except KeyError as e:
        raise ValidationError(f"GP model record is missing field {e}") from e
