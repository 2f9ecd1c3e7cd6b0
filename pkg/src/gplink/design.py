"""Space-filling designs and sequential point acquisition.

Initial designs come from a maximin-filtered Latin hypercube (or a plain
uniform grid in one dimension); sequential enrichment picks the candidate
maximizing either the emulator's predictive variance (ALM) or its ratio to
a candidate-set GP's leave-one-out variance (a mutual-information style
score), with ties broken toward the lowest candidate index.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import pdist

from .accel import corr_matrix_impl
from .deep import DGPModel, predict_dgp_batch
from .exceptions import ValidationError
from .gp import GPModel, _chol_with_jitter, predict_gp_batch

__all__ = [
    "DesignBox",
    "lhs",
    "lhs_maximin",
    "uniform_grid",
    "next_point",
]

ALM = "alm"
MICE = "mice"
_MAXIMIN_DRAWS = 1000
_CANDIDATE_NUGGET = 1.0  # tau^2 of the candidate-set GP


@dataclass(frozen=True)
class DesignBox:
    """Axis-aligned input domain."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("box bounds must be equal-length vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValidationError("box requires lower < upper elementwise")

    @property
    def ndim(self):
        return self.lower.size

    def from_unit(self, U):
        return self.lower + np.asarray(U, dtype=float) * (self.upper - self.lower)

    def contains(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)


def _unit_lhs(n, D, rng):
    U = np.empty((n, D))
    for d in range(D):
        U[:, d] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return U


def lhs(n, box, seed=0):
    """One plain Latin hypercube draw mapped into the box."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return box.from_unit(_unit_lhs(n, box.ndim, rng))


def lhs_maximin(n, box, seed=0, k_draws=_MAXIMIN_DRAWS):
    """Best of k_draws Latin hypercube draws by minimum pairwise distance.

    Distances are measured in unit-cube coordinates so that dimensions
    with very different physical ranges weigh equally.
    """
    if n < 2:
        raise ValidationError("maximin design needs n >= 2")
    rng = np.random.default_rng(seed)
    best = None
    best_d = -np.inf
    for _ in range(k_draws):
        U = _unit_lhs(n, box.ndim, rng)
        d = pdist(U).min()
        if d > best_d:
            best_d = d
            best = U
    return box.from_unit(best)


def uniform_grid(n, box):
    """n equally spaced 1-D points including both endpoints (midpoint for n=1)."""
    if box.ndim != 1:
        raise ValidationError("uniform_grid is one-dimensional only")
    if n < 1:
        raise ValidationError("n must be >= 1")
    lo, hi = float(box.lower[0]), float(box.upper[0])
    if n == 1:
        return np.array([[0.5 * (lo + hi)]])
    return np.linspace(lo, hi, n)[:, None]


def _pred_vars(emulator, X):
    if isinstance(emulator, DGPModel):
        _, v = predict_dgp_batch(emulator, X)
        return v.sum(axis=1)
    _, v = predict_gp_batch(emulator, X)
    return v


def next_point(emulator, candidates, criterion=ALM):
    """Index of the candidate row to run next.

    ALM scores each candidate by the emulator's predictive variance. The
    mutual-information criterion divides that variance by the variance of
    a GP conditioned on the remaining candidates (same correlation
    structure as the emulator, nugget fixed at 1), evaluated through the
    leave-one-out identity var_i = sigma^2 / (K^-1)_ii.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] < 1:
        raise ValidationError("candidate set is empty")
    if criterion == ALM:
        scores = _pred_vars(emulator, candidates)
    elif criterion == MICE:
        if not isinstance(emulator, GPModel):
            raise ValidationError(
                "the mutual-information criterion needs a plain GP emulator"
            )
        var_emu = _pred_vars(emulator, candidates)
        Xc = np.ascontiguousarray(emulator.in_scaler.transform(candidates))
        cfg = emulator.config
        K = corr_matrix_impl(Xc, cfg.gamma, 0.0, cfg.family_code)
        K[np.diag_indices_from(K)] += _CANDIDATE_NUGGET
        chol = _chol_with_jitter(K)
        Kinv = cho_solve(chol, np.eye(K.shape[0]), check_finite=False)
        sd2 = emulator.out_scaler.sd**2
        var_cand = sd2 * emulator.sigma2 / np.diag(Kinv)
        scores = var_emu / var_cand
    else:
        raise ValidationError(f"unknown acquisition criterion: {criterion!r}")
    return int(np.argmax(scores))
