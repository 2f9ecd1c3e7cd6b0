"""Affine input/output scaling attached to trained models.

Inputs are min-max scaled to [0, 1] per dimension at training time; outputs
are standardized to zero mean and unit sd. Both transforms are affine, so a
normal input distribution stays normal: means map through the transform and
variances pick up the squared scale. Zero-range input columns fall back to
scale 1 so queries pass through unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

__all__ = ["InputScaler", "OutputScaler"]


@dataclass
class InputScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        return cls(lo=X.min(axis=0), hi=X.max(axis=0))

    @classmethod
    def identity(cls, ndim):
        return cls(lo=np.zeros(ndim), hi=np.ones(ndim))

    @property
    def scale(self):
        rng = self.hi - self.lo
        return np.where(rng > 0.0, rng, 1.0)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.lo) / self.scale

    def transform_moments(self, mu, var):
        s = self.scale
        return (np.asarray(mu, float) - self.lo) / s, np.asarray(var, float) / (s * s)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(lo=np.asarray(d["lo"], float), hi=np.asarray(d["hi"], float))


@dataclass
class OutputScaler:
    mean: float
    sd: float

    @classmethod
    def fit(cls, y):
        y = np.asarray(y, dtype=float)
        if y.max() == y.min():
            raise ValidationError("constant training outputs: nothing to emulate")
        return cls(mean=float(y.mean()), sd=float(y.std()))

    @classmethod
    def identity(cls):
        return cls(mean=0.0, sd=1.0)

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.sd

    def inverse_moments(self, mean, var):
        return mean * self.sd + self.mean, var * (self.sd * self.sd)

    def to_dict(self):
        return {"mean": self.mean, "sd": self.sd}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=float(d["mean"]), sd=float(d["sd"]))
