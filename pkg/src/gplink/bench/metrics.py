"""Accuracy and calibration metrics for emulator comparisons."""

import numpy as np

from ..exceptions import ValidationError

__all__ = ["rmse", "nrmse", "coverage"]


def _paired(predictions, truth):
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValidationError("predictions and truth must be equal-length, nonempty")
    return p, t


def rmse(predictions, truth):
    p, t = _paired(predictions, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def nrmse(predictions, truth):
    """Root mean squared error normalized by the truth range, in percent."""
    p, t = _paired(predictions, truth)
    span = float(t.max() - t.min())
    if span <= 0.0:
        raise ValidationError("truth range is zero, normalized error is undefined")
    return 100.0 * rmse(p, t) / span


def coverage(means, sds, truth, width=2.0):
    """Fraction of truth values inside the central +-width*sd band."""
    m, t = _paired(means, truth)
    s = np.asarray(sds, dtype=float).ravel()
    if s.shape != m.shape:
        raise ValidationError("sds must match the prediction vector")
    if np.any(s < 0.0):
        raise ValidationError("sds must be nonnegative")
    return float(np.mean(np.abs(t - m) <= width * s))
