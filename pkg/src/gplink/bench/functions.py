"""Closed-form simulators behind the two bundled experiments.

One is a chain of three bumpy 1-D functions on [0,1], composed head to
tail. The other is a Delta-Vega hedging pipeline: Black-Scholes greeks
of two European calls feed two exact neutralization solves that return
the option and stock positions offsetting a unit holding of the first
call.

Sign convention for positions: `vega_strategy` and `delta_strategy`
return signed positions (negative means short). The hedge-node training
surfaces used by the linked emulators work with the magnitude |P2| so
that the option-position input lives in a nonnegative box; the sign is
restored analytically when reporting. See `hedge_ratio` and
`stock_position_surface`.
"""

import math

import numpy as np
from scipy.stats import norm

from ..exceptions import NumericalError, ValidationError

__all__ = [
    "RATE",
    "VOLATILITY",
    "MIN_HEDGE_VEGA",
    "stage1",
    "stage2",
    "stage3",
    "CHAIN_STAGES",
    "chain",
    "bs_d1",
    "bs_delta",
    "bs_vega",
    "vega_strategy",
    "delta_strategy",
    "hedge_ratio",
    "stock_position_surface",
    "hedge_truth",
]

RATE = 0.05
VOLATILITY = 0.32
MIN_HEDGE_VEGA = 1e-8


# ---------------------------------------------------------------------------
# synthetic chain
# ---------------------------------------------------------------------------


def stage1(x):
    """First chain stage: a slow sine rescaled into [0,1]."""
    x = np.asarray(x, dtype=float)
    return (np.sin(7.5 * x) + 1.0) / 2.0


def stage2(x):
    """Second chain stage: a gentle sine plus a narrow bump at 0.5."""
    x = np.asarray(x, dtype=float)
    return (
        np.sin(4.0 * x - 4.0) / 3.0
        + (2.0 / 3.0) * np.exp(-120.0 * (2.0 * x - 1.0) ** 2)
        + 1.0 / 3.0
    )


def stage3(x):
    """Third chain stage: a chirp-like oscillation under a smooth trend."""
    x = np.asarray(x, dtype=float)
    return (
        -(5.0 / 6.0)
        * (
            np.sin(40.0 * (0.4 * x - 0.85) ** 4) * np.cos(x - 2.375)
            + 0.2 * x
            + 0.55
        )
        + 1.0
    )


CHAIN_STAGES = (stage1, stage2, stage3)


def chain(x):
    """The composed three-stage chain evaluated at x in [0,1]."""
    y = np.asarray(x, dtype=float)
    for stage in CHAIN_STAGES:
        y = stage(y)
    return y


# ---------------------------------------------------------------------------
# Black-Scholes greeks
# ---------------------------------------------------------------------------


def _check_market(S, K, tau, v):
    if (
        np.any(np.asarray(S) <= 0.0)
        or np.any(np.asarray(K) <= 0.0)
        or np.any(np.asarray(tau) <= 0.0)
        or np.any(np.asarray(v) <= 0.0)
    ):
        raise ValidationError("spot, strike, maturity and volatility must be > 0")


def bs_d1(S, K, tau, r=RATE, v=VOLATILITY):
    """The standardized log-moneyness term of the European call price."""
    _check_market(S, K, tau, v)
    S = np.asarray(S, dtype=float)
    K = np.asarray(K, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return (np.log(S / K) + (r + 0.5 * v * v) * tau) / (v * np.sqrt(tau))


def bs_delta(S, K, tau, r=RATE, v=VOLATILITY):
    """Call delta, the price sensitivity to the spot. Always in (0,1)."""
    return norm.cdf(bs_d1(S, K, tau, r, v))


def bs_vega(S, K, tau, r=RATE, v=VOLATILITY):
    """Call vega, the price sensitivity to volatility. Positive."""
    d1 = bs_d1(S, K, tau, r, v)
    return np.asarray(S, dtype=float) * np.sqrt(np.asarray(tau, dtype=float)) * norm.pdf(d1)


# ---------------------------------------------------------------------------
# hedging strategies
# ---------------------------------------------------------------------------


def hedge_ratio(v1, v2, eps=MIN_HEDGE_VEGA):
    """Magnitude |P2| of the vega-neutralizing option position, v1 / v2.

    Raises a numerical error when the second vega is too close to zero
    for the hedge to be meaningful.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if np.any(np.abs(v2) <= eps):
        raise NumericalError(
            f"second-option vega within {eps:g} of zero: hedge position is "
            "near-singular"
        )
    return v1 / v2


def vega_strategy(v1, v2, eps=MIN_HEDGE_VEGA):
    """Signed option-2 position P2 that zeroes the portfolio vega.

    With a unit position in option 1, v1 + P2 * v2 = 0 exactly, so
    P2 = -v1/v2 (short when both vegas are positive).
    """
    return -hedge_ratio(v1, v2, eps)


def delta_strategy(d1, d2, p2):
    """Signed stock position Ps that zeroes the portfolio delta.

    Solves d1 + p2 * d2 + Ps = 0 exactly for Ps.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return -(d1 + d2 * p2)


def stock_position_surface(d1, d2, p2_magnitude):
    """The stock position as seen by the final hedge node.

    The node's third input is the magnitude of the (short) option-2
    position, so the surface it must learn is Ps = -d1 + d2 * |P2|,
    which is `delta_strategy` with the sign of P2 restored.
    """
    return delta_strategy(d1, d2, -np.asarray(p2_magnitude, dtype=float))


def hedge_truth(X, r=RATE, v=VOLATILITY):
    """Run the whole hedging pipeline exactly at global inputs.

    X has columns (S, K1, K2, tau1, tau2). Returns a dict of arrays with
    the per-option greeks and the signed positions:
    vega1, vega2, delta1, delta2, p2, ps.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != 5:
        raise ValidationError(
            f"hedging inputs need 5 columns (S, K1, K2, tau1, tau2), got {X.shape[1]}"
        )
    S, K1, K2, tau1, tau2 = (X[:, j] for j in range(5))
    out = {
        "vega1": bs_vega(S, K1, tau1, r, v),
        "vega2": bs_vega(S, K2, tau2, r, v),
        "delta1": bs_delta(S, K1, tau1, r, v),
        "delta2": bs_delta(S, K2, tau2, r, v),
    }
    out["p2"] = vega_strategy(out["vega1"], out["vega2"])
    out["ps"] = delta_strategy(out["delta1"], out["delta2"], out["p2"])
    return out
