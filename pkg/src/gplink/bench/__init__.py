"""Bundled benchmark networks, metrics, and experiment drivers."""

from .functions import (
    CHAIN_STAGES,
    RATE,
    VOLATILITY,
    bs_d1,
    bs_delta,
    bs_vega,
    chain,
    delta_strategy,
    hedge_truth,
    vega_strategy,
)
from .metrics import coverage, nrmse, rmse

__all__ = [
    "CHAIN_STAGES",
    "RATE",
    "VOLATILITY",
    "bs_d1",
    "bs_delta",
    "bs_vega",
    "chain",
    "delta_strategy",
    "hedge_truth",
    "vega_strategy",
    "coverage",
    "nrmse",
    "rmse",
]
