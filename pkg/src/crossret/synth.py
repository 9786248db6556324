"""Synthetic factor panels with a plantable cross-sectional signal.

Factors follow independent AR(1) processes (rho = 0.9) so that 3-month lags
remain informative.  The realized return over t -> t+1 is::

    r = s * (2 * rank_t(signal factor) / n - 1) * signal_sigma + market_t + noise

where ``market_t`` is common to all stocks in a month (it cannot move any
cross-sectional statistic).  Returns are simulated for every month, including
the last, so a panel of ``n_months`` supports predictions through the month
after its last factor month.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigTooSmall
from .panel import N_FACTORS, FactorPanel, MonthId, as_month

# Frozen by the calibration in tests/test_synth.py: with s = 0.3 and 200
# stocks the month-mean Spearman(signal, fwd return) is about 0.27.
DEFAULT_SIGNAL_SIGMA = 0.10
DEFAULT_NOISE_SIGMA = 0.06


@dataclass(frozen=True)
class SynthConfig:
    n_stocks: int = 200
    n_months: int = 84
    signal_strength: float = 0.3
    signal_factor: int = 1          # 1-based, f01..f25
    signal_sigma: float = DEFAULT_SIGNAL_SIGMA
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    market_mean: float = 0.005
    market_sigma: float = 0.04
    ar_rho: float = 0.9
    missing_rate: float = 0.0
    start: str = "2000-01"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def generate_panel(config: SynthConfig) -> FactorPanel:
    c = config
    if c.n_stocks < 10 or c.n_months < 14:
        raise ConfigTooSmall("need n_stocks >= 10 and n_months >= 14")
    if not 0.0 <= c.signal_strength <= 1.0:
        raise ValueError("signal_strength must be in [0, 1]")
    if not 1 <= c.signal_factor <= N_FACTORS:
        raise ValueError(f"signal_factor must be in 1..{N_FACTORS}")
    if not 0.0 <= c.missing_rate < 1.0:
        raise ValueError("missing_rate must be in [0, 1)")
    rng = np.random.default_rng(c.seed)
    T, n = c.n_months, c.n_stocks

    factors = np.empty((T, n, N_FACTORS))
    factors[0] = rng.standard_normal((n, N_FACTORS))
    innov = np.sqrt(1.0 - c.ar_rho ** 2)
    for t in range(1, T):
        factors[t] = c.ar_rho * factors[t - 1] + innov * rng.standard_normal((n, N_FACTORS))

    sig = factors[:, :, c.signal_factor - 1]
    ranks = np.apply_along_axis(rankdata, 1, sig)
    planted = c.signal_strength * (2.0 * ranks / n - 1.0) * c.signal_sigma
    market = c.market_mean + c.market_sigma * rng.standard_normal(T)
    noise = c.noise_sigma * rng.standard_normal((T, n))
    fwd = planted + market[:, None] + noise

    if c.missing_rate > 0:
        drop = rng.random(factors.shape) < c.missing_rate
        factors[drop] = np.nan

    stock_ids = [f"S{k:04d}" for k in range(n)]
    present = np.ones((T, n), dtype=bool)
    return FactorPanel(as_month(c.start), stock_ids, factors, fwd, present)


def start_month(config: SynthConfig) -> MonthId:
    return as_month(config.start)
