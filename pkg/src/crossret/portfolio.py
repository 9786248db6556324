"""Equal-weight long-short tertile/quintile strategy and its annualized summary."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import TooFewMonths
from .metrics import bucket_top_bottom


@dataclass(frozen=True)
class LsMonthReturn:
    month: str
    long_return: float
    short_return: float
    n_long: int
    n_short: int
    degenerate: bool = False

    @property
    def ls_return(self) -> float:
        return self.long_return - self.short_return


def ls_month(scores: Mapping[str, float], returns: Mapping[str, float], fraction: str,
             month: str = "") -> LsMonthReturn:
    """Long the top bucket, short the bottom bucket, equal weights, no costs."""
    common = {k: v for k, v in scores.items()
              if k in returns and np.isfinite(v) and np.isfinite(returns[k])}
    b = bucket_top_bottom(common, fraction)
    # fsum keeps the bucket means independent of summation order
    long_r = math.fsum(returns[k] for k in b.top) / len(b.top)
    short_r = math.fsum(returns[k] for k in b.bottom) / len(b.bottom)
    return LsMonthReturn(month, long_r, short_r, len(b.top), len(b.bottom), b.degenerate)


@dataclass(frozen=True)
class StrategySummary:
    return_pct: float
    risk_pct: float
    r_over_r: float | None   # None when risk is zero

    def to_dict(self) -> dict:
        return {"return_pct": self.return_pct, "risk_pct": self.risk_pct, "r_over_r": self.r_over_r}


def summarize_strategy(series: Sequence) -> StrategySummary:
    """Arithmetic annualization: 12 x mean and sqrt(12) x sample stdev, in percent."""
    ls = np.array([s.ls_return if isinstance(s, LsMonthReturn) else s for s in series],
                  dtype=np.float64)
    if len(ls) < 2:
        raise TooFewMonths(f"need >= 2 months, got {len(ls)}")
    ret = 12.0 * float(ls.mean()) * 100.0
    risk = math.sqrt(12.0) * float(ls.std(ddof=1)) * 100.0
    if risk == 0.0 or np.ptp(ls) == 0.0:
        return StrategySummary(ret, 0.0, None)
    return StrategySummary(ret, risk, ret / risk)
