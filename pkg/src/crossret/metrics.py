"""Monthly evaluation: rank correlation, directional accuracy and MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import binom, norm, rankdata

from .errors import EmptyEvalList, LengthMismatch, TooFewStocks, UniverseTooSmall, ZeroVariance

FRACTIONS = {"tertile": 3, "quintile": 5}
EXACT_BINOM_LIMIT = 10_000


def _common(scores: Mapping[str, float], returns: Mapping[str, float]):
    keys = sorted(k for k in scores if k in returns
                  and np.isfinite(scores[k]) and np.isfinite(returns[k]))
    s = np.array([scores[k] for k in keys], dtype=np.float64)
    r = np.array([returns[k] for k in keys], dtype=np.float64)
    return keys, s, r


def spearman_arrays(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if len(a) < 3:
        raise TooFewStocks(f"spearman needs >= 3 stocks, got {len(a)}")
    ra = rankdata(a) - (len(a) + 1) / 2.0
    rb = rankdata(b) - (len(b) + 1) / 2.0
    da, db = ra @ ra, rb @ rb
    if da == 0 or db == 0:
        raise ZeroVariance("all values tied; rank correlation undefined")
    return float(ra @ rb / math.sqrt(da * db))


def spearman(scores: Mapping[str, float], returns: Mapping[str, float]) -> float:
    """Spearman correlation over the stocks common to both maps."""
    _, s, r = _common(scores, returns)
    return spearman_arrays(s, r)


def bucket_size(n: int, fraction: str) -> int:
    q = FRACTIONS[fraction]
    if n < q:
        raise UniverseTooSmall(f"{fraction} buckets need >= {q} stocks, got {n}")
    return int(math.floor(n / q + 0.5))


@dataclass(frozen=True)
class Buckets:
    top: tuple
    bottom: tuple
    degenerate: bool   # a score tie straddles a bucket boundary


def bucket_top_bottom(scores: Mapping[str, float], fraction: str) -> Buckets:
    """Top and bottom ``round(n/q)`` stocks by score.

    Stocks are totally ordered by ``(score, stock_id)``; the bottom bucket is
    the head and the top bucket the tail of that order, so ties at a boundary
    resolve by stock id and the buckets never overlap.
    """
    items = sorted(scores.items(), key=lambda kv: (kv[1], kv[0]))
    n = len(items)
    k = bucket_size(n, fraction)
    bottom = tuple(s for s, _ in items[:k])
    top = tuple(s for s, _ in items[n - k:])
    vals = [v for _, v in items]
    degenerate = (k < n and vals[k - 1] == vals[k]) or (n - k > 0 and vals[n - k - 1] == vals[n - k])
    return Buckets(top, bottom, degenerate)


@dataclass(frozen=True)
class DirectionResult:
    hits: int
    total: int

    @property
    def fraction(self) -> float:
        return self.hits / self.total if self.total else math.nan


def direction(scores: Mapping[str, float], returns: Mapping[str, float], fraction: str) -> DirectionResult:
    """Top-bucket stocks beating plus bottom-bucket stocks trailing the median return.

    The median is taken over every scored stock with a realized return;
    returns equal to the median count as misses.
    """
    keys, s, r = _common(scores, returns)
    common = dict(zip(keys, s))
    ret = dict(zip(keys, r))
    b = bucket_top_bottom(common, fraction)
    med = float(np.median(r))
    hits = sum(ret[k] > med for k in b.top) + sum(ret[k] < med for k in b.bottom)
    return DirectionResult(int(hits), len(b.top) + len(b.bottom))


def binom_test_one_sided(hits: int, total: int) -> float:
    """P[X >= hits] for X ~ Binomial(total, 1/2)."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if hits <= 0:
        return 1.0
    if total <= EXACT_BINOM_LIMIT:
        return float(binom.sf(hits - 1, total, 0.5))
    mu = total / 2.0
    sd = math.sqrt(total) / 2.0
    return float(norm.sf((hits - 0.5 - mu) / sd))


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise LengthMismatch(f"{p.shape} vs {t.shape}")
    return float(np.mean((t - p) ** 2))


@dataclass
class MonthlyEval:
    month: str
    corr: float
    direction: dict            # fraction name -> DirectionResult
    mse: float
    universe: int
    bucket_sizes: dict         # fraction name -> k

    def direction_pvalues(self) -> dict:
        return {f: binom_test_one_sided(d.hits, d.total) for f, d in self.direction.items()}


@dataclass
class DirectionSummary:
    hits: int
    total: int
    p_value: float

    @property
    def fraction(self) -> float:
        return self.hits / self.total

    @property
    def stars(self) -> str:
        return stars(self.p_value)


@dataclass
class SummaryRow:
    n_months: int
    corr: float
    mse: float
    direction: dict = field(default_factory=dict)   # fraction -> DirectionSummary


def aggregate_monthly(evals: Sequence[MonthlyEval]) -> SummaryRow:
    """Monthly means of CORR and MSE; Direction pooled over months."""
    if not evals:
        raise EmptyEvalList("no monthly evaluations to aggregate")
    corr = float(np.mean([e.corr for e in evals]))
    err = float(np.mean([e.mse for e in evals]))
    pooled = {}
    for frac in FRACTIONS:
        hits = sum(e.direction[frac].hits for e in evals if frac in e.direction)
        total = sum(e.direction[frac].total for e in evals if frac in e.direction)
        if total:
            pooled[frac] = DirectionSummary(hits, total, binom_test_one_sided(hits, total))
    return SummaryRow(len(evals), corr, err, pooled)
