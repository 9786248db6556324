"""Cross-sectional rank scaling and lagged feature assembly.

Each factor is replaced, month by month, by its ascending average rank divided
by the number of stocks carrying that factor, so values live in (0, 1].  A
feature vector stacks five lags (T, T-3, T-6, T-9, T-12) of the 25 scaled
factors in lag-major order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyCrossSection, InsufficientHistory, MissingScaledMonth
from .panel import FactorPanel, MonthId, as_month

LAGS = (0, 3, 6, 9, 12)
MAX_LAG = max(LAGS)


def rank_scale_array(x: np.ndarray) -> np.ndarray:
    """Average-rank scaling of the finite entries of ``x``; NaN stays NaN."""
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.shape, np.nan)
    ok = np.isfinite(x)
    n = int(ok.sum())
    if n == 0:
        raise EmptyCrossSection("no finite values to rank")
    out[ok] = rankdata(x[ok], method="average") / n
    return out


def rank_scale(values: Mapping[str, float]) -> dict[str, float]:
    keys = [k for k, v in values.items() if np.isfinite(v)]
    if not keys:
        raise EmptyCrossSection("no finite values to rank")
    scaled = rank_scale_array(np.array([values[k] for k in keys]))
    return {k: float(v) for k, v in zip(keys, scaled)}


@dataclass(frozen=True)
class ScaledCrossSection:
    month: MonthId
    stock_ids: tuple
    values: np.ndarray  # (n_stocks, n_factors), NaN where absent or missing

    def factor_map(self, j: int) -> dict[str, float]:
        col = self.values[:, j]
        return {s: float(v) for s, v in zip(self.stock_ids, col) if not np.isnan(v)}


def _scale_slice(raw: np.ndarray) -> np.ndarray:
    out = np.full(raw.shape, np.nan)
    for j in range(raw.shape[1]):
        col = raw[:, j]
        if np.isfinite(col).any():
            out[:, j] = rank_scale_array(col)
    return out


def scale_month(panel: FactorPanel, m) -> ScaledCrossSection:
    m = as_month(m)
    raw = panel.factor_slice(m)
    values = _scale_slice(raw)
    values.setflags(write=False)
    return ScaledCrossSection(m, panel.stock_ids, values)


class ScaledCache:
    """Lazily scaled cross-sections, one per month, computed once."""

    def __init__(self, panel: FactorPanel):
        self.panel = panel
        self._cache: dict[int, ScaledCrossSection] = {}

    def month(self, m: MonthId) -> ScaledCrossSection:
        if not self.panel.contains(m):
            raise MissingScaledMonth(f"no scaled cross-section for {m}")
        cs = self._cache.get(m.index)
        if cs is None:
            cs = self._cache[m.index] = scale_month(self.panel, m)
        return cs

    def lag_block(self, anchor: MonthId) -> np.ndarray:
        """(n_stocks, 5 * n_factors) lag-major matrix anchored at ``anchor``."""
        return np.concatenate([self.month(anchor.minus_months(k)).values for k in LAGS], axis=1)


def build_features(cache: ScaledCache, stock_id: str, anchor) -> np.ndarray | None:
    """125-dim feature vector, or None when the stock is ineligible."""
    anchor = as_month(anchor)
    s = cache.panel.stock_pos(stock_id)
    v = np.concatenate([cache.month(anchor.minus_months(k)).values[s] for k in LAGS])
    if np.isnan(v).any():
        return None
    return v


def feature_matrix(cache: ScaledCache, anchor) -> tuple[np.ndarray, np.ndarray]:
    """Positions of eligible stocks at ``anchor`` and their feature rows."""
    anchor = as_month(anchor)
    block = cache.lag_block(anchor)
    present = cache.panel.universe_mask(anchor)
    ok = present & ~np.isnan(block).any(axis=1)
    idx = np.flatnonzero(ok)
    return idx, block[idx]


@dataclass
class TrainingSet:
    X: np.ndarray          # (K, 125)
    y: np.ndarray          # (K,) rank-scaled target scores
    anchors: np.ndarray    # (K,) month index of each example's feature anchor
    stock_ids: list
    window: list           # anchor months, oldest first

    @property
    def K(self) -> int:
        return len(self.y)

    def batches(self) -> list[np.ndarray]:
        """Row indices grouped by anchor month (one cross-section each)."""
        return [np.flatnonzero(self.anchors == m.index) for m in self.window
                if (self.anchors == m.index).any()]


def check_history(panel: FactorPanel, train_month: MonthId, n_window: int) -> None:
    earliest = train_month.minus_months(n_window + MAX_LAG)
    if earliest < panel.first_month:
        raise InsufficientHistory(
            f"window of {n_window} months ending at {train_month} needs data from {earliest}, "
            f"panel starts {panel.first_month}")
    last_anchor = train_month.minus_months(1)
    if last_anchor > panel.last_month:
        raise InsufficientHistory(f"panel ends {panel.last_month}, before {last_anchor}")


def assemble_training_set(panel: FactorPanel, train_month, n_window: int,
                          cache: ScaledCache | None = None) -> TrainingSet:
    """Stack examples over the latest ``n_window`` months of realized targets.

    ``train_month`` is the month whose return is the newest target used, so
    anchors run over ``train_month - n_window .. train_month - 1``; every value
    read is known at the end of ``train_month``.
    """
    train_month = as_month(train_month)
    if n_window < 1:
        raise ValueError("n_window must be >= 1")
    check_history(panel, train_month, n_window)
    cache = cache or ScaledCache(panel)
    window = [train_month.minus_months(k) for k in range(n_window, 0, -1)]
    xs, ys, anchors, ids = [], [], [], []
    for t in window:
        idx, X = feature_matrix(cache, t)
        r = panel.return_slice(t)[idx]
        ok = np.isfinite(r)
        if not ok.any():
            continue
        xs.append(X[ok])
        ys.append(rank_scale_array(r[ok]))
        anchors.append(np.full(int(ok.sum()), t.index))
        ids.extend(panel.stock_ids[s] for s in idx[ok])
    if not xs:
        return TrainingSet(np.empty((0, 5 * panel.n_factors)), np.empty(0), np.empty(0, dtype=int),
                           [], window)
    return TrainingSet(np.vstack(xs), np.concatenate(ys), np.concatenate(anchors), ids, window)

