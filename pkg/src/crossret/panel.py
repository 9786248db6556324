"""Monthly factor panel: CSV ingestion, validation and universe queries.

The panel is stored densely as ``(n_months, n_stocks, n_factors)`` arrays over a
contiguous month calendar.  Missing cells are NaN; ``present`` marks which
stocks have a record in a given month (the constituent set for that month).
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import total_ordering
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyPanel,
    MalformedHeader,
    MalformedRow,
    MonthOutOfRange,
)

N_FACTORS = 25

FACTOR_NAMES = (
    "Book-to-market ratio",
    "Earnings-to-price ratio",
    "Dividend yield",
    "Sales-to-price ratio",
    "Cash flow-to-price ratio",
    "Return on equity",
    "Return on asset",
    "Return on invested capital",
    "Accruals",
    "Sales-to-total assets ratio",
    "Current ratio",
    "Equity ratio",
    "Total asset growth",
    "Investment growth",
    "Investment-to-assets ratio",
    "EPS Revision(1 month)",
    "EPS Revision(3 months)",
    "Market beta",
    "Market value",
    "Past stock return(1 month)",
    "Past stock return(12 months)",
    "Volatility",
    "Skewness",
    "Idiosyncratic volatility",
    "Trading turnover",
)


@total_ordering
@dataclass(frozen=True)
class MonthId:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @property
    def index(self) -> int:
        """Months since year 0, usable as a dense integer key."""
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, index: int) -> "MonthId":
        return cls(index // 12, index % 12 + 1)

    @classmethod
    def parse(cls, text: str) -> "MonthId":
        try:
            y, m = text.strip().split("-")
            if len(y) != 4 or len(m) != 2:
                raise ValueError
            return cls(int(y), int(m))
        except ValueError:
            raise ValueError(f"bad month {text!r}, expected YYYY-MM") from None

    def plus_months(self, k: int) -> "MonthId":
        return MonthId.from_index(self.index + k)

    def minus_months(self, k: int) -> "MonthId":
        return MonthId.from_index(self.index - k)

    def __lt__(self, other):
        if not isinstance(other, MonthId):
            return NotImplemented
        return self.index < other.index

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


def as_month(m) -> MonthId:
    return m if isinstance(m, MonthId) else MonthId.parse(str(m))


@dataclass(frozen=True)
class FactorRecord:
    stock_id: str
    month: MonthId
    factors: np.ndarray
    fwd_return: float
    factor_missing_mask: np.ndarray


@dataclass(frozen=True)
class PanelCsvSpec:
    n_factors: int = N_FACTORS
    month_column: str = "month"
    stock_column: str = "stock_id"
    return_column: str = "fwd_return"

    @property
    def factor_columns(self) -> list[str]:
        return [f"f{j + 1:02d}" for j in range(self.n_factors)]

    @property
    def header(self) -> list[str]:
        return [self.month_column, self.stock_column, *self.factor_columns, self.return_column]


class FactorPanel:
    """Immutable dense panel.

    ``fwd_return`` is stored with the feature month: the value at month ``t`` is
    the realized return over ``t -> t+1``.
    """

    def __init__(self, first_month: MonthId, stock_ids: Sequence[str], factors: np.ndarray,
                 fwd_return: np.ndarray, present: np.ndarray):
        n_months, n_stocks = np.shape(present)
        if factors.shape[:2] != (n_months, n_stocks) or fwd_return.shape != (n_months, n_stocks):
            raise ValueError("inconsistent panel array shapes")
        if n_months == 0 or not present.any():
            raise EmptyPanel("panel has no records")
        self.first_month = first_month
        self.stock_ids = tuple(stock_ids)
        if list(self.stock_ids) != sorted(self.stock_ids) or len(set(self.stock_ids)) != n_stocks:
            raise ValueError("stock_ids must be unique and sorted")
        self._index = {s: i for i, s in enumerate(self.stock_ids)}
        present = np.array(present, dtype=bool)
        factors = np.where(present[..., None], factors, np.nan).astype(np.float64)
        fwd_return = np.where(present, fwd_return, np.nan).astype(np.float64)
        for a in (factors, fwd_return, present):
            a.setflags(write=False)
        self.factors = factors
        self.fwd_return = fwd_return
        self.present = present
        self._tracers: list[list] = []

    # -- calendar ---------------------------------------------------------
    @property
    def n_months(self) -> int:
        return self.present.shape[0]

    @property
    def n_stocks(self) -> int:
        return self.present.shape[1]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[2]

    @property
    def last_month(self) -> MonthId:
        return self.first_month.plus_months(self.n_months - 1)

    @property
    def month_range(self) -> tuple[MonthId, MonthId]:
        return self.first_month, self.last_month

    def months(self) -> list[MonthId]:
        return [self.first_month.plus_months(k) for k in range(self.n_months)]

    def contains(self, m: MonthId) -> bool:
        return 0 <= m.index - self.first_month.index < self.n_months

    def month_pos(self, m: MonthId) -> int:
        pos = m.index - self.first_month.index
        if not 0 <= pos < self.n_months:
            raise MonthOutOfRange(f"{m} outside panel range {self.first_month}..{self.last_month}")
        return pos

    def stock_pos(self, stock_id: str) -> int:
        return self._index[stock_id]

    def __len__(self):
        return int(self.present.sum())

    # -- traced accessors -------------------------------------------------
    # Every read used for model building goes through these two methods so a
    # tracing harness can prove the absence of look-ahead.
    def factor_slice(self, m: MonthId) -> np.ndarray:
        pos = self.month_pos(m)
        self._trace("factors", m)
        return self.factors[pos]

    def return_slice(self, m: MonthId) -> np.ndarray:
        pos = self.month_pos(m)
        self._trace("fwd_return", m)
        return self.fwd_return[pos]

    def mark(self, event: str, m: MonthId):
        """Insert an event marker into any active traces."""
        self._trace(event, m)

    def _trace(self, kind: str, m: MonthId):
        for log in self._tracers:
            log.append((kind, m))

    @contextmanager
    def tracing(self) -> Iterator[list]:
        log: list = []
        self._tracers.append(log)
        try:
            yield log
        finally:
            self._tracers.remove(log)

    # -- record view ------------------------------------------------------
    def universe_mask(self, m: MonthId) -> np.ndarray:
        return self.present[self.month_pos(m)]

    def record(self, m: MonthId, stock_id: str) -> FactorRecord:
        pos, s = self.month_pos(m), self._index[stock_id]
        if not self.present[pos, s]:
            raise KeyError((str(m), stock_id))
        f = self.factors[pos, s].copy()
        return FactorRecord(stock_id, m, f, float(self.fwd_return[pos, s]), np.isnan(f))

    def records(self) -> Iterator[FactorRecord]:
        for pos in range(self.n_months):
            m = self.first_month.plus_months(pos)
            for s in np.flatnonzero(self.present[pos]):
                yield self.record(m, self.stock_ids[s])


def universe_at(panel: FactorPanel, m) -> list[str]:
    """Stocks with a record at ``m``, sorted by id."""
    mask = panel.universe_mask(as_month(m))
    return [panel.stock_ids[s] for s in np.flatnonzero(mask)]


def panel_from_records(records, n_factors: int = N_FACTORS) -> FactorPanel:
    """Build a panel from ``(month, stock_id, factors, fwd_return)`` tuples."""
    rows = []
    seen = set()
    for month, stock, factors, fwd in records:
        month = as_month(month)
        key = (month.index, stock)
        if key in seen:
            raise DuplicateKey(month, stock)
        seen.add(key)
        rows.append((month, stock, factors, fwd))
    if not rows:
        raise EmptyPanel("no records")
    first = min(r[0] for r in rows)
    last = max(r[0] for r in rows)
    stocks = sorted({r[1] for r in rows})
    sidx = {s: i for i, s in enumerate(stocks)}
    n_months = last.index - first.index + 1
    factors = np.full((n_months, len(stocks), n_factors), np.nan)
    fwd = np.full((n_months, len(stocks)), np.nan)
    present = np.zeros((n_months, len(stocks)), dtype=bool)
    for month, stock, f, r in rows:
        t, s = month.index - first.index, sidx[stock]
        factors[t, s] = np.asarray(f, dtype=np.float64)
        fwd[t, s] = np.nan if r is None else r
        present[t, s] = True
    return FactorPanel(first, stocks, factors, fwd, present)


def _parse_float(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        v = float(cell)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_panel(path, spec: PanelCsvSpec = PanelCsvSpec()) -> FactorPanel:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyPanel(f"{path}: empty file") from None
        header = [h.strip().lstrip("﻿") for h in header]
        if header != spec.header:
            raise MalformedHeader(f"{path}: expected header {','.join(spec.header)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(spec.header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(spec.header)} fields, got {len(row)}")
            try:
                month = MonthId.parse(row[0])
            except ValueError as e:
                raise MalformedRow(f"{path}:{lineno}: {e}") from None
            stock = row[1].strip()
            if not stock:
                raise MalformedRow(f"{path}:{lineno}: empty stock_id")
            factors = [_parse_float(c) for c in row[2:2 + spec.n_factors]]
            records.append((month, stock, factors, _parse_float(row[-1])))
    if not records:
        raise EmptyPanel(f"{path}: no data rows")
    return panel_from_records(records, spec.n_factors)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_panel(panel: FactorPanel, path, spec: PanelCsvSpec = PanelCsvSpec()) -> None:
    """Write ``panel`` in the CSV layout ``load_panel`` reads; floats use repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(spec.header)
        for pos in range(panel.n_months):
            m = str(panel.first_month.plus_months(pos))
            for s in np.flatnonzero(panel.present[pos]):
                w.writerow([m, panel.stock_ids[s], *(_fmt(v) for v in panel.factors[pos, s]),
                            _fmt(panel.fwd_return[pos, s])])


@dataclass
class ValidationReport:
    universe_sizes: dict[str, int]
    missing_rate: list[float]
    small_months: list[str]
    missing_returns: list[str]
    floor: int
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings

    def to_dict(self) -> dict:
        return {
            "floor": self.floor,
            "universe_sizes": self.universe_sizes,
            "missing_rate": self.missing_rate,
            "small_months": self.small_months,
            "missing_returns": self.missing_returns,
            "warnings": self.warnings,
        }


def validate_panel(panel: FactorPanel, floor: int = 30) -> ValidationReport:
    sizes = panel.present.sum(axis=1)
    months = [str(m) for m in panel.months()]
    n_records = int(sizes.sum())
    missing = np.isnan(panel.factors) & panel.present[..., None]
    rates = (missing.sum(axis=(0, 1)) / n_records).tolist()

    small = [months[t] for t in range(panel.n_months) if sizes[t] < floor]
    # fwd_return is required for every month before the last one
    no_ret = np.isnan(panel.fwd_return[:-1]) & panel.present[:-1]
    missing_returns = [months[t] for t in range(panel.n_months - 1) if no_ret[t].any()]

    warnings = []
    for m in small:
        warnings.append(f"{m}: universe size {int(sizes[months.index(m)])} below floor {floor}")
    for m in missing_returns:
        t = months.index(m)
        warnings.append(f"{m}: {int(no_ret[t].sum())} records without fwd_return")
    for j, r in enumerate(rates):
        if r > 0:
            warnings.append(f"f{j + 1:02d}: missing rate {r:.4f}")
    return ValidationReport(
        universe_sizes={m: int(n) for m, n in zip(months, sizes)},
        missing_rate=rates,
        small_months=small,
        missing_returns=missing_returns,
        floor=floor,
        warnings=warnings,
    )
