"""Walk-forward training, monthly scoring, ensembling and experiment grids.

For a prediction month ``m`` the model is fitted on the latest ``N`` months of
examples whose targets are realized by the end of ``m - 1`` (anchors
``m-1-N .. m-2``), then scores the stocks eligible at anchor ``m - 1``.  Scores
are later compared with the returns realized over month ``m``.
"""

from __future__ import annotations

import csv
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import forest as rf
from . import mlp
from . import svr
from .errors import (
    EmptyIntersection,
    InsufficientHistory,
    ModelFitFailure,
    MonthKeyMismatch,
)
from .metrics import (
    FRACTIONS,
    MonthlyEval,
    SummaryRow,
    aggregate_monthly,
    bucket_size,
    direction,
    mse,
    spearman_arrays,
)
from .panel import FactorPanel, MonthId, as_month
from .portfolio import LsMonthReturn, StrategySummary, ls_month, summarize_strategy
from .preprocess import ScaledCache, assemble_training_set, check_history, feature_matrix, rank_scale_array

log = logging.getLogger(__name__)


# -- model specs ----------------------------------------------------------------

@dataclass(frozen=True)
class MlpSpec:
    arch: mlp.ArchitectureSpec
    epochs: int = 100
    learning_rate: float = 1e-3

    @property
    def name(self) -> str:
        return self.arch.name


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple
    mode: str = "mean"        # "mean" of raw scores, or "rank" to average rank-scaled scores
    label: str = "Ensemble"

    @property
    def name(self) -> str:
        return self.label


ModelSpec = Union[MlpSpec, rf.ForestHyper, svr.SvrHyper, EnsembleSpec]


def spec_to_dict(spec) -> dict:
    if isinstance(spec, MlpSpec):
        return {"type": "mlp", "name": spec.name, "arch": spec.arch.to_dict(),
                "epochs": spec.epochs, "learning_rate": spec.learning_rate}
    if isinstance(spec, rf.ForestHyper):
        return {"type": "rf", "name": spec.name, "max_features": spec.max_features,
                "max_depth": spec.max_depth, "n_estimators": spec.n_estimators}
    if isinstance(spec, svr.SvrHyper):
        return {"type": "svr", "name": spec.name, "C": spec.C, "gamma": spec.gamma,
                "epsilon": spec.epsilon, "tol": spec.tol, "max_iter": spec.max_iter,
                "cache_mb": spec.cache_mb}
    if isinstance(spec, EnsembleSpec):
        return {"type": "ensemble", "name": spec.name, "mode": spec.mode,
                "members": [spec_to_dict(m) for m in spec.members]}
    raise TypeError(f"unknown model spec {spec!r}")


@dataclass(frozen=True)
class WalkForwardConfig:
    model: ModelSpec
    eval_start: MonthId
    eval_end: MonthId
    train_window: int = 120
    retrain_every: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "eval_start", as_month(self.eval_start))
        object.__setattr__(self, "eval_end", as_month(self.eval_end))
        if self.eval_end < self.eval_start:
            raise ValueError("eval_start must not be after eval_end")
        if self.train_window < 1 or self.retrain_every < 1:
            raise ValueError("train_window and retrain_every must be >= 1")

    @property
    def name(self) -> str:
        return self.model.name

    def prediction_months(self) -> list[MonthId]:
        n = self.eval_end.index - self.eval_start.index + 1
        return [self.eval_start.plus_months(k) for k in range(n)]

    def to_dict(self) -> dict:
        return {"model": spec_to_dict(self.model), "eval_start": str(self.eval_start),
                "eval_end": str(self.eval_end), "train_window": self.train_window,
                "retrain_every": self.retrain_every, "seed": self.seed}


def month_seed(master_seed: int, month: MonthId, name: str) -> int:
    """Seed for one fit; depends only on the master seed, month and model name."""
    ss = np.random.SeedSequence([master_seed & 0xFFFFFFFF, master_seed >> 32 & 0xFFFFFFFF,
                                 month.index, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- fitting --------------------------------------------------------------------

@dataclass
class FittedModel:
    spec: object
    model: object
    train_mse: float
    info: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        if isinstance(self.spec, MlpSpec):
            return mlp.predict(self.model, X)
        if isinstance(self.spec, rf.ForestHyper):
            return rf.predict_forest(self.model, X)
        return svr.predict_svr(self.model, X)


def fit_model(spec, ts, seed: int) -> FittedModel:
    if isinstance(spec, MlpSpec):
        init_seed, train_seed = np.random.SeedSequence(seed).generate_state(2)
        net = mlp.init_network(spec.arch, int(init_seed))
        cfg = mlp.TrainConfig(epochs=spec.epochs, learning_rate=spec.learning_rate, seed=int(train_seed))
        result = mlp.train(net, ts.X, ts.y, ts.batches(), cfg)
        return FittedModel(spec, result.net, result.final_mse,
                           {"initial_mse": result.loss_history[0]})
    if isinstance(spec, rf.ForestHyper):
        forest = rf.fit_forest(ts.X, ts.y, replace(spec, seed=seed))
        return FittedModel(spec, forest, mse(forest.predict(ts.X), ts.y))
    if isinstance(spec, svr.SvrHyper):
        model = svr.fit_svr(ts.X, ts.y, spec)
        return FittedModel(spec, model, mse(model.predict(ts.X), ts.y),
                           {"n_iter": model.n_iter, "converged": model.converged})
    raise TypeError(f"cannot fit {spec!r} directly")


# -- score sheets ---------------------------------------------------------------

class ScoreSheet:
    """Prediction month -> {stock_id: score}; months kept in insertion order."""

    def __init__(self, data: dict | None = None):
        self.data: dict[str, dict[str, float]] = dict(data or {})

    def __getitem__(self, month) -> dict:
        return self.data[str(month)]

    def __setitem__(self, month, scores: dict):
        self.data[str(month)] = dict(scores)

    def __len__(self):
        return len(self.data)

    def __eq__(self, other):
        return isinstance(other, ScoreSheet) and self.data == other.data

    def months(self) -> list[str]:
        return list(self.data)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["month", "stock_id", "score"])
            for m, scores in self.data.items():
                for s in sorted(scores):
                    w.writerow([m, s, repr(float(scores[s]))])

    @classmethod
    def from_csv(cls, path) -> "ScoreSheet":
        sheet = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                sheet.data.setdefault(row["month"], {})[row["stock_id"]] = float(row["score"])
        return sheet


def ensemble_scores(sheets: Sequence[ScoreSheet], mode: str = "mean") -> ScoreSheet:
    """Equal-weight average of score sheets over each month's common stocks."""
    if len(sheets) < 2:
        raise ValueError("an ensemble needs at least two score sheets")
    months = sheets[0].months()
    for s in sheets[1:]:
        if s.months() != months:
            raise MonthKeyMismatch("score sheets cover different months")
    out = ScoreSheet()
    for m in months:
        common = sorted(set.intersection(*(set(s[m]) for s in sheets)))
        if not common:
            raise EmptyIntersection(m)
        cols = np.array([[s[m][k] for k in common] for s in sheets])
        if mode == "rank":
            cols = np.vstack([rank_scale_array(c) for c in cols])
        elif mode != "mean":
            raise ValueError(f"unknown ensemble mode {mode!r}")
        avg = cols.sum(axis=0) / len(sheets)
        out[m] = dict(zip(common, avg.tolist()))
    return out


# -- walk forward ---------------------------------------------------------------

@dataclass
class FitDiagnostic:
    prediction_month: str
    train_month: str
    n_examples: int
    train_mse: float
    info: dict = field(default_factory=dict)


@dataclass
class WalkForwardResult:
    sheet: ScoreSheet
    fits: list


def check_config(panel: FactorPanel, config: WalkForwardConfig) -> None:
    check_history(panel, config.eval_start.minus_months(1), config.train_window)
    last_anchor = config.eval_end.minus_months(1)
    if last_anchor > panel.last_month:
        raise InsufficientHistory(f"eval_end {config.eval_end} needs features at {last_anchor}, "
                                  f"panel ends {panel.last_month}")


def walk_forward(panel: FactorPanel, config: WalkForwardConfig,
                 cache: ScaledCache | None = None) -> WalkForwardResult:
    if isinstance(config.model, EnsembleSpec):
        parts = [walk_forward(panel, replace(config, model=m), cache) for m in config.model.members]
        return WalkForwardResult(ensemble_scores([p.sheet for p in parts], config.model.mode),
                                 [f for p in parts for f in p.fits])
    check_config(panel, config)
    cache = cache or ScaledCache(panel)
    sheet = ScoreSheet()
    fits = []
    fitted = None
    for k, m in enumerate(config.prediction_months()):
        panel.mark("predict", m)
        anchor = m.minus_months(1)
        if k % config.retrain_every == 0:
            seed = month_seed(config.seed, m, config.name)
            ts = assemble_training_set(panel, anchor, config.train_window, cache)
            try:
                fitted = fit_model(config.model, ts, seed)
            except Exception as e:  # noqa: BLE001 - surfaced with the month attached
                raise ModelFitFailure(str(m), e) from e
            fits.append(FitDiagnostic(str(m), str(anchor), ts.K, fitted.train_mse, fitted.info))
            log.info("%s %s: fit on %d examples, train mse %.5f", config.name, m, ts.K,
                     fitted.train_mse)
        idx, X = feature_matrix(cache, anchor)
        scores = fitted.predict(X) if len(idx) else np.empty(0)
        sheet[m] = {panel.stock_ids[s]: float(v) for s, v in zip(idx, scores)}
    return WalkForwardResult(sheet, fits)


# -- evaluation -----------------------------------------------------------------

@dataclass
class BacktestReport:
    name: str
    config: dict
    evals: list = field(default_factory=list)
    summary: SummaryRow | None = None
    ls: dict = field(default_factory=dict)          # fraction -> [LsMonthReturn]
    strategy: dict = field(default_factory=dict)    # fraction -> StrategySummary
    fits: list = field(default_factory=list)
    sheet: ScoreSheet | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def realized_returns(panel: FactorPanel, month) -> dict:
    """Returns realized over prediction month ``month`` (stored at ``month - 1``)."""
    anchor = as_month(month).minus_months(1)
    r = panel.return_slice(anchor)
    return {panel.stock_ids[s]: float(r[s]) for s in np.flatnonzero(np.isfinite(r))}


def evaluate_month(month: str, scores: dict, returns: dict):
    keys = sorted(k for k in scores if k in returns)
    s = np.array([scores[k] for k in keys])
    r = np.array([returns[k] for k in keys])
    sc, rr = dict(zip(keys, s)), dict(zip(keys, r))
    dirs = {f: direction(sc, rr, f) for f in FRACTIONS}
    ls = {f: ls_month(sc, rr, f, month) for f in FRACTIONS}
    ev = MonthlyEval(month, spearman_arrays(s, r), dirs, mse(s, rank_scale_array(r)), len(keys),
                     {f: bucket_size(len(keys), f) for f in FRACTIONS})
    return ev, ls


def evaluate_sheet(panel: FactorPanel, sheet: ScoreSheet, name: str, config: dict) -> BacktestReport:
    rep = BacktestReport(name, config, sheet=sheet, ls={f: [] for f in FRACTIONS})
    for m in sheet.months():
        ev, ls = evaluate_month(m, sheet[m], realized_returns(panel, m))
        rep.evals.append(ev)
        for f in FRACTIONS:
            rep.ls[f].append(ls[f])
    rep.summary = aggregate_monthly(rep.evals)
    if len(rep.evals) >= 2:
        rep.strategy = {f: summarize_strategy(rep.ls[f]) for f in FRACTIONS}
    return rep


def _run_base(args):
    panel, config = args
    return walk_forward(panel, config)


def _base_key(config: WalkForwardConfig):
    return (repr(config.model), str(config.eval_start), str(config.eval_end),
            config.train_window, config.retrain_every, config.seed)


def run_experiment(panel: FactorPanel, configs: Sequence[WalkForwardConfig],
                   threads: int = 1) -> list[BacktestReport]:
    """Run every config and evaluate it; failures are recorded per config.

    Single-model walk-forwards are deduplicated, so an ensemble reuses the
    score sheets of members that also appear as standalone configs.
    """
    if not configs:
        return []
    base: dict = {}
    for c in configs:
        members = c.model.members if isinstance(c.model, EnsembleSpec) else (c.model,)
        for m in members:
            bc = replace(c, model=m)
            base.setdefault(_base_key(bc), bc)
    keys = list(base)
    results: dict = {}
    jobs = [(panel, base[k]) for k in keys]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_base, j) for j in jobs]
            for k, fut in zip(keys, futures):
                try:
                    results[k] = fut.result()
                except Exception as e:  # noqa: BLE001
                    results[k] = e
    else:
        cache = ScaledCache(panel)
        for k, (_, bc) in zip(keys, jobs):
            try:
                results[k] = walk_forward(panel, bc, cache)
            except Exception as e:  # noqa: BLE001
                log.info("%s failed: %s", bc.name, e)
                results[k] = e

    reports = []
    for c in configs:
        try:
            if isinstance(c.model, EnsembleSpec):
                parts = [results[_base_key(replace(c, model=m))] for m in c.model.members]
                for p in parts:
                    if isinstance(p, Exception):
                        raise p
                wf = WalkForwardResult(ensemble_scores([p.sheet for p in parts], c.model.mode),
                                       [f for p in parts for f in p.fits])
            else:
                wf = results[_base_key(c)]
                if isinstance(wf, Exception):
                    raise wf
            rep = evaluate_sheet(panel, wf.sheet, c.name, c.to_dict())
            rep.fits = wf.fits
        except Exception as e:  # noqa: BLE001
            rep = BacktestReport(c.name, c.to_dict(), error=f"{type(e).__name__}: {e}")
        reports.append(rep)
    return reports


def cumulative_ls(series: Sequence[LsMonthReturn]) -> np.ndarray:
    """Running sum of monthly long-short returns (arithmetic, like the annualization)."""
    return np.cumsum([s.ls_return for s in series])


__all__ = [
    "BacktestReport", "EnsembleSpec", "FitDiagnostic", "MlpSpec", "ScoreSheet",
    "StrategySummary", "WalkForwardConfig", "WalkForwardResult", "cumulative_ls",
    "ensemble_scores", "evaluate_sheet", "fit_model", "month_seed", "run_experiment",
    "walk_forward",
]
