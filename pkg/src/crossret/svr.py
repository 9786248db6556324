"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved by sequential minimal optimization on the usual doubled
variable set ``a = (alpha, alpha*)`` with labels ``(+1, -1)``::

    min_a  1/2 a'Qa + p'a   s.t.  y'a = 0,  0 <= a <= C
    Q_ts = y_t y_s k(x_t, x_s),   p = (eps - z, eps + z)

so that ``beta = alpha - alpha*`` satisfies ``sum(beta) = 0`` and
``|beta| <= C``.  The working pair is the maximal violator ``i`` together with
the ``j`` that gives the largest second-order decrease of the objective.
Kernel rows are kept in a bounded LRU cache.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NonFiniteFeature, SerializationError, TooFewExamples
from .serial import read_npz, write_npz

TAU = 1e-12
SNAP = 1e-15


@dataclass(frozen=True)
class SvrHyper:
    C: float = 0.1
    gamma: float = 0.01
    epsilon: float = 0.1
    tol: float = 1e-3
    max_iter: int = 1_000_000
    cache_mb: float = 1024.0

    def __post_init__(self):
        if not self.C > 0 or not self.gamma > 0 or self.epsilon < 0:
            raise ValueError("need C > 0, gamma > 0, epsilon >= 0")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")

    @property
    def name(self) -> str:
        return f"SVR_C{self.C:g}_G{self.gamma:g}_E{self.epsilon:g}"


SVR_GRID = [SvrHyper(C, g, e) for C in (0.1, 1.0, 10.0) for g in (1e-4, 1e-3, 1e-2, 1e-1)
            for e in (0.01, 0.1)]
SVR_BEST = SvrHyper(0.1, 0.01, 0.1)


class ConvergenceWarning(UserWarning):
    pass


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    d = x - y
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sa = np.einsum("ij,ij->i", A, A)
    sb = np.einsum("ij,ij->i", B, B)
    d2 = sa[:, None] + sb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


class KernelRowCache:
    """LRU cache of kernel rows ``k(x_i, X)`` bounded by a memory budget."""

    def __init__(self, X: np.ndarray, gamma: float, cache_mb: float):
        self.X = X
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        self.capacity = max(2, int(cache_mb * 2**20 // (8 * len(X))))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            return r
        self.misses += 1
        d2 = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d2, 0.0, out=d2)
        d2[i] = 0.0
        r = np.exp(-self.gamma * d2)
        self._rows[i] = r
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return r


@njit(cache=True)
def _in_up(a_t, y_t, C):
    return a_t < C if y_t > 0 else a_t > 0.0


@njit(cache=True)
def _in_low(a_t, y_t, C):
    return a_t > 0.0 if y_t > 0 else a_t < C


@njit(cache=True)
def _select_i(G, a, y, C):
    gmax = -np.inf
    best = -1
    for t in range(G.shape[0]):
        if _in_up(a[t], y[t], C):
            v = -y[t] * G[t]
            if v > gmax:
                gmax = v
                best = t
    return best, gmax


@njit(cache=True)
def _select_j(G, a, y, C, i, gmax, krow_i):
    """Second-order choice of j; also returns the minimum over I_low."""
    n = krow_i.shape[0]
    gmin = np.inf
    best = -1
    obj_min = np.inf
    for t in range(G.shape[0]):
        if not _in_low(a[t], y[t], C):
            continue
        v = -y[t] * G[t]
        if v < gmin:
            gmin = v
        b = gmax - v
        if b > 0.0:
            quad = 2.0 - 2.0 * krow_i[t % n]  # k_ii + k_tt - 2 k_it with k_ii = 1
            if quad <= 0.0:
                quad = TAU
            obj = -(b * b) / quad
            if obj <= obj_min:
                obj_min = obj
                best = t
    return best, gmin


@njit(cache=True)
def _update_pair(a, G, y, C, i, j, krow_i, krow_j):
    n = krow_i.shape[0]
    kij = krow_i[j % n]
    ai_old = a[i]
    aj_old = a[j]
    if y[i] != y[j]:
        # Q_ij = y_i y_j k_ij = -k_ij
        quad = 2.0 + 2.0 * kij
        if quad <= 0.0:
            quad = TAU
        delta = (-G[i] - G[j]) / quad
        diff = a[i] - a[j]
        a[i] += delta
        a[j] += delta
        if diff > 0.0:
            if a[j] < 0.0:
                a[j] = 0.0
                a[i] = diff
        else:
            if a[i] < 0.0:
                a[i] = 0.0
                a[j] = -diff
        if diff > 0.0:
            if a[i] > C:
                a[i] = C
                a[j] = C - diff
        else:
            if a[j] > C:
                a[j] = C
                a[i] = C + diff
    else:
        quad = 2.0 - 2.0 * kij
        if quad <= 0.0:
            quad = TAU
        delta = (G[i] - G[j]) / quad
        s = a[i] + a[j]
        a[i] -= delta
        a[j] += delta
        if s > C:
            if a[i] > C:
                a[i] = C
                a[j] = s - C
        else:
            if a[j] < 0.0:
                a[j] = 0.0
                a[i] = s
        if s > C:
            if a[j] > C:
                a[j] = C
                a[i] = s - C
        else:
            if a[i] < 0.0:
                a[i] = 0.0
                a[j] = s
    # clamp rounding residue (C - diff etc.) onto the bounds so the status
    # tests below and in _rho see exact box membership
    snap = SNAP * C
    for t in (i, j):
        if a[t] <= snap:
            a[t] = 0.0
        elif C - a[t] <= snap:
            a[t] = C
    dai = a[i] - ai_old
    daj = a[j] - aj_old
    yi = y[i]
    yj = y[j]
    for t in range(G.shape[0]):
        k = t % n
        G[t] += y[t] * (yi * krow_i[k] * dai + yj * krow_j[k] * daj)
    return dai, daj


@njit(cache=True)
def _rho(G, a, y, C):
    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for t in range(G.shape[0]):
        yg = y[t] * G[t]
        if a[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0.0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    if n_free > 0:
        return s_free / n_free
    return 0.5 * (ub + lb)


@dataclass
class SvrModel:
    support_vectors: np.ndarray
    beta: np.ndarray
    b: float
    gamma: float
    hyper: SvrHyper
    n_iter: int = 0
    converged: bool = True
    objective_trace: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return predict_svr(self, X)


def _doubled_objective(a, G, p):
    return 0.5 * float(a @ (G + p))


def fit_svr(X, z, hyper: SvrHyper, trace: bool = False) -> SvrModel:
    """Fit epsilon-SVR on rows ``X`` and targets ``z``.

    Hitting ``hyper.max_iter`` emits a ``ConvergenceWarning`` and returns the
    partial model with ``converged=False``.  With ``trace=True`` the dual
    objective (maximisation form) is recorded after every pair update.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(z):
        raise DimensionMismatch(f"X {X.shape} and z {z.shape} do not align")
    n = len(z)
    if n < 2:
        raise TooFewExamples("epsilon-SVR needs at least 2 examples")
    if not (np.isfinite(X).all() and np.isfinite(z).all()):
        raise NonFiniteFeature("training data contains non-finite values")

    C = float(hyper.C)
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([hyper.epsilon - z, hyper.epsilon + z])
    a = np.zeros(2 * n)
    G = p.copy()
    cache = KernelRowCache(X, hyper.gamma, hyper.cache_mb)
    objective = []
    if trace:
        objective.append(-_doubled_objective(a, G, p))

    it = 0
    converged = False
    while it < hyper.max_iter:
        i, gmax = _select_i(G, a, y, C)
        if i < 0:
            converged = True
            break
        krow_i = cache.row(i % n)
        j, gmin = _select_j(G, a, y, C, i, gmax, krow_i)
        if j < 0 or gmax - gmin < hyper.tol:
            converged = True
            break
        krow_j = cache.row(j % n)
        _update_pair(a, G, y, C, i, j, krow_i, krow_j)
        it += 1
        if trace:
            objective.append(-_doubled_objective(a, G, p))
    if not converged:
        i, gmax = _select_i(G, a, y, C)
        if i >= 0:
            _, gmin = _select_j(G, a, y, C, i, gmax, cache.row(i % n))
            converged = gmax - gmin < hyper.tol
        if not converged:
            warnings.warn(f"SMO stopped at the iteration cap ({hyper.max_iter}) before "
                          f"reaching tolerance {hyper.tol}", ConvergenceWarning, stacklevel=2)

    beta = a[:n] - a[n:]
    b = -_rho(G, a, y, C)
    return SvrModel(X.copy(), beta, float(b), hyper.gamma, hyper, it, converged, objective)


def predict_svr(model: SvrModel, X, chunk: int = 2048) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.support_vectors.shape[1]:
        raise DimensionMismatch(f"expected {model.support_vectors.shape[1]} features, got {X.shape[1]}")
    sv_mask = model.beta != 0.0
    sv = model.support_vectors[sv_mask]
    beta = model.beta[sv_mask]
    out = np.full(len(X), model.b)
    if len(beta):
        for s in range(0, len(X), chunk):
            out[s:s + chunk] += rbf_matrix(X[s:s + chunk], sv, model.gamma) @ beta
    return out


def kkt_report(model: SvrModel, X, z, hyper: SvrHyper | None = None) -> float:
    """Largest per-example violation of the epsilon-SVR optimality conditions.

    With residual ``r = z - f(x)``: ``beta = 0`` needs ``|r| <= eps``;
    ``0 < beta < C`` needs ``r = eps``; ``beta = C`` needs ``r >= eps``, and
    symmetrically for negative ``beta``.
    """
    hyper = hyper or model.hyper
    C, eps = hyper.C, hyper.epsilon
    r = np.asarray(z, dtype=np.float64) - predict_svr(model, X)
    beta = model.beta
    viol = np.zeros(len(r))
    zero = beta == 0.0
    viol[zero] = np.maximum(np.abs(r[zero]) - eps, 0.0)
    upper = beta >= C
    viol[upper] = np.maximum(eps - r[upper], 0.0)
    lower = beta <= -C
    viol[lower] = np.maximum(r[lower] + eps, 0.0)
    free_pos = (beta > 0.0) & ~upper
    viol[free_pos] = np.abs(r[free_pos] - eps)
    free_neg = (beta < 0.0) & ~lower
    viol[free_neg] = np.abs(r[free_neg] + eps)
    return float(viol.max()) if len(viol) else 0.0


def save_svr(model: SvrModel, path) -> None:
    # floats go through hex so the bias and gamma survive the JSON header exactly
    header = {"hyper": asdict(model.hyper), "b": model.b.hex(), "gamma": model.gamma.hex(),
              "n_iter": model.n_iter, "converged": model.converged}
    write_npz(path, "crossret.svr", header,
              {"support_vectors": model.support_vectors, "beta": model.beta})


def load_svr(path) -> SvrModel:
    h, d = read_npz(path, "crossret.svr")
    try:
        return SvrModel(d["support_vectors"], d["beta"], float.fromhex(h["b"]),
                        float.fromhex(h["gamma"]), SvrHyper(**h["hyper"]), h["n_iter"],
                        h["converged"])
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{path}: incomplete SVR dump ({e})") from None
