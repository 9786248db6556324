import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossret.errors import DimensionMismatch, NonFiniteFeature, SerializationError, TooFewExamples
from crossret.svr import (
    SVR_BEST, SVR_GRID, ConvergenceWarning, KernelRowCache, SvrHyper, SvrModel, fit_svr, kkt_report,
    load_svr, predict_svr, rbf_kernel, rbf_matrix, save_svr,
)
from oracles import svr_oracle_predict


def oracle_fixture():
    """The frozen 10-point fixture: rank-scaled-like features and targets."""
    rng = np.random.default_rng(7)
    X = np.round(rng.random((10, 125)), 4)
    z = np.round(rng.random(10), 4)
    X_eval = np.vstack([X, np.round(rng.random((5, 125)), 4)])
    return X, z, X_eval


def test_grid():
    assert len(SVR_GRID) == 24
    assert {(h.C, h.gamma, h.epsilon) for h in SVR_GRID} == {
        (C, g, e) for C in (0.1, 1.0, 10.0) for g in (1e-4, 1e-3, 1e-2, 1e-1) for e in (0.01, 0.1)}
    assert SVR_BEST.name == "SVR_C0.1_G0.01_E0.1"
    with pytest.raises(ValueError):
        SvrHyper(C=0)


def test_kernel_examples():
    x = np.array([0.3, 0.7])
    assert rbf_kernel(x, x, 0.5) == 1.0
    assert rbf_kernel(x, -x, 0.0) == 1.0
    assert rbf_kernel(np.array([0.0]), np.array([1.0]), 1.0) == pytest.approx(0.36787944117144233, rel=1e-15)
    with pytest.raises(DimensionMismatch):
        rbf_kernel(np.zeros(2), np.zeros(3), 1.0)
    A = np.random.default_rng(0).random((4, 3))
    B = np.random.default_rng(1).random((5, 3))
    K = rbf_matrix(A, B, 0.7)
    assert K[2, 3] == pytest.approx(rbf_kernel(A[2], B[3], 0.7), rel=1e-14)


def test_kernel_cache_lru():
    X = np.random.default_rng(0).random((50, 4))
    cache = KernelRowCache(X, 0.5, cache_mb=3 * 50 * 8 / 2 ** 20)
    assert cache.capacity == 3
    r0 = cache.row(0)
    for i in (1, 2, 3):
        cache.row(i)
    np.testing.assert_allclose(cache.row(0), r0)
    np.testing.assert_allclose(r0, rbf_matrix(X[:1], X, 0.5)[0], rtol=1e-14)


def test_constant_targets():
    X = np.random.default_rng(1).random((30, 5))
    m = fit_svr(X, np.full(30, 0.4), SvrHyper(1.0, 0.5, 0.1))
    assert np.all(m.beta == 0)
    assert m.b == pytest.approx(0.4, abs=1e-12)
    np.testing.assert_allclose(m.predict(np.random.default_rng(2).random((6, 5))), 0.4, atol=1e-12)
    assert kkt_report(m, X, np.full(30, 0.4)) == 0.0


def svr_oracle_max_error(grid=SVR_GRID):
    """Largest |prediction - oracle| over the grid, plus the worst constraint residuals."""
    X, z, X_eval = oracle_fixture()
    worst, worst_sum, box_ok = 0.0, 0.0, True
    for h in grid:
        expected, _, _ = svr_oracle_predict(X, z, h.C, h.gamma, h.epsilon, X_eval)
        m = fit_svr(X, z, h)
        worst = max(worst, float(np.max(np.abs(predict_svr(m, X_eval) - expected))))
        worst_sum = max(worst_sum, abs(float(m.beta.sum())))
        box_ok &= bool(np.all(np.abs(m.beta) <= h.C))
    return worst, worst_sum, box_ok


def test_oracle_equivalence_best_cells():
    worst, worst_sum, box_ok = svr_oracle_max_error([SVR_BEST, SvrHyper(10.0, 1e-3, 0.01)])
    assert worst < 1e-3 and worst_sum < 1e-12 and box_ok


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 12), st.sampled_from(SVR_GRID))
def test_oracle_equivalence_random(seed, n, h):
    rng = np.random.default_rng(seed)
    X, z = rng.random((n, 6)), rng.random(n)
    expected, _, _ = svr_oracle_predict(X, z, h.C, h.gamma, h.epsilon, X)
    m = fit_svr(X, z, replace(h, tol=1e-5))
    assert np.max(np.abs(m.predict(X) - expected)) < 1e-3


def test_tolerance_controls_kkt():
    rng = np.random.default_rng(3)
    X, z = rng.random((200, 10)), rng.random(200)
    for tol in (1e-3, 1e-2):
        m = fit_svr(X, z, SvrHyper(1.0, 0.5, 0.05, tol=tol))
        assert m.converged
        assert kkt_report(m, X, z) <= tol
        assert abs(m.beta.sum()) < 1e-12
        assert np.all(np.abs(m.beta) <= 1.0)


def test_iteration_cap_reported():
    rng = np.random.default_rng(4)
    X, z = rng.random((100, 5)), rng.random(100)
    h = SvrHyper(10.0, 1.0, 0.01, max_iter=1)
    with pytest.warns(ConvergenceWarning):
        m = fit_svr(X, z, h)
    assert not m.converged and m.n_iter == 1
    assert kkt_report(m, X, z) > h.tol


def test_free_support_vectors_on_tube():
    rng = np.random.default_rng(5)
    X, z = rng.random((80, 4)), rng.random(80)
    h = SvrHyper(1.0, 1.0, 0.1, tol=1e-6)
    m = fit_svr(X, z, h)
    free = (m.beta != 0) & (np.abs(m.beta) < h.C)
    assert free.any()
    r = np.abs(z[free] - m.predict(X[free]))
    assert np.all(r <= h.epsilon + 1e-5)


def test_dual_objective_non_decreasing():
    rng = np.random.default_rng(6)
    X, z = rng.random((60, 4)), rng.random(60)
    m = fit_svr(X, z, SvrHyper(1.0, 0.8, 0.05), trace=True)
    d = np.diff(m.objective_trace)
    assert len(d) == m.n_iter and np.all(d >= -1e-12)


def test_small_gamma_limit():
    rng = np.random.default_rng(7)
    X, z = rng.random((20, 3)), rng.random(20)
    m = fit_svr(X, z, SvrHyper(1.0, 1e-12, 0.01))
    far = 1e3 * rng.random((4, 3))
    tiny = SvrModel(m.support_vectors, m.beta, m.b, 1e-300, m.hyper)
    np.testing.assert_allclose(predict_svr(tiny, far), m.b + m.beta.sum(), atol=1e-12)
    zero = SvrModel(X, np.zeros(20), 0.25, 1.0, m.hyper)
    np.testing.assert_array_equal(zero.predict(far), 0.25)


def test_errors():
    with pytest.raises(TooFewExamples):
        fit_svr(np.zeros((1, 3)), np.zeros(1), SVR_BEST)
    X = np.zeros((3, 2))
    X[1, 1] = np.nan
    with pytest.raises(NonFiniteFeature):
        fit_svr(X, np.zeros(3), SVR_BEST)
    m = fit_svr(np.random.default_rng(0).random((5, 2)), np.arange(5.0), SVR_BEST)
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((2, 3)))


def test_serialization(tmp_path):
    rng = np.random.default_rng(8)
    X, z = rng.random((40, 6)), rng.random(40)
    m = fit_svr(X, z, SvrHyper(1.0, 0.3, 0.05))
    save_svr(m, tmp_path / "s.npz")
    back = load_svr(tmp_path / "s.npz")
    assert back.b == m.b and back.hyper == m.hyper
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    (tmp_path / "bad.npz").write_bytes(b"")
    with pytest.raises(SerializationError):
        load_svr(tmp_path / "bad.npz")


def test_deterministic():
    rng = np.random.default_rng(9)
    X, z = rng.random((70, 5)), rng.random(70)
    a = fit_svr(X, z, SVR_BEST)
    b = fit_svr(X, z, SVR_BEST)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert a.b == b.b
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_svr(X, z, SVR_BEST)
    assert math.isfinite(a.b)
