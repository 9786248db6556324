import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from crossret.errors import TooFewMonths, UniverseTooSmall
from crossret.portfolio import LsMonthReturn, ls_month, summarize_strategy
from test_metrics import SIX_RETURNS, SIX_SCORES, as_map


def test_six_stock_example():
    m = ls_month(as_map(SIX_SCORES), as_map(SIX_RETURNS), "tertile", "2002-01")
    assert (m.long_return, m.short_return, m.ls_return) == (3.0, -3.5, 6.5)
    assert (m.n_long, m.n_short, m.degenerate) == (2, 2, False)


def test_constant_scores_flagged():
    m = ls_month(as_map([1.0] * 6), as_map(SIX_RETURNS), "tertile")
    assert m.degenerate
    # ids S000,S001 form the bottom, S004,S005 the top
    assert m.ls_return == (-3 - 4) / 2 - (5 + 1) / 2


def test_equal_returns_give_zero():
    assert ls_month(as_map(SIX_SCORES), as_map([0.02] * 6), "quintile").ls_return == 0.0
    with pytest.raises(UniverseTooSmall):
        ls_month(as_map([1, 2, 3, 4]), as_map([1, 2, 3, 4]), "quintile")


def annualization_errors():
    """Relative errors of the [1%, 2%, 3%] example against 24 / sqrt(12) / 24 / sqrt(12)."""
    s = summarize_strategy([0.01, 0.02, 0.03])
    want = (24.0, np.sqrt(12.0), 24.0 / np.sqrt(12.0))
    got = (s.return_pct, s.risk_pct, s.r_over_r)
    return [abs(g - w) / w for g, w in zip(got, want)]


def test_annualization_example():
    assert max(annualization_errors()) < 1e-9
    assert summarize_strategy([0.01, 0.02, 0.03]).r_over_r == pytest.approx(6.93, abs=5e-3)


def test_summary_edge_cases():
    s = summarize_strategy([0.01] * 5)
    assert s.return_pct == pytest.approx(12.0) and s.risk_pct == 0.0 and s.r_over_r is None
    s = summarize_strategy([0.01, -0.01])
    assert s.return_pct == 0.0 and s.r_over_r == 0.0
    with pytest.raises(TooFewMonths):
        summarize_strategy([0.01])
    m = LsMonthReturn("2002-01", 0.03, 0.01, 1, 1)
    assert summarize_strategy([m, m]).return_pct == pytest.approx(24.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 50), st.integers(0, 2 ** 31), st.floats(-0.5, 0.5), st.sampled_from(["tertile", "quintile"]))
def test_sign_flip_and_market_neutrality(n, seed, c, frac):
    rng = np.random.default_rng(seed)
    s, r = as_map(rng.permutation(n)), as_map(rng.standard_normal(n) * 0.05)
    m = ls_month(s, r, frac)
    flipped = ls_month({k: -v for k, v in s.items()}, r, frac)
    assert flipped.ls_return == -m.ls_return
    shifted = ls_month(s, {k: v + c for k, v in r.items()}, frac)
    assert shifted.ls_return == pytest.approx(m.ls_return, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=2, max_size=30), st.randoms())
def test_summary_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    a, b = summarize_strategy(xs), summarize_strategy(ys)
    assert a.return_pct == pytest.approx(b.return_pct, abs=1e-12)
    assert a.risk_pct == pytest.approx(b.risk_pct, abs=1e-12)
    assume(a.r_over_r is not None and a.risk_pct > 1e-6)
    assert a.r_over_r * a.risk_pct == pytest.approx(a.return_pct, rel=1e-12, abs=1e-12)
