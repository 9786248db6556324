import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crossret.panel import FactorPanel, MonthId  # noqa: E402


def random_panel(n_months=30, n_stocks=12, seed=0, start="2000-01", n_factors=25):
    """Dense random panel with every stock present every month."""
    rng = np.random.default_rng(seed)
    factors = rng.normal(size=(n_months, n_stocks, n_factors))
    fwd = rng.normal(0.0, 0.05, size=(n_months, n_stocks))
    present = np.ones((n_months, n_stocks), dtype=bool)
    ids = [f"S{k:03d}" for k in range(n_stocks)]
    return FactorPanel(MonthId.parse(start), ids, factors, fwd, present)


@pytest.fixture
def small_panel():
    return random_panel()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(results):
        r = results[n]
        status = "PASS" if r["ok"] else "FAIL"
        tr.write_line(f"criterion {n:2d} {status}  {r['title']} ({r['seconds']:.1f}s): {r['detail']}")
