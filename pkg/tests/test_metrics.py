from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gentlegrip.metrics import (
    EmptySeriesWarning, ShapeError, UndefinedRateError, avg_during_contact, episode_metrics,
    from_csv, max_transient, retention_rate, summarize, to_csv,
)


def top_mean_oracle(values, q=0.05):
    vals = sorted(float(v) for v in values)
    k = max(1, math.ceil(q * len(vals)))
    return float(np.array(vals[len(vals) - k:]).sum() / k)


def masked_mean_oracle(values, mask):
    sel = [float(v) for v, m in zip(values, mask) if m]
    return float(np.array(sel).sum() / len(sel)) if sel else 0.0


def fake_log(task, level, success, ag, mg=None, steps=10):
    m = {"AG": ag, "MG": mg if mg is not None else ag * 2, "AA": ag / 10, "MA": ag / 5}
    return {"header": {"task_id": task, "force_level": level},
            "summary": {"success": success, "metrics": m, "n_steps": steps}}


def test_max_transient_examples():
    assert max_transient(np.arange(1, 101)) == 98.0
    assert max_transient([4.2] * 17) == pytest.approx(4.2)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert max_transient([]) == 0.0
    assert any(issubclass(x.category, EmptySeriesWarning) for x in w)


def test_avg_contact_examples():
    assert avg_during_contact([1, 2, 3], [False] * 3) == 0.0
    assert avg_during_contact([5.0] * 4, [True] * 4) == 5.0
    with pytest.raises(ShapeError):
        avg_during_contact([1, 2], [True])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=300))
def test_max_transient_matches_oracle(values):
    assert max_transient(values) == top_mean_oracle(values)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=200), st.randoms())
def test_metrics_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert max_transient(values) == max_transient(shuffled)
    a = avg_during_contact(values, [v > 0.1 for v in values])
    b = avg_during_contact(shuffled, [v > 0.1 for v in shuffled])
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@given(st.lists(st.floats(0, 50), min_size=1, max_size=200))
def test_episode_metric_ordering(grip):
    m = episode_metrics(grip, np.array(grip) / 3)
    assert all(v >= 0 for v in m.values())
    if m["contact_steps"]:
        assert m["MG"] >= m["AG"] - 1e-12 and m["MA"] >= m["AA"] - 1e-12


def test_retention_examples():
    assert retention_rate(36, 50) == 72.0
    assert retention_rate(0, 50) == 0.0
    assert retention_rate(50, 50) == 100.0
    with pytest.raises(UndefinedRateError):
        retention_rate(0, 0)


def test_summarize_single_episode():
    rows = summarize([fake_log("t0", 100, True, 12.0)])
    r = rows[0]
    assert (r.ag, r.mg, r.n, r.sr) == (12.0, 24.0, 1, 1.0)


def test_summarize_mixed_successes():
    logs = [fake_log("t0", 25, True, 4.0), fake_log("t0", 25, True, 6.0),
            fake_log("t0", 25, False, 100.0)]
    r = summarize(logs)[0]
    assert r.sr == pytest.approx(2 / 3)
    assert r.ag == 5.0 and r.n == 2 and r.episodes == 3
    assert r.ratio == pytest.approx(200 / 3)


def test_empty_cell_row_has_dashes():
    rows = summarize([], groups=[("t9", 10)])
    text = to_csv(rows)
    line = text.strip().splitlines()[-1]
    assert line.startswith("t9,10,0,--") and "--" in line.split(",")[5]


def test_csv_round_trip():
    logs = [fake_log("t0", 100, True, 19.25), fake_log("t1", 25, False, 1.0),
            fake_log("t1", 25, True, 4.5)]
    rows = summarize(logs)
    back = from_csv(to_csv(rows))
    assert [(r.task, r.level, r.n, r.episodes) for r in back] == \
        [(r.task, r.level, r.n, r.episodes) for r in rows]
    assert back[0].ag == 19.25 and back[1].ag == 4.5
    assert "72.0" in to_csv(summarize([fake_log("a", 100, i < 36, 1.0) for i in range(50)]))
