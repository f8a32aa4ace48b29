from __future__ import annotations

import math

import numpy as np
import pytest

from gentlegrip.ablation import run_ablation, steady_error, traces_csv
from gentlegrip.physics import ConfigurationError


def test_unknown_mode():
    with pytest.raises(ConfigurationError):
        run_ablation("no-brakes")


def test_steady_error_window():
    t = np.arange(0, 5, 0.05)
    pred = np.full_like(t, 10.0)
    meas = np.where(t < 2.0, 0.0, 10.5)
    assert steady_error(t, pred, meas) == pytest.approx(0.05)
    assert steady_error(t, np.zeros_like(t), meas) == math.inf


def test_full_force_baseline_and_trace_csv():
    res = run_ablation("full-force", 25)
    lines = traces_csv(res).splitlines()
    assert lines[0] == "t,predicted,measured" and len(lines) == len(res.t) + 1
    # the uncontrolled 100% replay squeezes far harder than the 25% reference
    assert res.tracking_error > 1.0
