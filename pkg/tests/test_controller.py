from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gentlegrip.controller import (
    ControllerState, HybridConfig, PolicyOutput, SingularityError, control_step, dls_ik,
    grip_command, grip_target, position_command,
)
from gentlegrip.physics import ArmState, ConfigurationError, forward_kinematics, solve_ik
from gentlegrip.tactile import TactileFrame


def test_defaults_from_table():
    cfg = HybridConfig()
    assert (cfg.k_ff, cfg.k_adm_p, cfg.alpha, cfg.sign) == (0.6, 0.0008, 0.2, -1)
    assert cfg.pos_kp == (-0.0001, -0.0001)


def test_table_keys():
    cfg = HybridConfig.from_table({"grip.ff.k": "0.5", "pos.kp": ["-1e-4", "0", "-2e-4"]})
    assert cfg.k_ff == 0.5 and cfg.pos_kp == (-1e-4, -2e-4)
    with pytest.raises(ConfigurationError):
        HybridConfig.from_table({"grip.bogus": 1})


def test_config_validation():
    for kwargs in ({"k_ff": 0}, {"deadzone": 0}, {"alpha": 0}, {"lambda_ik": -1}, {"sign": 2}):
        with pytest.raises(ConfigurationError):
            HybridConfig(**kwargs)


def test_grip_target_examples():
    cfg = HybridConfig()
    assert grip_target(10, cfg) == pytest.approx(16)
    assert grip_target(0, cfg) == 0
    assert grip_target(0.5, cfg) == 0.5


def test_grip_command_examples():
    cfg = HybridConfig()
    assert grip_command(5, 5, 0.04, cfg) == 0.04
    assert grip_command(5, 5, 0.1, cfg) == cfg.p_max
    assert grip_command(10, 0, 0.04, cfg) == pytest.approx(0.04 - 0.008)
    assert grip_command(0.5, 0.0, 0.04, cfg) == 0.04


def test_percent_deadzone():
    cfg = HybridConfig(width_units="percent", deadzone=1.0)
    assert cfg.deadzone_m == pytest.approx(0.0008)


@given(st.floats(0, 200), st.floats(0, 200), st.floats(-0.2, 0.2))
def test_grip_command_stays_in_range(ft, fm, p):
    cfg = HybridConfig()
    assert 0.0 <= grip_command(ft, fm, p, cfg) <= cfg.p_max


def test_position_command_examples():
    p = np.array([0.5, 0.1])
    assert np.allclose(position_command(p, (1, 2), (1, 2), np.eye(2), (-1e-4, -1e-4)), p)
    out = position_command(p, (0, 5), (0, 0), np.eye(2), (-1e-4, -1e-4))
    assert np.allclose(out - p, (0, -0.0005))
    assert np.allclose(position_command(p, (3, 3), (0, 0), np.eye(2), (0, 0)), p)


def test_dls_examples():
    J = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    assert np.allclose(dls_ik(J, (0.1, -0.2), 0), (0.1, -0.2, 0))
    with pytest.raises(SingularityError):
        dls_ik(np.zeros((2, 3)), (1, 1), 0)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-1, 1), st.floats(-1, 1))
def test_dls_residual_full_rank(vals, dx, dz):
    J = np.array(vals).reshape(2, 3)
    if np.linalg.svd(J, compute_uv=False)[-1] < 1e-2:
        return
    qd = dls_ik(J, (dx, dz), 0)
    assert np.linalg.norm(J @ qd - (dx, dz)) < 1e-10


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_dls_singular_bound(dx, dz):
    J = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    lam = 0.01
    qd = dls_ik(J, (dx, dz), lam)
    assert np.all(np.isfinite(qd))
    assert np.linalg.norm(qd) <= np.hypot(dx, dz) / (2 * lam) + 1e-12


def test_control_step_at_rest():
    arm = ArmState()
    arm.q = solve_ik((0.55, 0.1), arm.links)
    pose = forward_kinematics(arm.q, arm.links)
    frame = TactileFrame.from_forces((0, 0, 0), (0, 0, 0))
    out = PolicyOutput(pose=pose, width=0.05, grip_force=0.0)
    q_dot, p_cmd, st_ = control_step(frame, out, arm, HybridConfig(), ControllerState())
    assert np.allclose(q_dot, 0, atol=1e-9) and p_cmd == 0.05
    assert st_.grip_smoothed == 0.0
