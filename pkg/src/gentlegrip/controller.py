"""Decoupled force-position hybrid controller.

Arm: admittance correction of the predicted position by the applied-force
error, mapped to joint velocities with damped least squares.  Gripper:
feedforward-boosted grip-force target tracked by a deadzoned proportional
width correction around the predicted width.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .physics import ConfigurationError, jacobian
from .tactile import ema_filter


class SingularityError(np.linalg.LinAlgError):
    pass


# config file keys and the HybridConfig fields they set
TABLE_KEYS = {
    "grip.ff.k": "k_ff",
    "grip.ff.deadzone": "ff_deadzone",
    "grip.kp": "k_adm_p",
    "grip.deadzone": "deadzone",
    "force.filter.alpha": "alpha",
    "pos.kp": "pos_kp",
    "ik.method": "ik_method",
    "ik.scale": "ik_scale",
    "ik.offset.pos": "ik_offset",
    "ik.damping": "lambda_ik",
    "grip.sign": "sign",
    "width_units": "width_units",
    "p_max": "p_max",
}


@dataclass
class HybridConfig:
    k_ff: float = 0.6
    ff_deadzone: float = 1.0
    k_adm_p: float = 0.0008
    deadzone: float = 0.0005
    alpha: float = 0.2
    pos_kp: tuple = (-0.0001, -0.0001)
    sign: int = -1
    lambda_ik: float = 0.01
    p_max: float = 0.08
    ik_method: str = "dls"
    ik_scale: float = 1.0
    ik_offset: tuple = (0.0, 0.0, 0.1034)
    width_units: str = "si"
    use_feedforward: bool = True
    use_admittance: bool = True

    def __post_init__(self):
        if not self.k_ff > 0 and self.use_feedforward:
            raise ConfigurationError("k_ff must be positive")
        if not self.deadzone > 0:
            raise ConfigurationError("grip deadzone must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("force filter alpha must lie in (0, 1]")
        if self.lambda_ik < 0:
            raise ConfigurationError("IK damping must be non-negative")
        if self.sign not in (1, -1):
            raise ConfigurationError("grip sign must be +1 or -1")
        if self.width_units not in ("si", "percent"):
            raise ConfigurationError(f"unknown width units {self.width_units!r}")

    @property
    def deadzone_m(self):
        """Grip deadzone in metres; ``percent`` mode reads it as % of ``p_max``."""
        if self.width_units == "percent":
            return self.deadzone / 100.0 * self.p_max
        return self.deadzone

    @classmethod
    def from_table(cls, table):
        kwargs = {}
        for key, value in table.items():
            name = TABLE_KEYS.get(key.lower())
            if name is None:
                raise ConfigurationError(f"unknown controller key {key!r}")
            if name in ("pos_kp", "ik_offset"):
                value = tuple(float(v) for v in value)
                if name == "pos_kp" and len(value) == 3:
                    # planar workspace keeps the x and z gains
                    value = (value[0], value[2])
            elif name in ("ik_method", "width_units"):
                value = str(value)
            elif name == "sign":
                value = int(value)
            else:
                value = float(value)
            kwargs[name] = value
        return cls(**kwargs)

    def ablate(self, mode):
        if mode == "hybrid":
            return replace(self)
        if mode == "no-ff":
            return replace(self, use_feedforward=False)
        if mode == "no-adm":
            return replace(self, use_admittance=False)
        raise ConfigurationError(f"unknown ablation mode {mode!r}")


@dataclass
class PolicyOutput:
    pose: tuple            # predicted end-effector (x, z, phi)
    width: float           # predicted gripper width (m)
    grip_force: float      # predicted grip force (N)
    applied_force: np.ndarray = field(default_factory=lambda: np.zeros(2))
    width_rate: float = 0.0


@dataclass
class ControllerState:
    grip_smoothed: float = 0.0
    last_width: float = 0.08


def grip_target(f_pred, cfg):
    if not cfg.use_feedforward or f_pred < cfg.ff_deadzone:
        return f_pred
    return (1.0 + cfg.k_ff) * f_pred


def grip_command(f_target, f_smoothed, p_pred, cfg, state=None):
    dp = cfg.sign * cfg.k_adm_p * (f_target - f_smoothed)
    if not cfg.use_admittance or abs(dp) < cfg.deadzone_m:
        dp = 0.0
    return min(max(p_pred + dp, 0.0), cfg.p_max)


def position_command(p_pred, f_target_applied, f_meas_applied, rot_cb, gains):
    """Admittance-corrected planar position ``p_pred + K (R f_target - f_meas)``."""
    rot_cb = np.asarray(rot_cb, dtype=float)
    k = np.diag(np.asarray(gains, dtype=float))
    err = rot_cb @ np.asarray(f_target_applied, dtype=float) - np.asarray(f_meas_applied, dtype=float)
    return np.asarray(p_pred, dtype=float) + k @ err


def dls_ik(J, dx, lam):
    """Damped-least-squares joint velocity ``J^T (J J^T + lam^2 I)^-1 dx``."""
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian")
    JJt = J @ J.T + lam**2 * np.eye(J.shape[0])
    if lam == 0 and np.linalg.matrix_rank(JJt) < J.shape[0]:
        raise SingularityError("singular Jacobian with zero damping")
    return J.T @ np.linalg.solve(JJt, np.asarray(dx, dtype=float))


def gripper_to_base(f_gripper):
    """Planar (x, z) base-frame components of a gripper-frame vector."""
    return np.array([f_gripper[2], f_gripper[0]])


def control_step(tactile, policy_out, arm, cfg, state, rot_cb=None, period=0.05):
    """One 20 Hz tick of the hybrid controller.

    Returns ``(q_dot_cmd, p_cmd, new_state)``.  ``q_dot_cmd`` moves the end
    effector onto the admittance-corrected target within one period.
    """
    smoothed = ema_filter(state.grip_smoothed, tactile.f_grip, cfg.alpha)
    f_target = grip_target(policy_out.grip_force, cfg)
    p_cmd = grip_command(f_target, smoothed, policy_out.width, cfg, state)

    rot = np.eye(2) if rot_cb is None else rot_cb
    target = position_command(policy_out.pose[:2], policy_out.applied_force,
                              gripper_to_base(tactile.f_applied), rot, cfg.pos_kp)
    x, z, _ = arm.pose
    dx = (target - np.array([x, z])) * cfg.ik_scale
    J = jacobian(arm.q, arm.links)
    q_dot = dls_ik(J, dx / period, cfg.lambda_ik)
    return q_dot, p_cmd, ControllerState(grip_smoothed=smoothed, last_width=p_cmd)
