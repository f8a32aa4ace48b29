"""Fixed-timestep simulation of a planar arm, an impedance-driven parallel
gripper and a graspable object with penalty contact and Coulomb slip.

The gripper is two symmetric prismatic fingers.  Each finger joint runs its
own spring-damper drive toward half the commanded width, so at static
equilibrium the grip force (twice the per-finger normal force) equals
``Kp * (p - p_target)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GRAVITY = 9.81


class ConfigurationError(ValueError):
    pass


class SimulationFault(FloatingPointError):
    pass


@dataclass
class ImpedanceParams:
    kp: float = 2000.0
    kd: float = 100.0
    f_max: float = 200.0

    def __post_init__(self):
        if not self.kp > 0 or not self.kd >= 0 or not self.f_max > 0:
            raise ConfigurationError(f"invalid impedance parameters {self}")


@dataclass
class ContactParams:
    k_c: float = 2.0e5
    c_c: float = 10.0
    c_slip: float = 5.0
    contact_threshold: float = 0.1
    contact_length: float = 0.02

    def __post_init__(self):
        if not self.k_c > 0 or not self.c_c >= 0 or not self.c_slip > 0:
            raise ConfigurationError(f"invalid contact parameters {self}")


@dataclass
class GripperState:
    p: float = 0.08
    p_dot: float = 0.0
    p_target: float = 0.08
    # feedforward rate of the commanded width; zero for a held setpoint
    p_target_rate: float = 0.0
    delta_l: float = 0.0
    delta_r: float = 0.0
    delta_rate_l: float = 0.0
    delta_rate_r: float = 0.0
    normal_l: float = 0.0
    normal_r: float = 0.0
    p_max: float = 0.08
    finger_mass: float = 0.1


@dataclass
class ObjectState:
    x: float = 0.5
    z: float = 0.0
    mass: float = 0.1
    half_width: float = 0.025
    mu: float = 0.5
    slip: float = 0.0
    slip_rate: float = 0.0
    dropped: bool = False
    crushed: bool = False
    # object lies between the fingers (set by the episode loop from geometry)
    in_gripper: bool = False
    airborne: bool = False
    f_crush: float | None = None


@dataclass
class ArmState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    links: tuple = (0.45, 0.40, 0.15)

    @property
    def pose(self):
        return forward_kinematics(self.q, self.links)


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise SimulationFault(f"non-finite value {v!r}")


def contact_normal_force(delta, delta_rate, cp):
    """Penalty normal force ``max(0, k_c*delta + c_c*delta_rate)``; never adhesive."""
    _check_finite(delta, delta_rate)
    if delta <= 0.0:
        return 0.0
    f = cp.k_c * delta + cp.c_c * delta_rate
    return f if f > 0.0 else 0.0


def step_gripper(gs, ip, cp, obj, dt):
    """Advance the finger pair by one semi-implicit Euler step.

    The finger coordinate is ``x = p / 2``; the drive applies
    ``Kp (x_target - x) + Kd (x_target_rate - x_dot)`` saturated at ``f_max``
    and the contact pushes back with :func:`contact_normal_force`.
    """
    if not 0.0 < dt <= 1e-2:
        raise ConfigurationError(f"dt={dt} outside (0, 0.01]")
    _check_finite(gs.p, gs.p_dot, gs.p_target)
    x = 0.5 * gs.p
    v = 0.5 * gs.p_dot
    m = gs.finger_mass
    # spring terms explicit, damping terms implicit in the new velocity
    f_spring = ip.kp * (0.5 * gs.p_target - x) + ip.kd * 0.5 * gs.p_target_rate
    f_cmd = f_spring - ip.kd * v
    damping = ip.kd
    if f_cmd > ip.f_max or f_cmd < -ip.f_max:
        f_spring = math.copysign(ip.f_max, f_cmd)
        damping = 0.0

    delta, delta_rate, f_n = 0.0, 0.0, 0.0
    if obj is not None and obj.in_gripper and not obj.dropped:
        delta = obj.half_width - x
        if delta > 0.0:
            delta_rate = -v
            if contact_normal_force(delta, delta_rate, cp) > 0.0:
                f_spring += cp.k_c * delta
                damping += cp.c_c
        else:
            delta = 0.0

    v = (v + dt * f_spring / m) / (1.0 + dt * damping / m)
    x += dt * v
    if delta > 0.0:
        # report the contact force consistent with the integrated velocity
        f_n = contact_normal_force(delta, -v, cp)
        delta_rate = -v
    x_max = 0.5 * gs.p_max
    if x < 0.0:
        x, v = 0.0, max(v, 0.0)
    elif x > x_max:
        x, v = x_max, min(v, 0.0)
    _check_finite(x, v)
    return replace(
        gs, p=2.0 * x, p_dot=2.0 * v,
        delta_l=delta, delta_r=delta,
        delta_rate_l=delta_rate, delta_rate_r=delta_rate,
        normal_l=f_n, normal_r=f_n,
    )


def step_object(obj, grip_f, ee_accel, dt, cp=None):
    """Coulomb hold-or-slip update of a grasped object.

    ``ee_accel`` is the vertical acceleration of the end effector.  The object
    carries a tangential load ``m (g + a)``; friction can supply at most
    ``mu * grip_f``.  Any deficit drives slip at ``deficit / c_slip``.  Slip
    is only accrued while the object is airborne (the table carries it
    otherwise).  Once slip exceeds the finger contact length the object is
    dropped.
    """
    cp = cp or ContactParams()
    if grip_f < 0:
        raise ValueError("grip force must be non-negative")
    if obj.dropped or not obj.airborne:
        return replace(obj, slip_rate=0.0)
    load = obj.mass * (GRAVITY + ee_accel)
    capacity = obj.mu * grip_f
    if capacity >= load:
        return replace(obj, slip_rate=0.0)
    rate = (load - capacity) / cp.c_slip
    slip = obj.slip + rate * dt
    dropped = slip > cp.contact_length
    return replace(obj, slip=slip, slip_rate=rate, dropped=dropped)


def forward_kinematics(q, links):
    """Planar serial chain: returns end-effector ``(x, z, phi)``."""
    x = z = 0.0
    phi = 0.0
    for qi, li in zip(q, links):
        phi += qi
        x += li * math.cos(phi)
        z += li * math.sin(phi)
    return x, z, phi


def jacobian(q, links):
    """2x3 positional Jacobian of :func:`forward_kinematics`."""
    n = len(q)
    angles = np.cumsum(np.asarray(q, dtype=float))
    cx = np.asarray(links) * np.cos(angles)
    sz = np.asarray(links) * np.sin(angles)
    J = np.zeros((2, n))
    for j in range(n):
        J[0, j] = -sz[j:].sum()
        J[1, j] = cx[j:].sum()
    return J


def solve_ik(target_xz, links, q0=(0.3, -1.2, -0.7), lam=1e-3, iters=200):
    """Static positional IK by iterated damped least squares."""
    q = np.array(q0, dtype=float)
    target = np.asarray(target_xz, dtype=float)
    for _ in range(iters):
        x, z, _ = forward_kinematics(q, links)
        err = target - np.array([x, z])
        if np.linalg.norm(err) < 1e-12:
            break
        J = jacobian(q, links)
        q = q + J.T @ np.linalg.solve(J @ J.T + lam**2 * np.eye(2), err)
    return q


def kinetic_energy(gs, arm=None):
    e = gs.finger_mass * (0.5 * gs.p_dot) ** 2  # two fingers, each 1/2 m v^2
    if arm is not None:
        e += 0.5 * float(np.dot(arm.q_dot, arm.q_dot))
    return e
