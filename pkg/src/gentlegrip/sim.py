"""Scenarios and the 1 kHz physics / 20 Hz control episode loop."""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as M
from .controller import (
    ControllerState,
    HybridConfig,
    PolicyOutput,
    control_step,
    dls_ik,
)
from .physics import (
    ArmState,
    ConfigurationError,
    ContactParams,
    GripperState,
    ImpedanceParams,
    ObjectState,
    SimulationFault,
    forward_kinematics,
    jacobian,
    solve_ik,
    step_gripper,
    step_object,
)
from .tactile import HISTORY, TactileFrame, ema_filter, finger_field

SCHEMA_VERSION = 1
PHYSICS_DT = 1e-3
CONTROL_DT = 0.05
ARM_TAU = 0.02
# object counts as lifted once 1 mm above its resting height
LIFTOFF = 1e-3

FORCE_LEVELS = {100: (2000.0, 100.0), 25: (500.0, 25.0), 10: (200.0, 10.0)}


def force_level_params(level):
    try:
        return FORCE_LEVELS[int(level)]
    except (KeyError, ValueError, TypeError):
        raise ConfigurationError(f"unknown force level {level!r}; expected one of 100, 25, 10") from None


PHASES = ("approach", "close", "hold", "lift", "transport", "release", "settle")


@dataclass
class Scenario:
    task_id: str = "object_task0"
    instruction: str = "pick up the alphabet soup and place it in the basket"
    mass: float = 0.1
    half_width: float = 0.025
    mu: float = 0.5
    object_x: float = 0.55
    grasp_z: float = 0.05
    approach_height: float = 0.10
    lift_height: float = 0.12
    goal_x: tuple = (0.30, 0.40)
    # end time of each phase, in seconds
    timings: tuple = (1.0, 1.6, 2.2, 3.0, 4.2, 4.7, 5.2)
    penetration: float = 0.01
    force_level: int = 100
    jitter: float = 0.1
    p_max: float = 0.08
    f_crush: float | None = None

    def __post_init__(self):
        t = list(self.timings)
        if len(t) != len(PHASES) or t[0] <= 0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigurationError(f"phase timings must be {len(PHASES)} strictly increasing values")
        if not self.goal_x[1] > self.goal_x[0]:
            raise ConfigurationError("goal region is degenerate")
        if not 0 < 2 * self.half_width < self.p_max:
            raise ConfigurationError("object does not fit in the gripper")
        force_level_params(self.force_level)

    @property
    def horizon(self):
        return self.timings[-1]

    @property
    def n_ticks(self):
        return int(round(self.horizon / CONTROL_DT)) + 1

    @property
    def goal_center(self):
        return 0.5 * (self.goal_x[0] + self.goal_x[1])

    def phase(self, t):
        for name, end in zip(PHASES, self.timings):
            if t < end:
                return name
        return PHASES[-1]


def load_scenario(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    kw = {}
    if cp.has_section("task"):
        s = cp["task"]
        kw["task_id"] = s.get("id", Scenario.task_id)
        kw["instruction"] = s.get("instruction", Scenario.instruction)
        if "force_level" in s:
            kw["force_level"] = s.getint("force_level")
    if cp.has_section("object"):
        s = cp["object"]
        for key in ("mass", "half_width", "mu", "jitter"):
            if key in s:
                kw[key] = s.getfloat(key)
        if "x" in s:
            kw["object_x"] = s.getfloat("x")
        if "grasp_z" in s:
            kw["grasp_z"] = s.getfloat("grasp_z")
        if "f_crush" in s:
            kw["f_crush"] = s.getfloat("f_crush")
    if cp.has_section("schedule"):
        s = cp["schedule"]
        kw["timings"] = tuple(s.getfloat(name) for name in PHASES)
        for key in ("lift_height", "approach_height", "penetration"):
            if key in s:
                kw[key] = s.getfloat(key)
    if cp.has_section("goal"):
        s = cp["goal"]
        kw["goal_x"] = (s.getfloat("x_min"), s.getfloat("x_max"))
    return Scenario(**kw)


def write_scenario(sc, path):
    cp = configparser.ConfigParser()
    cp["task"] = {"id": sc.task_id, "instruction": sc.instruction, "force_level": str(sc.force_level)}
    cp["object"] = {"mass": repr(sc.mass), "half_width": repr(sc.half_width), "mu": repr(sc.mu),
                    "x": repr(sc.object_x), "grasp_z": repr(sc.grasp_z), "jitter": repr(sc.jitter)}
    if sc.f_crush is not None:
        cp["object"]["f_crush"] = repr(sc.f_crush)
    cp["schedule"] = {name: repr(t) for name, t in zip(PHASES, sc.timings)}
    cp["schedule"].update(lift_height=repr(sc.lift_height), approach_height=repr(sc.approach_height),
                          penetration=repr(sc.penetration))
    cp["goal"] = {"x_min": repr(sc.goal_x[0]), "x_max": repr(sc.goal_x[1])}
    with open(path, "w") as fh:
        cp.write(fh)


def _lerp(a, b, u):
    return a + (b - a) * u


def scripted_trajectory(sc, t):
    """Waypoint ``(x, z)``, target width and target width rate at time ``t``.

    Piecewise linear through the phase schedule; beyond the horizon the final
    waypoint is held.
    """
    t_app, t_close, t_hold, t_lift, t_tr, t_rel, _ = sc.timings
    x0, z_grasp = sc.object_x, sc.grasp_z
    z_top = z_grasp + sc.approach_height
    z_lift = z_grasp + sc.lift_height
    w_open, w_closed = sc.p_max, 2 * sc.half_width - sc.penetration
    x, z, w, w_rate = x0, z_top, w_open, 0.0
    if t < t_app:
        z = _lerp(z_top, z_grasp, t / t_app)
    elif t < t_close:
        u = (t - t_app) / (t_close - t_app)
        z, w = z_grasp, _lerp(w_open, w_closed, u)
        w_rate = (w_closed - w_open) / (t_close - t_app)
    elif t < t_hold:
        z, w = z_grasp, w_closed
    elif t < t_lift:
        z, w = _lerp(z_grasp, z_lift, (t - t_hold) / (t_lift - t_hold)), w_closed
    elif t < t_tr:
        u = (t - t_lift) / (t_tr - t_lift)
        x, z, w = _lerp(x0, sc.goal_center, u), z_lift, w_closed
    elif t < t_rel:
        u = (t - t_tr) / (t_rel - t_tr)
        x, z, w = sc.goal_center, z_lift, _lerp(w_closed, w_open, u)
        w_rate = (w_open - w_closed) / (t_rel - t_tr)
    else:
        x, z, w = sc.goal_center, z_lift, w_open
    return (x, z), w, w_rate


def contact_width(sc, t, preload=0.0):
    """Scripted width floored at the object width less ``preload`` while grasping.

    With ``preload=0`` this is the aperture the fingers would report.
    """
    _, w, _ = scripted_trajectory(sc, t)
    t_app, *_, t_tr, t_rel, _ = sc.timings
    if t_app <= t < t_rel:
        return max(w, 2 * sc.half_width - preload)
    return w


@dataclass
class Observation:
    t: float
    tick: int
    ee: tuple
    width: float
    object_offset: tuple
    force_window: np.ndarray
    tactile: TactileFrame
    scenario: Scenario


class ScriptedPolicy:
    """Replays the scripted schedule; no force targets."""

    hybrid = False

    def __init__(self, sc, grip_open=False):
        self.sc = sc
        self.grip_open = grip_open

    def __call__(self, obs):
        (x, z), w, rate = scripted_trajectory(self.sc, obs.t + CONTROL_DT)
        if self.grip_open:
            w, rate = self.sc.p_max, 0.0
        return PolicyOutput(pose=(x, z, -math.pi / 2), width=w, grip_force=0.0, width_rate=rate)


@dataclass
class Disturbance:
    """Additive bias on the finger drive setpoint from ``start`` onward (m)."""
    start: float = 2.6
    width_bias: float = 0.0005


@dataclass
class EpisodeLog:
    header: dict
    steps: list
    summary: dict

    def __eq__(self, other):
        import json
        return (isinstance(other, EpisodeLog)
                and json.dumps([self.header, self.steps, self.summary]) ==
                json.dumps([other.header, other.steps, other.summary]))


def _f(x):
    return [float(v) for v in x]


def _finger_forces(gs, obj, tangential):
    fl = np.array([-0.5 * tangential, 0.0, -gs.normal_l])
    fr = np.array([-0.5 * tangential, 0.0, gs.normal_r])
    return fl, fr


def run_episode(sc, policy, seed, *, physics_level=None, hybrid_cfg=None, markers=True,
                disturbance=None, contact=None, instruction=None, extra_header=None):
    """Run one episode and return its :class:`EpisodeLog`.

    ``physics_level`` selects the gripper impedance (defaults to the
    scenario's force level).  Policies with ``hybrid = True`` are tracked by
    the hybrid controller; otherwise width commands drive the finger
    impedance directly and the arm tracks the pose without admittance.
    """
    level = sc.force_level if physics_level is None else physics_level
    kp, kd = force_level_params(level)
    ip = ImpedanceParams(kp, kd)
    cp = contact or ContactParams()
    cfg = hybrid_cfg or HybridConfig(p_max=sc.p_max)
    rng = np.random.default_rng(seed)
    mass = sc.mass * (1 + sc.jitter * rng.uniform(-1, 1))
    mu = sc.mu * (1 + sc.jitter * rng.uniform(-1, 1))

    links = ArmState().links
    (x0, z0), _, _ = scripted_trajectory(sc, 0.0)
    q = solve_ik((x0, z0), links)
    q_dot = np.zeros(3)
    q_dot_cmd = np.zeros(3)
    gs = GripperState(p=sc.p_max, p_target=sc.p_max, p_max=sc.p_max)
    obj = ObjectState(x=sc.object_x, z=sc.grasp_z, mass=mass, half_width=sc.half_width,
                      mu=mu, f_crush=sc.f_crush)
    state = ControllerState(last_width=sc.p_max)
    hybrid = getattr(policy, "hybrid", False)

    header = {
        "type": "header", "schema": SCHEMA_VERSION, "task_id": sc.task_id,
        "instruction": instruction or sc.instruction, "force_level": int(level),
        "kp": kp, "kd": kd, "seed": int(seed), "control_dt": CONTROL_DT,
        "physics_dt": PHYSICS_DT, "controller": "hybrid" if hybrid else "impedance",
        "mass": mass, "mu": mu, "half_width": sc.half_width, "markers": bool(markers),
    }
    if extra_header:
        header.update(extra_header)

    steps = []
    window = np.zeros((HISTORY, 6))
    attach_dz = 0.0
    held = False
    lifted = False
    released = False
    failure = None
    ee_vz_prev = 0.0
    ee_az = 0.0
    tangential = 0.0
    max_grip = 0.0
    substeps = int(round(CONTROL_DT / PHYSICS_DT))
    x_ee, z_ee, phi_ee = forward_kinematics(q, links)

    try:
        for k in range(sc.n_ticks):
            t = k * CONTROL_DT
            f_l, f_r = _finger_forces(gs, obj, tangential)
            ml = mr = None
            if markers:
                ml, mr = finger_field(f_l), finger_field(f_r)
            frame = TactileFrame.from_forces(f_l, f_r, state.grip_smoothed, (ml, mr))
            window = np.vstack([window[1:], np.concatenate([f_l, f_r])])
            obs = Observation(t, k, (x_ee, z_ee, phi_ee), gs.p,
                              (obj.x - x_ee, obj.z - z_ee), window.copy(), frame, sc)
            out = policy(obs)
            if hybrid:
                arm = ArmState(q=q, q_dot=q_dot, links=links)
                q_dot_cmd, p_cmd, state = control_step(frame, out, arm, cfg, state)
                p_rate = 0.0
            else:
                J = jacobian(q, links)
                dx = np.array(out.pose[:2]) - np.array([x_ee, z_ee])
                q_dot_cmd = dls_ik(J, dx / CONTROL_DT, cfg.lambda_ik)
                p_cmd = out.width
                p_rate = out.width_rate
                state = ControllerState(ema_filter(state.grip_smoothed, frame.f_grip, cfg.alpha), p_cmd)

            rec = {
                "type": "step", "k": k, "t": t, "phase": sc.phase(t),
                "q": _f(q), "ee": [x_ee, z_ee, phi_ee], "p": gs.p, "p_cmd": p_cmd,
                "f_left": _f(f_l), "f_right": _f(f_r), "f_grip": frame.f_grip,
                "f_applied": _f(frame.f_applied), "f_grip_smoothed": state.grip_smoothed,
                "slip": obj.slip, "object": [obj.x, obj.z],
                "action": {"pose": _f(out.pose), "width": float(out.width),
                           "grip_force": float(out.grip_force),
                           "applied_force": _f(out.applied_force)},
            }
            if markers:
                rec["markers_left"] = _f(ml.reshape(-1))
                rec["markers_right"] = _f(mr.reshape(-1))
            steps.append(rec)
            if k == sc.n_ticks - 1:
                break

            for i in range(substeps):
                t_phys = t + i * PHYSICS_DT
                bias = disturbance.width_bias if disturbance and t_phys >= disturbance.start else 0.0
                q_dot = q_dot + (q_dot_cmd - q_dot) * (PHYSICS_DT / ARM_TAU)
                q = q + q_dot * PHYSICS_DT
                x_new, z_new, phi_ee = forward_kinematics(q, links)
                vz = (z_new - z_ee) / PHYSICS_DT
                ee_az = (vz - ee_vz_prev) / PHYSICS_DT
                ee_vz_prev = vz
                x_ee, z_ee = x_new, z_new

                gs.p_target = p_cmd + bias
                gs.p_target_rate = p_rate
                near = abs(obj.x - x_ee) < obj.half_width and abs(obj.z - z_ee) < 0.02
                obj.in_gripper = (near or held) and not obj.dropped and not released
                gs = step_gripper(gs, ip, cp, obj, PHYSICS_DT)
                grip = 2.0 * min(gs.normal_l, gs.normal_r)
                max_grip = max(max_grip, grip)
                if obj.f_crush is not None and grip > obj.f_crush:
                    obj.crushed = True

                in_contact = grip > cp.contact_threshold
                if in_contact and not held and not obj.dropped and not released:
                    held = True
                    attach_dz = obj.z - z_ee
                    obj.slip = 0.0
                if held:
                    if not in_contact:
                        if obj.airborne and sc.goal_x[0] <= x_ee <= sc.goal_x[1]:
                            released = True
                        held = False
                        if obj.airborne and not released:
                            obj.dropped = True
                        obj.airborne = False
                        obj.z = sc.grasp_z
                        tangential = 0.0
                    else:
                        free_z = z_ee + attach_dz - obj.slip
                        obj.airborne = free_z > sc.grasp_z + LIFTOFF
                        obj = step_object(obj, grip, ee_az, PHYSICS_DT, cp)
                        if obj.dropped:
                            held = False
                            obj.airborne = False
                            obj.z = sc.grasp_z
                            tangential = 0.0
                        else:
                            lifted |= obj.airborne
                            obj.x = x_ee
                            obj.z = max(z_ee + attach_dz - obj.slip, sc.grasp_z)
                            if obj.airborne:
                                load = obj.mass * (9.81 + ee_az)
                                tangential = min(load, obj.mu * grip)
                            else:
                                tangential = 0.0
    except (SimulationFault, FloatingPointError, np.linalg.LinAlgError) as exc:
        failure = f"{type(exc).__name__}: {exc}"

    success = (failure is None and released and not obj.dropped
               and sc.goal_x[0] <= obj.x <= sc.goal_x[1])
    # an object left on the table while the gripper lifts was lost as well
    left_behind = not lifted and z_ee > sc.grasp_z + sc.lift_height / 2
    summary = {
        "type": "summary", "success": bool(success), "dropped": bool(obj.dropped or left_behind),
        "released": bool(released), "slip": float(obj.slip),
        "slip_event": bool(obj.dropped or left_behind),
        "crushed": bool(obj.crushed),
        "final_object": [float(obj.x), float(obj.z)], "n_steps": len(steps),
        "peak_grip_1khz": float(max_grip), "failure": failure,
    }
    summary["metrics"] = M.episode_metrics(
        [s["f_grip"] for s in steps], [float(np.linalg.norm(s["f_applied"])) for s in steps],
        cp.contact_threshold)
    return EpisodeLog(header, steps, summary)
