"""Grip-force tracking ablations of the hybrid controller.

A recorded episode at some force level supplies the "predicted" force and
aperture; the episode is re-run at 100% impedance under the hybrid
controller, with the feedforward or admittance term removed on request.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .controller import HybridConfig, PolicyOutput
from .dataset import default_suite
from .sim import Disturbance, ScriptedPolicy, run_episode

MODES = ("hybrid", "no-ff", "no-adm", "full-force")
# same levels as dataset A: task 1 with the gentle level at 25%
ABLATION_TASK = 1
STEADY_WINDOW = (2.0, 4.2)


class LogReplayPolicy:
    """Feeds the next tick of a recorded episode as the policy prediction."""

    hybrid = True

    def __init__(self, log):
        self.steps = log.steps

    def __call__(self, obs):
        nxt = self.steps[min(obs.tick + 1, len(self.steps) - 1)]
        fa = nxt["f_applied"]
        return PolicyOutput(pose=tuple(nxt["action"]["pose"]), width=nxt["p"],
                            grip_force=nxt["f_grip"], applied_force=np.array([fa[2], fa[0]]))


@dataclass
class AblationResult:
    mode: str
    target_level: int
    t: np.ndarray
    predicted: np.ndarray
    measured: np.ndarray
    tracking_error: float
    success: bool
    dropped: bool
    slip_event: bool
    correction: float
    log: object


def steady_error(t, predicted, measured, window=STEADY_WINDOW):
    sel = (t >= window[0]) & (t < window[1])
    ref = predicted[sel].mean()
    if ref <= 0:
        return math.inf
    return float(abs(measured[sel].mean() - ref) / ref)


def run_ablation(mode, target_level=25, seed=0, disturbance=None, task=ABLATION_TASK, cfg=None):
    """Record a reference episode at ``target_level`` and track it at 100% impedance.

    ``full-force`` is the uncontrolled baseline: the scripted 100% replay.
    """
    if mode not in MODES:
        from .physics import ConfigurationError
        raise ConfigurationError(f"unknown ablation mode {mode!r}; expected one of {MODES}")
    sc = replace(default_suite()[task], force_level=target_level, jitter=0.0)
    ref = run_episode(sc, ScriptedPolicy(sc), seed, markers=False)
    cfg = cfg or HybridConfig(p_max=sc.p_max)
    if mode == "full-force":
        full = replace(sc, force_level=100)
        log = run_episode(full, ScriptedPolicy(full), seed, markers=False, disturbance=disturbance)
    else:
        log = run_episode(sc, LogReplayPolicy(ref), seed, physics_level=100,
                          hybrid_cfg=cfg.ablate(mode), markers=False, disturbance=disturbance,
                          extra_header={"ablation": mode, "target_level": target_level})
    t = np.array([s["t"] for s in log.steps])
    pred = np.array([s["f_grip"] for s in ref.steps])
    meas = np.array([s["f_grip"] for s in log.steps])
    corr = max(abs(s["p_cmd"] - s["action"]["width"]) for s in log.steps)
    return AblationResult(mode, target_level, t, pred, meas, steady_error(t, pred, meas),
                          log.summary["success"], log.summary["dropped"],
                          log.summary["slip_event"], corr, log)


def default_disturbance():
    return Disturbance(start=2.6, width_bias=0.0005)


def traces_csv(result):
    lines = ["t,predicted,measured"]
    for t, p, m in zip(result.t, result.predicted, result.measured):
        lines.append(f"{t!r},{p!r},{m!r}")
    return "\n".join(lines) + "\n"
