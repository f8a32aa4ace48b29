"""Fingertip force signals, marker displacement fields and force-history features.

Forces are expressed in the shared gripper frame: ``z`` points along the
closing direction of the gripper (world +x), ``x`` points up (world +z) and
``y`` completes the frame out of the plane.  Finger forces are exerted by the
environment on the fingertip, so a symmetric squeeze reads ``-F`` on the left
finger and ``+F`` on the right one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import ConfigurationError

GRID_COLS = 11
GRID_ROWS = 9
HISTORY = 8
SENSOR_EXTENT_MM = (24.0, 18.0)
N_MARKERS = GRID_COLS * GRID_ROWS


class DegenerateFieldError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def marker_grid(cols=GRID_COLS, rows=GRID_ROWS, extent=SENSOR_EXTENT_MM):
    """Rest positions (mm, centred on the sensor) in row-major order, shape (rows*cols, 2)."""
    xs = np.linspace(-extent[0] / 2, extent[0] / 2, cols)
    ys = np.linspace(-extent[1] / 2, extent[1] / 2, rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


REST_GRID = marker_grid()


@dataclass
class MarkerGains:
    shear: float = 0.5      # mm / N
    torque: float = 0.02    # mm / (N mm)
    normal: float = 0.01    # mm / N, radial bulge per mm of offset


@dataclass
class TactileFrame:
    f_left: np.ndarray
    f_right: np.ndarray
    f_grip: float
    f_applied: np.ndarray
    f_grip_smoothed: float = 0.0
    markers_left: np.ndarray | None = None
    markers_right: np.ndarray | None = None

    @classmethod
    def from_forces(cls, f_left, f_right, smoothed=0.0, markers=None):
        f_left = np.asarray(f_left, dtype=float)
        f_right = np.asarray(f_right, dtype=float)
        ml, mr = markers if markers is not None else (None, None)
        return cls(f_left, f_right, grip_force(f_left, f_right),
                   applied_force(f_left, f_right), smoothed, ml, mr)


def grip_force(f_left, f_right):
    return 2.0 * min(abs(f_left[2]), abs(f_right[2]))


def applied_force(f_left, f_right):
    return -(np.asarray(f_left, dtype=float) + np.asarray(f_right, dtype=float))


def ema_filter(prev, meas, alpha):
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"filter alpha {alpha} outside (0, 1]")
    return alpha * meas + (1.0 - alpha) * prev


def _perp(r):
    return np.stack([-r[:, 1], r[:, 0]], axis=1)


def marker_field(normal_f, shear, torque, grid=REST_GRID, gains=None):
    """Displacement of every marker (mm), shape ``(n_markers, 2)``.

    ``u_i = a * shear + b * torque * perp(r_i) + c * normal * r_i``
    """
    if normal_f < 0:
        raise ValueError("normal force must be non-negative")
    g = gains or MarkerGains()
    shear = np.asarray(shear, dtype=float)
    return (g.shear * shear[None, :]
            + g.torque * torque * _perp(grid)
            + g.normal * normal_f * grid)


def _design_matrix(grid, gains):
    n = len(grid)
    A = np.zeros((2 * n, 4))
    A[0::2, 0] = gains.shear
    A[1::2, 1] = gains.shear
    perp = _perp(grid)
    A[0::2, 2] = gains.torque * perp[:, 0]
    A[1::2, 2] = gains.torque * perp[:, 1]
    A[0::2, 3] = gains.normal * grid[:, 0]
    A[1::2, 3] = gains.normal * grid[:, 1]
    return A


def estimate_wrench_from_field(field, grid=REST_GRID, gains=None, with_normal=False):
    """Least-squares inverse of :func:`marker_field`.

    Returns ``(shear, torque)`` or ``(shear, torque, normal)``.
    """
    g = gains or MarkerGains()
    field = np.asarray(field, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if field.shape != grid.shape:
        raise ShapeError(f"field shape {field.shape} does not match grid {grid.shape}")
    A = _design_matrix(grid, g)
    if np.linalg.matrix_rank(A) < 4:
        raise DegenerateFieldError("marker layout cannot resolve shear, torque and normal")
    sol, *_ = np.linalg.lstsq(A, field.reshape(-1), rcond=None)
    shear, torque, normal = sol[:2], float(sol[2]), float(sol[3])
    if with_normal:
        return shear, torque, normal
    return shear, torque


def finger_field(f_finger, grid=REST_GRID, gains=None):
    """Marker field for one finger from its gripper-frame force.

    Normal load is ``|F_z|``; shear lives in the sensor plane spanned by the
    gripper ``x`` and ``y`` axes.
    """
    f = np.asarray(f_finger, dtype=float)
    return marker_field(abs(f[2]), f[:2], 0.0, grid, gains)


def field_history_features(frames_left, frames_right):
    """Flatten ``H + 1`` rest-plus-history marker frames of both fingers.

    Each input is a sequence of ``H`` displacement frames (oldest first); the
    rest layout is prepended as frame zero.  Output length is
    ``11 * 9 * 2 * (H + 1) * 2``.
    """
    out = []
    for frames in (frames_left, frames_right):
        if len(frames) != HISTORY:
            raise ShapeError(f"expected {HISTORY} frames, got {len(frames)}")
        stack = [REST_GRID] + [REST_GRID + np.asarray(f) for f in frames]
        out.append(np.stack(stack))
    return np.stack(out).reshape(-1)


@dataclass
class FeatureStats:
    mean: np.ndarray = field(default_factory=lambda: np.zeros(HISTORY * 6))
    std: np.ndarray = field(default_factory=lambda: np.ones(HISTORY * 6))

    @classmethod
    def from_frames(cls, forces):
        """Per-channel statistics of ``(n, 6)`` force samples tiled over the window."""
        forces = np.asarray(forces, dtype=float).reshape(-1, 6)
        mu = forces.mean(axis=0)
        sd = forces.std(axis=0)
        sd = np.where(sd > 1e-9, sd, 1.0)
        return cls(np.tile(mu, HISTORY), np.tile(sd, HISTORY))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def history_index(frame, finger, axis):
    """Feature index of ``axis`` (0..2) of ``finger`` (0 left, 1 right) in ``frame``."""
    return frame * 6 + finger * 3 + axis


def encode_force_history(window, stats=None):
    """Frame-major, left-before-right, xyz flattening with normalisation (length 48)."""
    w = np.asarray(window, dtype=float)
    if w.shape != (HISTORY, 6):
        raise ShapeError(f"force window must be ({HISTORY}, 6), got {w.shape}")
    stats = stats or FeatureStats()
    return (w.reshape(-1) - stats.mean) / stats.std


def decode_force_history(features, stats=None):
    stats = stats or FeatureStats()
    f = np.asarray(features, dtype=float)
    if f.shape != (HISTORY * 6,):
        raise ShapeError(f"expected {HISTORY * 6} features, got {f.shape}")
    return (f * stats.std + stats.mean).reshape(HISTORY, 6)
