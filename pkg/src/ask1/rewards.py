"""Gait-conditioned reward suite: task, regularization, style, and contact-schedule groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .foothold import foothold_error

# fixed diagnostic row order; groups: task (2), regularization (7), style (2), contact (2)
ROW_NAMES = (
    "lin_track", "ang_track",
    "torque", "joint_acc", "action_rate", "height", "collision", "vz", "omega_xy",
    "gravity_xy", "foothold",
    "swing_force", "stance_vel",
)
NUM_ROWS = len(ROW_NAMES)


@dataclass(frozen=True)
class RewardWeights:
    """One weight per reward row; signs live in the formulas, weights stay non-negative.

    All norms are squared L2 (||.||^2). squared_norms=False flips every row to
    the unsquared norm for ablation.
    """

    lin_track: float = 1.0
    ang_track: float = 0.5
    torque: float = 1e-4
    joint_acc: float = 2.5e-7
    action_rate: float = 0.1
    height: float = 1.0
    collision: float = 0.1
    vz: float = 0.5
    omega_xy: float = 0.05
    gravity_xy: float = 0.5
    raibert: float = 1.0
    swing_force: float = 1.0
    stance_vel: float = 1.0
    tracking_sigma: float = 0.15
    sigma_cf: float = 0.25  # not stated by the source framework; forces pre-normalized by m*g
    squared_norms: bool = True

    def __post_init__(self):
        weights = [getattr(self, name) for name in (
            "lin_track", "ang_track", "torque", "joint_acc", "action_rate", "height",
            "collision", "vz", "omega_xy", "gravity_xy", "raibert", "swing_force", "stance_vel",
        )]
        if any(w < 0 for w in weights):
            raise ValueError("reward weights must be non-negative")
        if self.tracking_sigma <= 0 or self.sigma_cf <= 0:
            raise ValueError("tracking_sigma and sigma_cf must be positive")


@dataclass
class RewardBreakdown:
    """Per-step reward values: 13 diagnostic rows, 4 group sums, and the total."""

    rows: np.ndarray  # (..., 13) in ROW_NAMES order
    r_g: np.ndarray
    r_l: np.ndarray
    r_s: np.ndarray
    r_c: np.ndarray
    total: np.ndarray

    def row(self, name: str) -> np.ndarray:
        return self.rows[..., ROW_NAMES.index(name)]


def _sq(x: np.ndarray, weights: RewardWeights) -> np.ndarray:
    """Squared-norm reading of ||.||_2 (the default), or the plain norm for ablation."""
    return x if weights.squared_norms else np.sqrt(x)


def task_reward(
    v_xy: np.ndarray,
    v_xy_cmd: np.ndarray,
    omega_z: np.ndarray,
    omega_z_cmd: np.ndarray,
    weights: RewardWeights,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Velocity-tracking group: exponential kernels on the linear and yaw-rate errors."""
    e_v = np.sum((np.asarray(v_xy_cmd) - np.asarray(v_xy)) ** 2, axis=-1)
    e_w = (np.asarray(omega_z_cmd) - np.asarray(omega_z)) ** 2
    lin = weights.lin_track * np.exp(-_sq(e_v, weights) / weights.tracking_sigma)
    ang = weights.ang_track * np.exp(-_sq(e_w, weights) / weights.tracking_sigma)
    return lin + ang, lin, ang


def regularization_reward(
    torque: np.ndarray,
    q_ddot: np.ndarray,
    dq_target: np.ndarray,
    body_height: np.ndarray,
    body_height_cmd: float,
    n_collision: np.ndarray,
    v_z: np.ndarray,
    omega_x: np.ndarray,
    omega_y: np.ndarray,
    weights: RewardWeights,
) -> tuple[np.ndarray, np.ndarray]:
    """Effort and smoothness penalties; always <= 0. Returns (r_l, rows (..., 7))."""
    w = weights
    rows = np.stack([
        -w.torque * _sq(np.sum(np.asarray(torque) ** 2, axis=-1), w),
        -w.joint_acc * _sq(np.sum(np.asarray(q_ddot) ** 2, axis=-1), w),
        -w.action_rate * _sq(np.sum(np.asarray(dq_target) ** 2, axis=-1), w),
        -w.height * _sq((body_height_cmd - np.asarray(body_height)) ** 2, w),
        -w.collision * np.asarray(n_collision, dtype=np.float64),
        -w.vz * _sq(np.asarray(v_z) ** 2, w),
        -w.omega_xy * _sq(np.asarray(omega_x) ** 2 + np.asarray(omega_y) ** 2, w),
    ], axis=-1)
    return np.sum(rows, axis=-1), rows


def style_reward(
    gravity_proj: np.ndarray,
    p_actual: np.ndarray,
    p_desired: np.ndarray,
    weights: RewardWeights,
) -> tuple[np.ndarray, np.ndarray]:
    """Flat-body and foothold-tracking penalties; always <= 0. Returns (r_s, rows (..., 2))."""
    g = np.asarray(gravity_proj, dtype=np.float64)
    rows = np.stack([
        -weights.gravity_xy * _sq(g[..., 0] ** 2 + g[..., 1] ** 2, weights),
        -weights.raibert * foothold_error(p_actual, p_desired),
    ], axis=-1)
    return np.sum(rows, axis=-1), rows


def contact_schedule_reward(
    contact_cmd: np.ndarray,
    foot_forces: np.ndarray,
    foot_vels: np.ndarray,
    weights: RewardWeights,
) -> tuple[np.ndarray, np.ndarray]:
    """Schedule-consistency group: commanded-swing feet unloaded, commanded-stance feet still.

    contact_cmd is (..., 4) in [0, 1]; foot_forces (..., 4, 3) must already be
    normalized by body weight so sigma_cf is robot-independent. Each per-foot
    term lies in [0, 1], so the group sum lies in [0, 4].
    """
    c = np.asarray(contact_cmd, dtype=np.float64)
    f2 = np.sum(np.asarray(foot_forces, dtype=np.float64) ** 2, axis=-1)
    v2 = np.sum(np.asarray(foot_vels, dtype=np.float64) ** 2, axis=-1)
    swing = np.sum((1.0 - c) * np.exp(-f2 / weights.sigma_cf), axis=-1)
    stance = np.sum(c * np.exp(-v2 / weights.sigma_cf), axis=-1)
    rows = np.stack([weights.swing_force * swing, weights.stance_vel * stance], axis=-1)
    return np.sum(rows, axis=-1), rows


def total_reward(r_g: np.ndarray, r_l: np.ndarray, r_s: np.ndarray, r_c: np.ndarray) -> np.ndarray:
    """Exact group sum; fixed association order so the identity is reproducible."""
    return ((np.asarray(r_g) + np.asarray(r_l)) + np.asarray(r_s)) + np.asarray(r_c)


def combine(
    task: tuple[np.ndarray, np.ndarray, np.ndarray],
    regularization: tuple[np.ndarray, np.ndarray],
    style: tuple[np.ndarray, np.ndarray],
    contact: tuple[np.ndarray, np.ndarray],
) -> RewardBreakdown:
    """Assemble the group outputs into a RewardBreakdown with the 13-row diagnostics."""
    r_g, lin, ang = task
    r_l, reg_rows = regularization
    r_s, style_rows = style
    r_c, contact_rows = contact
    rows = np.concatenate([
        np.stack([lin, ang], axis=-1), reg_rows, style_rows, contact_rows,
    ], axis=-1)
    return RewardBreakdown(rows=rows, r_g=r_g, r_l=r_l, r_s=r_s, r_c=r_c,
                           total=total_reward(r_g, r_l, r_s, r_c))
