"""Velocity-proportional desired foothold targets and the foothold tracking error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FRONT_SIGN, SIDE_SIGN, StanceGeometry


@dataclass(frozen=True)
class DesiredFootholds:
    """Per-foot ground-plane targets in the yaw-aligned body-centric frame."""

    p_desired: np.ndarray  # (..., 4, 2)
    delta: np.ndarray      # (..., 4, 2) offsets from the nominal stance
    phase_var: np.ndarray  # (..., 4) stance-progress variable in [-0.5, 0.5]


def phase_variable(foot_phases: np.ndarray, stance_ratio: float) -> np.ndarray:
    """Stance-progress variable: sweeps +0.5 -> -0.5 over stance, held at +0.5 in swing.

    A planted foot under a body moving at the commanded velocity lands ahead of
    nominal and leaves behind it, so the target sweeps from +0.5 (touchdown,
    ahead) to -0.5 (liftoff, behind). During swing the target is the upcoming
    touchdown point, so the variable stays frozen at the touchdown value.
    """
    foot_phases = np.asarray(foot_phases, dtype=np.float64)
    return np.where(foot_phases < stance_ratio, 0.5 - foot_phases / stance_ratio, 0.5)


def yaw_velocity_terms(omega_z: np.ndarray, geometry: StanceGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Per-foot (vx, vy) contributions of the commanded yaw rate, feet ordered FR FL RR RL.

    vx scales with the stance width (sign by side), vy with the stance length
    (sign by fore/aft), so the four contributions sum to zero.
    """
    omega_z = np.asarray(omega_z, dtype=np.float64)[..., None]
    vx = SIDE_SIGN * omega_z * geometry.width_w / 2.0
    vy = FRONT_SIGN * omega_z * geometry.length_l / 2.0
    return vx, vy


def desired_footholds(
    cmd_vel: np.ndarray,
    frequency_hz: float,
    foot_phases: np.ndarray,
    stance_ratio: float,
    geometry: StanceGeometry,
) -> DesiredFootholds:
    """Nominal stance plus phase- and velocity-proportional offsets.

    cmd_vel is (..., 3) and foot_phases (..., 4). Offsets grow linearly with
    the commanded velocities and shrink with the gait frequency.
    """
    if frequency_hz <= 0:
        raise ValueError("gait frequency must be positive")
    cmd_vel = np.asarray(cmd_vel, dtype=np.float64)
    phi = phase_variable(foot_phases, stance_ratio)
    vx_yaw, vy_yaw = yaw_velocity_terms(cmd_vel[..., 2], geometry)
    dx = phi * (cmd_vel[..., 0:1] + vx_yaw) / frequency_hz
    dy = phi * (cmd_vel[..., 1:2] + vy_yaw) / frequency_hz
    delta = np.stack([dx, dy], axis=-1)
    return DesiredFootholds(p_desired=geometry.p_norm + delta, delta=delta, phase_var=phi)


def foothold_error(p_actual: np.ndarray, p_desired: np.ndarray) -> np.ndarray:
    """Sum of squared differences over the four feet and both ground-plane coordinates.

    Both arrays are (..., 4, 2) and must be expressed in the same yaw-aligned
    body-centric frame.
    """
    diff = np.asarray(p_desired, dtype=np.float64) - np.asarray(p_actual, dtype=np.float64)
    return np.sum(diff * diff, axis=(-2, -1))
