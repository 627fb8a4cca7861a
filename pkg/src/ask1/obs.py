"""Observation assembly: the actor's partial view, its 5-frame history, and the critic's full state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathutil import quat_rotate_inverse
from .nets import CMD_DIM, GAIT_DIM, HEIGHT_DIM, HISTORY_LEN, OBS_DIM, PRIV_DIM

# partial observation layout (30): gravity projection, base angular velocity,
# joint positions, joint velocities
OBS_SLICES = {
    "gravity_proj": slice(0, 3),
    "base_ang_vel": slice(3, 6),
    "q": slice(6, 18),
    "q_dot": slice(18, 30),
}
# privileged layout (17): base linear velocity (body frame), contact forces / (m*g),
# ground friction, mass scale
PRIV_SLICES = {
    "base_lin_vel": slice(0, 3),
    "contact_force": slice(3, 15),
    "friction": slice(15, 16),
    "mass_scale": slice(16, 17),
}
FULL_STATE_DIM = CMD_DIM + GAIT_DIM + HEIGHT_DIM + PRIV_DIM + OBS_DIM


@dataclass(frozen=True)
class NoiseConfig:
    """Additive uniform observation noise, per channel group (actor inputs only)."""

    enabled: bool = True
    gravity: float = 0.05
    ang_vel: float = 0.2
    joint_pos: float = 0.01
    joint_vel: float = 1.5

    def scale_vector(self) -> np.ndarray:
        s = np.zeros(OBS_DIM)
        s[OBS_SLICES["gravity_proj"]] = self.gravity
        s[OBS_SLICES["base_ang_vel"]] = self.ang_vel
        s[OBS_SLICES["q"]] = self.joint_pos
        s[OBS_SLICES["q_dot"]] = self.joint_vel
        return s


def gravity_projection(base_quat: np.ndarray) -> np.ndarray:
    """World gravity direction (0, 0, -1) expressed in the body frame."""
    down = np.broadcast_to(np.array([0.0, 0.0, -1.0]), np.asarray(base_quat).shape[:-1] + (3,))
    return quat_rotate_inverse(base_quat, down)


def raw_partial_obs(
    base_quat: np.ndarray, base_ang_vel: np.ndarray, q: np.ndarray, q_dot: np.ndarray
) -> np.ndarray:
    """Noise-free 30-value readout in the frozen layout order."""
    return np.concatenate([gravity_projection(base_quat), base_ang_vel, q, q_dot], axis=-1)


def build_partial_obs(
    raw: np.ndarray,
    prev_raw: np.ndarray,
    latency_steps: np.ndarray,
    noise: NoiseConfig,
    rngs: list[np.random.Generator],
) -> np.ndarray:
    """Serve the actor's observation: optional one-step latency, then additive noise.

    raw/prev_raw are (N, 30); latency_steps (N,) in {0, 1}. Noise is drawn from
    each env's own stream so batched stepping matches independent stepping.
    """
    served = np.where(np.asarray(latency_steps)[:, None] >= 1, prev_raw, raw)
    if not noise.enabled:
        return served
    scales = noise.scale_vector()
    out = served.copy()
    for i, rng in enumerate(rngs):
        out[i] += scales * rng.uniform(-1.0, 1.0, OBS_DIM)
    return out


class HistoryBuffer:
    """Ring of the five most recent partial observations per env, flattened oldest first."""

    def __init__(self, num_envs: int, history_len: int = HISTORY_LEN, obs_dim: int = OBS_DIM):
        self.frames = np.zeros((num_envs, history_len, obs_dim))

    def reset(self, idx: np.ndarray, frame: np.ndarray) -> None:
        """Fill the selected rows with the given frame replicated."""
        self.frames[idx] = frame[:, None, :]

    def push(self, frame: np.ndarray) -> None:
        self.frames[:, :-1] = self.frames[:, 1:]
        self.frames[:, -1] = frame

    def flat(self) -> np.ndarray:
        return self.frames.reshape(self.frames.shape[0], -1)


def build_privileged(
    base_lin_vel_body: np.ndarray,
    contact_force: np.ndarray,
    friction: np.ndarray,
    mass_scale: np.ndarray,
    body_weight: float,
) -> np.ndarray:
    """17-value privileged state; contact forces normalized by nominal body weight."""
    n = base_lin_vel_body.shape[0]
    return np.concatenate([
        base_lin_vel_body,
        contact_force.reshape(n, -1) / body_weight,
        np.asarray(friction).reshape(n, 1),
        np.asarray(mass_scale).reshape(n, 1),
    ], axis=-1)


def build_full_state(
    cmd: np.ndarray, gait_vec: np.ndarray, heightmap: np.ndarray,
    privileged: np.ndarray, partial: np.ndarray,
) -> np.ndarray:
    """Critic input: noiseless concatenation in the frozen (c, g, heights, priv, partial) order."""
    out = np.concatenate([cmd, gait_vec, heightmap, privileged, partial], axis=-1)
    if out.shape[-1] != FULL_STATE_DIM:
        raise ValueError(f"full state is {out.shape[-1]}-dim, expected {FULL_STATE_DIM}")
    return out


def layout_table() -> str:
    """Generated index reference for the frozen observation layouts.

    Checkpoints and eval tooling must agree on these indices; the table is
    also written into every run directory.
    """
    lines = ["partial observation (30)", "name                start  end"]
    for name, sl in OBS_SLICES.items():
        lines.append(f"{name:<20}{sl.start:>5}{sl.stop:>5}")
    lines += ["", "privileged state (17)", "name                start  end"]
    for name, sl in PRIV_SLICES.items():
        lines.append(f"{name:<20}{sl.start:>5}{sl.stop:>5}")
    lines += ["", f"critic full state ({FULL_STATE_DIM})", "name                start  end"]
    offset = 0
    for name, width in (("cmd_vel", CMD_DIM), ("gait_descriptor", GAIT_DIM),
                        ("heightmap", HEIGHT_DIM), ("privileged", PRIV_DIM),
                        ("partial_obs", OBS_DIM)):
        lines.append(f"{name:<20}{offset:>5}{offset + width:>5}")
        offset += width
    lines += ["", f"actor history: {HISTORY_LEN} frames x {OBS_DIM} values, oldest frame first"]
    return "\n".join(lines) + "\n"
