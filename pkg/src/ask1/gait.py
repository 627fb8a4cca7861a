"""Per-foot phase clocks, the commanded contact schedule, and the gait descriptor vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)
GAIT_VEC_DIM = 11  # sin/cos of 4 foot phases + frequency + body height + stance ratio


@dataclass
class GaitCommand:
    """Commanded velocities plus the gait descriptor parameters.

    cmd_vel is (..., 3): longitudinal, lateral, yaw rate. The remaining fields
    are shared across a batch of environments and fixed for an episode segment.
    """

    cmd_vel: np.ndarray
    phase_offsets: np.ndarray = field(default_factory=lambda: np.array(TROT_OFFSETS))
    frequency_hz: float = 2.0
    body_height: float = 0.37
    stance_ratio: float = 0.5
    kappa: float = 0.04  # sigmoid transition width of the contact schedule, phase units

    def __post_init__(self):
        self.cmd_vel = np.asarray(self.cmd_vel, dtype=np.float64)
        self.phase_offsets = np.asarray(self.phase_offsets, dtype=np.float64)
        if self.frequency_hz <= 0:
            raise ValueError("gait frequency must be positive")
        if not 0.1 < self.stance_ratio < 0.9:
            raise ValueError("stance ratio must lie in (0.1, 0.9)")
        if np.any(self.phase_offsets < 0) or np.any(self.phase_offsets >= 1):
            raise ValueError("phase offsets must lie in [0, 1)")


def advance_phases(phases: np.ndarray, frequency_hz: float, dt: float) -> np.ndarray:
    """Advance phase clocks by f*dt, wrapping into [0, 1)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.mod(np.asarray(phases) + frequency_hz * dt, 1.0)


def foot_phase(base_phase: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Effective per-foot phase: base clock shifted by the commanded offset, mod 1."""
    return np.mod(np.asarray(base_phase) + np.asarray(offset), 1.0)


def desired_contact(phase: np.ndarray, stance_ratio: float, kappa: float = 0.04) -> np.ndarray:
    """Smooth commanded-contact indicator: ~1 over the stance window [0, rho), ~0 in swing.

    Sigmoid-smoothed square wave; the transition midpoints sit at phase 0 and
    phase rho. Summing the wrapped copies at phase-1 and phase+1 keeps the
    indicator continuous across the cycle boundary.
    """
    phase = np.asarray(phase, dtype=np.float64)

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x / kappa))

    c = np.zeros_like(phase)
    for shift in (-1.0, 0.0, 1.0):
        p = phase + shift
        c = c + sig(p) * sig(stance_ratio - p)
    return c


def gait_descriptor(foot_phases: np.ndarray, cmd: GaitCommand) -> np.ndarray:
    """11-number gait vector: [sin, cos] per foot phase, then f, body height, stance ratio.

    Sine/cosine encoding avoids the wrap discontinuity at phase 0. foot_phases
    is (..., 4); the scalars broadcast over leading dimensions.
    """
    foot_phases = np.asarray(foot_phases, dtype=np.float64)
    ang = 2.0 * np.pi * foot_phases
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(*foot_phases.shape[:-1], 8)
    tail = np.broadcast_to(
        np.array([cmd.frequency_hz, cmd.body_height, cmd.stance_ratio]),
        (*foot_phases.shape[:-1], 3),
    )
    return np.concatenate([enc, tail], axis=-1)
