"""Robot constants, leg kinematics, nominal stance geometry, and the joint PD law."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

NUM_LEGS = 4
NUM_JOINTS = 12
# foot order used everywhere: front-right, front-left, rear-right, rear-left
FOOT_NAMES = ("FR", "FL", "RR", "RL")
# +1 for left feet / front feet, -1 for right / rear, in FR, FL, RR, RL order
SIDE_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])
FRONT_SIGN = np.array([1.0, 1.0, -1.0, -1.0])


@dataclass(frozen=True)
class RobotParams:
    """Kinematic and dynamic constants for one robot variant."""

    name: str
    trunk_mass: float                       # kg
    trunk_dims: tuple[float, float, float]  # length, width, height [m]
    thigh_len: float                        # m
    calf_len: float                         # m
    hip_offsets: np.ndarray                 # (4, 3) hip positions in trunk frame
    torque_limit: float                     # Nm, per joint
    kp: float                               # Nm/rad
    kd: float                               # Nm*s/rad
    joint_lower: np.ndarray                 # (12,) rad
    joint_upper: np.ndarray                 # (12,) rad
    nominal_q: np.ndarray                   # (12,) rad, standing pose
    nominal_body_height: float              # m, base height at nominal_q
    action_scale: float                     # rad per unit action

    def __post_init__(self):
        for field in ("hip_offsets", "joint_lower", "joint_upper", "nominal_q"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, field), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        if self.thigh_len <= 0 or self.calf_len <= 0 or self.trunk_mass <= 0:
            raise ValueError("link lengths and trunk mass must be positive")
        if self.torque_limit <= 0 or self.kp <= 0 or self.kd < 0:
            raise ValueError("need torque_limit > 0, kp > 0, kd >= 0")
        if self.hip_offsets.shape != (4, 3):
            raise ValueError("hip_offsets must be (4, 3)")
        if not np.all((self.joint_lower < self.nominal_q) & (self.nominal_q < self.joint_upper)):
            raise ValueError("nominal_q must lie strictly inside joint limits")
        hx, hy = self.hip_offsets[:, 0], self.hip_offsets[:, 1]
        if not (np.all(np.sign(hx) == FRONT_SIGN) and np.all(np.sign(hy) == SIDE_SIGN)):
            raise ValueError("hip_offsets must respect fore/aft and left/right symmetry")

    @property
    def trunk_inertia(self) -> np.ndarray:
        """Diagonal box inertia of the trunk about its center, kg*m^2."""
        length, width, height = self.trunk_dims
        m = self.trunk_mass
        return np.array([
            m * (width**2 + height**2) / 12.0,
            m * (length**2 + height**2) / 12.0,
            m * (length**2 + width**2) / 12.0,
        ])


@dataclass(frozen=True)
class StanceGeometry:
    """Nominal ground-plane foot pattern: lateral/fore-aft spacing and per-foot targets."""

    width_w: float          # m, lateral foot-to-foot spacing
    length_l: float         # m, fore-aft foot-to-foot spacing
    p_norm: np.ndarray      # (4, 2) nominal (x, y) foot positions, body frame, FR FL RR RL

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.p_norm, dtype=np.float64))
        p.setflags(write=False)
        object.__setattr__(self, "p_norm", p)
        if self.width_w <= 0 or self.length_l <= 0:
            raise ValueError("stance width and length must be positive")
        fr, fl, rr, rl = self.p_norm
        if not (np.isclose(fr[1], -fl[1]) and np.isclose(fr[0], fl[0]) and np.isclose(rr[0], rl[0])):
            raise ValueError("p_norm must be left/right symmetric")


def _default_joint_limits() -> tuple[np.ndarray, np.ndarray]:
    lower = np.tile([-0.8, -1.0, -2.7], NUM_LEGS)
    upper = np.tile([0.8, 2.6, -0.85], NUM_LEGS)
    return lower, upper


def _hip_offsets(length: float, width: float) -> np.ndarray:
    hx, hy = 0.31 * length, 0.5 * width
    return np.array([
        [hx, -hy, 0.0],
        [hx, hy, 0.0],
        [-hx, -hy, 0.0],
        [-hx, hy, 0.0],
    ])


def _standing_height(thigh: float, calf: float, q_leg: np.ndarray) -> float:
    return thigh * np.cos(q_leg[1]) + calf * np.cos(q_leg[1] + q_leg[2])


def make_robot(preset: str, **overrides) -> RobotParams:
    """Build a robot preset ("go1" or "ask1"), optionally overriding any field."""
    nominal_leg = np.array([0.0, 0.8, -1.6])
    lower, upper = _default_joint_limits()
    if preset == "go1":
        base = dict(
            name="go1", trunk_mass=12.0, trunk_dims=(0.645, 0.28, 0.40),
            thigh_len=0.23, calf_len=0.24, torque_limit=23.7,
        )
    elif preset == "ask1":
        base = dict(
            name="ask1", trunk_mass=20.0, trunk_dims=(0.84, 0.36, 0.43),
            thigh_len=0.28, calf_len=0.25, torque_limit=25.0,
        )
    else:
        raise ValueError(f"unknown robot preset '{preset}' (expected 'go1' or 'ask1')")
    params = dict(
        base,
        hip_offsets=_hip_offsets(base["trunk_dims"][0], base["trunk_dims"][1]),
        kp=20.0, kd=0.5,
        joint_lower=lower, joint_upper=upper,
        nominal_q=np.tile(nominal_leg, NUM_LEGS),
        nominal_body_height=_standing_height(base["thigh_len"], base["calf_len"], nominal_leg),
        action_scale=0.25,
    )
    params.update(overrides)
    if "nominal_q" in overrides and "nominal_body_height" not in overrides:
        q = np.asarray(overrides["nominal_q"], dtype=np.float64)
        params["nominal_body_height"] = _standing_height(params["thigh_len"], params["calf_len"], q[:3])
    return RobotParams(**params)


def leg_fk(q_leg: np.ndarray, leg_index: int, params: RobotParams) -> np.ndarray:
    """Foot position in the trunk frame for one leg.

    Joint order per leg is (hip abduction about x, hip pitch about y, knee pitch
    about y); the zero pose is a straight leg pointing down, positive pitch
    swings the foot forward. q_leg may carry leading batch dimensions.
    """
    q_leg = np.asarray(q_leg, dtype=np.float64)
    q0, q1, q12 = q_leg[..., 0], q_leg[..., 1], q_leg[..., 1] + q_leg[..., 2]
    ux = params.thigh_len * np.sin(q1) + params.calf_len * np.sin(q12)
    uz = -params.thigh_len * np.cos(q1) - params.calf_len * np.cos(q12)
    c0, s0 = np.cos(q0), np.sin(q0)
    foot = np.stack([ux, -s0 * uz, c0 * uz], axis=-1)
    return foot + params.hip_offsets[leg_index]


def leg_foot_velocity(q_leg: np.ndarray, qd_leg: np.ndarray, params: RobotParams) -> np.ndarray:
    """Foot velocity in the trunk frame induced by joint rates (analytic Jacobian)."""
    q_leg = np.asarray(q_leg, dtype=np.float64)
    qd_leg = np.asarray(qd_leg, dtype=np.float64)
    q0, q1, q12 = q_leg[..., 0], q_leg[..., 1], q_leg[..., 1] + q_leg[..., 2]
    qd0, qd1, qd12 = qd_leg[..., 0], qd_leg[..., 1], qd_leg[..., 1] + qd_leg[..., 2]
    lt, lc = params.thigh_len, params.calf_len
    ux = lt * np.sin(q1) + lc * np.sin(q12)
    uz = -lt * np.cos(q1) - lc * np.cos(q12)
    dux = lt * np.cos(q1) * qd1 + lc * np.cos(q12) * qd12
    duz = lt * np.sin(q1) * qd1 + lc * np.sin(q12) * qd12
    c0, s0 = np.cos(q0), np.sin(q0)
    vx = dux
    vy = -c0 * uz * qd0 - s0 * duz
    vz = -s0 * uz * qd0 + c0 * duz
    return np.stack([vx, vy, vz], axis=-1)


def all_feet_fk(q: np.ndarray, params: RobotParams) -> np.ndarray:
    """Foot positions (..., 4, 3) in the trunk frame for all legs, q shaped (..., 12)."""
    q = np.asarray(q, dtype=np.float64)
    legs = [leg_fk(q[..., 3 * i:3 * i + 3], i, params) for i in range(NUM_LEGS)]
    return np.stack(legs, axis=-2)


def all_feet_velocity(q: np.ndarray, q_dot: np.ndarray, params: RobotParams) -> np.ndarray:
    """Foot velocities (..., 4, 3) in the trunk frame for all legs."""
    q = np.asarray(q, dtype=np.float64)
    q_dot = np.asarray(q_dot, dtype=np.float64)
    legs = [
        leg_foot_velocity(q[..., 3 * i:3 * i + 3], q_dot[..., 3 * i:3 * i + 3], params)
        for i in range(NUM_LEGS)
    ]
    return np.stack(legs, axis=-2)


def pd_torque(
    q_target: np.ndarray,
    q: np.ndarray,
    q_dot: np.ndarray,
    params: RobotParams,
    kp: np.ndarray | float | None = None,
    kd: np.ndarray | float | None = None,
) -> np.ndarray:
    """Per-joint PD torque, clamped to the actuator limit.

    kp/kd default to the robot's fixed gains; arrays may be passed to apply
    per-env randomized gains.
    """
    kp = params.kp if kp is None else kp
    kd = params.kd if kd is None else kd
    raw = kp * (np.asarray(q_target) - np.asarray(q)) - kd * np.asarray(q_dot)
    return np.clip(raw, -params.torque_limit, params.torque_limit)


def nominal_stance(params: RobotParams) -> StanceGeometry:
    """Ground-plane projection of the nominal standing pose."""
    feet = all_feet_fk(params.nominal_q, params)
    p_norm = feet[:, :2].copy()
    width = p_norm[1, 1] - p_norm[0, 1]
    length = p_norm[0, 0] - p_norm[2, 0]
    return StanceGeometry(width_w=width, length_l=length, p_norm=p_norm)


def replace_params(params: RobotParams, **overrides) -> RobotParams:
    return dataclasses.replace(params, **overrides)
