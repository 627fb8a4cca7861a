"""Vectorized simplified quadruped environment.

Physics model: rigid trunk with massless legs. Joints are PD-driven
second-order servos with a fixed reflected inertia; leg kinematics place the
feet, and ground reaction forces (spring-damper normal, anchored spring-damper
tangential with a Coulomb cap) act on the trunk. Physics runs at 200 Hz with
4 substeps per 50 Hz policy step.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import obs as obsmod
from .foothold import desired_footholds
from .gait import GaitCommand, advance_phases, desired_contact, foot_phase, gait_descriptor
from .mathutil import (
    cross3,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_rotate_inverse,
    quat_yaw,
    rpy_to_quat,
    yaw_rotate_inverse,
)
from .rewards import (
    NUM_ROWS,
    RewardBreakdown,
    RewardWeights,
    combine,
    contact_schedule_reward,
    regularization_reward,
    style_reward,
    task_reward,
)

TERRAIN_KINDS = ("flat", "stairs", "rough")
DONE_REASONS = ("running", "trunk_contact", "orientation", "diverged", "timeout")
REASON_NONE, REASON_TRUNK, REASON_ORIENTATION, REASON_DIVERGED, REASON_TIMEOUT = range(5)

# heightmap: 17 x 11 yaw-aligned grid over 1.6 m x 1.0 m, row-major x-outer
HM_X = np.linspace(-0.8, 0.8, 17)
HM_Y = np.linspace(-0.5, 0.5, 11)
HM_POINTS = np.stack(np.meshgrid(HM_X, HM_Y, indexing="ij"), axis=-1).reshape(-1, 2)
HEIGHTMAP_SIZE = HM_POINTS.shape[0]


@dataclass(frozen=True)
class TerrainParams:
    resolution: float = 0.05
    x_range: tuple[float, float] = (-6.0, 26.0)
    y_range: tuple[float, float] = (-6.0, 6.0)
    stair_rise: float = 0.18
    stair_run: float = 0.30
    stair_start: float = 1.5
    stair_count: int = 24
    rough_amplitude: float = 0.08
    rough_cell: float = 0.5
    apron_radius: float = 1.0  # flat spawn region around the origin


@dataclass(frozen=True)
class TerrainField:
    """One immutable height grid; heights are bilinearly sampled and edge-clamped."""

    kind: str
    grid: np.ndarray       # (ny, nx) surface heights, m
    resolution: float
    origin: tuple[float, float]
    friction_mu: float
    seed: int

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.grid, dtype=np.float64))
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("terrain heights must be finite")
        if self.friction_mu <= 0:
            raise ValueError("friction must be positive")

    def heights(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return _bilinear(self.grid[None], np.zeros(np.shape(x), dtype=np.intp),
                         x, y, self.origin, self.resolution)


def _bilinear(grids: np.ndarray, levels: np.ndarray, x, y, origin, resolution) -> np.ndarray:
    ny, nx = grids.shape[1], grids.shape[2]
    fx = np.clip((np.asarray(x) - origin[0]) / resolution, 0.0, nx - 1.0)
    fy = np.clip((np.asarray(y) - origin[1]) / resolution, 0.0, ny - 1.0)
    ix = np.minimum(fx.astype(np.intp), nx - 2)
    iy = np.minimum(fy.astype(np.intp), ny - 2)
    tx = fx - ix
    ty = fy - iy
    flat = grids.reshape(-1)
    base = (np.broadcast_to(levels, np.shape(fx)) * ny + iy) * nx + ix
    h00 = flat[base]
    h10 = flat[base + 1]
    h01 = flat[base + nx]
    h11 = flat[base + nx + 1]
    return (h00 * (1 - tx) * (1 - ty) + h10 * tx * (1 - ty)
            + h01 * (1 - tx) * ty + h11 * tx * ty)


def make_terrain(
    kind: str,
    params: TerrainParams,
    seed: int,
    friction_mu: float = 1.0,
    difficulty: float = 1.0,
) -> TerrainField:
    """Deterministic terrain generation; difficulty in (0, 1] scales rise/amplitude."""
    if kind not in TERRAIN_KINDS:
        raise ValueError(f"unknown terrain kind '{kind}'")
    if params.resolution <= 0:
        raise ValueError("terrain resolution must be positive")
    res = params.resolution
    x0, x1 = params.x_range
    y0, y1 = params.y_range
    nx = int(round((x1 - x0) / res)) + 1
    ny = int(round((y1 - y0) / res)) + 1
    xs = x0 + res * np.arange(nx)
    ys = y0 + res * np.arange(ny)

    if kind == "flat":
        grid = np.zeros((ny, nx))
    elif kind == "stairs":
        rise = params.stair_rise * difficulty
        if not 0.0 < rise <= 0.18:
            raise ValueError("stair rise must lie in (0, 0.18] m")
        step = np.floor((xs - params.stair_start) / params.stair_run)
        tread = np.clip(step + 1.0, 0.0, params.stair_count)
        grid = np.broadcast_to(rise * tread, (ny, nx)).copy()
    else:
        amp = params.rough_amplitude * difficulty
        if amp < 0:
            raise ValueError("rough amplitude must be non-negative")
        rng = np.random.Generator(np.random.PCG64(seed))
        cx = int(np.ceil((x1 - x0) / params.rough_cell)) + 2
        cy = int(np.ceil((y1 - y0) / params.rough_cell)) + 2
        coarse = rng.uniform(-amp, amp, (cy, cx))
        gx = np.clip((xs - x0) / params.rough_cell, 0, cx - 1.001)
        gy = np.clip((ys - y0) / params.rough_cell, 0, cy - 1.001)
        ix, iy = gx.astype(np.intp), gy.astype(np.intp)
        tx, ty = gx - ix, gy - iy
        grid = (coarse[np.ix_(iy, ix)] * (1 - ty)[:, None] * (1 - tx)[None]
                + coarse[np.ix_(iy, ix + 1)] * (1 - ty)[:, None] * tx[None]
                + coarse[np.ix_(iy + 1, ix)] * ty[:, None] * (1 - tx)[None]
                + coarse[np.ix_(iy + 1, ix + 1)] * ty[:, None] * tx[None])
        r = np.sqrt(xs[None, :] ** 2 + ys[:, None] ** 2)
        ramp = np.clip((r - params.apron_radius) / 1.0, 0.0, 1.0)
        grid = grid * ramp
    return TerrainField(kind=kind, grid=grid, resolution=res, origin=(x0, y0),
                        friction_mu=friction_mu, seed=seed)


def make_terrain_levels(
    kind: str, params: TerrainParams, seed: int, friction_mu: float, levels: int
) -> list[TerrainField]:
    """Difficulty-graded terrain family for the curriculum; flat has a single level."""
    if kind == "flat" or levels <= 1:
        return [make_terrain(kind, params, seed, friction_mu)]
    return [
        make_terrain(kind, params, seed + k, friction_mu, difficulty=(k + 1) / levels)
        for k in range(levels)
    ]


class TerrainSet:
    """Stack of same-geometry terrain grids, indexable by per-env level."""

    def __init__(self, fields: list[TerrainField]):
        self.fields = fields
        self.grids = np.stack([f.grid for f in fields])
        self.resolution = fields[0].resolution
        self.origin = fields[0].origin
        self.friction_mu = fields[0].friction_mu
        self.num_levels = len(fields)
        # constant fields (flat terrain) skip the bilinear gather entirely
        c = self.grids.flat[0]
        self.const_height = c if np.all(self.grids == c) else None

    def heights(self, levels: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.const_height is not None:
            shape = np.broadcast_shapes(np.shape(levels), np.shape(x), np.shape(y))
            return np.full(shape, self.const_height)
        return _bilinear(self.grids, levels, x, y, self.origin, self.resolution)


def sample_heightmap(terrain: TerrainField, base_pos: np.ndarray, base_yaw: np.ndarray) -> np.ndarray:
    """187 terrain heights around the base, yaw-aligned, relative to the base z."""
    base_pos = np.asarray(base_pos, dtype=np.float64)
    yaw = np.asarray(base_yaw, dtype=np.float64)
    c, s = np.cos(yaw)[..., None], np.sin(yaw)[..., None]
    px = base_pos[..., 0:1] + c * HM_POINTS[:, 0] - s * HM_POINTS[:, 1]
    py = base_pos[..., 1:2] + s * HM_POINTS[:, 0] + c * HM_POINTS[:, 1]
    return terrain.heights(px, py) - base_pos[..., 2:3]


@dataclass
class RandomizationRanges:
    enabled: bool = True
    friction_scale: tuple[float, float] = (0.5, 1.25)
    mass_scale: tuple[float, float] = (0.9, 1.2)
    kp_scale: tuple[float, float] = (0.9, 1.1)
    kd_scale: tuple[float, float] = (0.9, 1.1)
    latency_steps: tuple[int, int] = (0, 1)


@dataclass
class RandomizedDynamics:
    """Per-env dynamics perturbations, redrawn at every reset."""

    friction_scale: np.ndarray
    mass_scale: np.ndarray
    kp_scale: np.ndarray
    kd_scale: np.ndarray
    obs_latency: np.ndarray  # int, {0, 1}

    @staticmethod
    def identity(num_envs: int) -> "RandomizedDynamics":
        one = np.ones(num_envs)
        return RandomizedDynamics(one.copy(), one.copy(), one.copy(), one.copy(),
                                  np.zeros(num_envs, dtype=np.intp))


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.005
    decimation: int = 4            # 200 Hz physics -> 50 Hz policy
    gravity: float = 9.81
    contact_stiffness: float = 4000.0   # N/m
    contact_damping: float = 120.0      # N*s/m
    contact_damping_depth: float = 0.01  # m; damping ramps in over this penetration
    tangent_stiffness: float = 4000.0
    tangent_damping: float = 120.0
    joint_inertia: float = 0.05         # kg*m^2 reflected at each joint
    joint_damping: float = 0.6          # Nm*s/rad viscous friction of the geared actuator
    velocity_sanity: float = 50.0       # m/s, divergence threshold
    orientation_gz_limit: float = -0.2  # terminate when body-frame gravity z exceeds this
    episode_seconds: float = 20.0

    @property
    def policy_dt(self) -> float:
        return self.dt * self.decimation

    @property
    def episode_len_max(self) -> int:
        return int(round(self.episode_seconds / self.policy_dt))


@dataclass
class CommandRanges:
    lin_vel_x: tuple[float, float] = (-0.8, 0.8)
    lin_vel_y: tuple[float, float] = (-0.4, 0.4)
    ang_vel_z: tuple[float, float] = (-0.8, 0.8)
    # new command segment every this many policy steps (0 = hold for the episode)
    resample_steps: int = 250


@dataclass
class RobotState:
    """Batched rigid-trunk state; every array carries a leading num_envs dimension."""

    base_pos: np.ndarray        # (N, 3) world
    base_quat: np.ndarray       # (N, 4) body->world, scalar first
    base_lin_vel: np.ndarray    # (N, 3) world
    base_ang_vel: np.ndarray    # (N, 3) body frame
    q: np.ndarray               # (N, 12)
    q_dot: np.ndarray           # (N, 12)
    foot_pos: np.ndarray        # (N, 4, 3) world
    foot_vel: np.ndarray        # (N, 4, 3) world
    contact_force: np.ndarray   # (N, 4, 3) world
    last_torque: np.ndarray     # (N, 12)
    prev_q_target: np.ndarray   # (N, 12)
    contact_anchor: np.ndarray  # (N, 4, 2) tangential spring anchors
    in_contact: np.ndarray      # (N, 4) bool
    diverged: np.ndarray        # (N,) bool

    @staticmethod
    def zeros(num_envs: int) -> "RobotState":
        s = RobotState(
            base_pos=np.zeros((num_envs, 3)),
            base_quat=np.zeros((num_envs, 4)),
            base_lin_vel=np.zeros((num_envs, 3)),
            base_ang_vel=np.zeros((num_envs, 3)),
            q=np.zeros((num_envs, 12)),
            q_dot=np.zeros((num_envs, 12)),
            foot_pos=np.zeros((num_envs, 4, 3)),
            foot_vel=np.zeros((num_envs, 4, 3)),
            contact_force=np.zeros((num_envs, 4, 3)),
            last_torque=np.zeros((num_envs, 12)),
            prev_q_target=np.zeros((num_envs, 12)),
            contact_anchor=np.zeros((num_envs, 4, 2)),
            in_contact=np.zeros((num_envs, 4), dtype=bool),
            diverged=np.zeros(num_envs, dtype=bool),
        )
        s.base_quat[:, 0] = 1.0
        return s

    def rows(self, sel) -> "RobotState":
        """View onto a contiguous row slice; mutations write through."""
        return RobotState(**{k: getattr(self, k)[sel] for k in self.__dataclass_fields__})


def _world_feet(state: RobotState, robot: mdl.RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """Foot world positions and velocities from the current base and joint state."""
    feet_b = mdl.all_feet_fk(state.q, robot)
    feet_rel = quat_rotate(state.base_quat[:, None, :], feet_b)
    pos = state.base_pos[:, None, :] + feet_rel
    vel_joint_b = mdl.all_feet_velocity(state.q, state.q_dot, robot)
    omega_w = quat_rotate(state.base_quat, state.base_ang_vel)
    vel = (state.base_lin_vel[:, None, :]
           + cross3(omega_w[:, None, :], feet_rel)
           + quat_rotate(state.base_quat[:, None, :], vel_joint_b))
    return pos, vel


def _contact_forces(
    state: RobotState,
    foot_pos: np.ndarray,
    foot_vel: np.ndarray,
    ground_z: np.ndarray,
    friction_mu: np.ndarray,
    sim: SimParams,
) -> np.ndarray:
    """Spring-damper normal force plus anchored tangential force with a Coulomb cap.

    Updates the tangential anchors in place (new contacts latch, sliding
    contacts drag their anchor along).
    """
    pen = ground_z - foot_pos[..., 2]
    contact = pen > 0.0
    # damping ramps in with penetration (Hunt-Crossley flavor) to soften touchdowns
    damp = sim.contact_damping * np.clip(pen / sim.contact_damping_depth, 0.0, 1.0)
    fn = np.where(
        contact,
        np.maximum(0.0, sim.contact_stiffness * pen - damp * foot_vel[..., 2]),
        0.0,
    )

    new_contact = contact & ~state.in_contact
    state.contact_anchor[new_contact] = foot_pos[..., :2][new_contact]
    state.in_contact[:] = contact

    ft = np.where(
        contact[..., None],
        -sim.tangent_stiffness * (foot_pos[..., :2] - state.contact_anchor)
        - sim.tangent_damping * foot_vel[..., :2],
        0.0,
    )
    cap = friction_mu[:, None] * fn
    ft_mag = np.linalg.norm(ft, axis=-1)
    over = ft_mag > cap
    scale = np.where(over, cap / np.maximum(ft_mag, 1e-12), 1.0)
    ft = ft * scale[..., None]
    # sliding: move the anchor so the capped force is consistent with the spring
    slide = over & contact
    if np.any(slide):
        target = foot_pos[..., :2] + (ft + sim.tangent_damping * foot_vel[..., :2]) / sim.tangent_stiffness
        state.contact_anchor[slide] = target[slide]
    return np.concatenate([ft, fn[..., None]], axis=-1)


def physics_substep(
    state: RobotState,
    torque: np.ndarray,
    ground_fn,
    friction_mu: np.ndarray,
    robot: mdl.RobotParams,
    sim: SimParams,
    rand: RandomizedDynamics,
) -> None:
    """One 5 ms rigid-trunk update, in place.

    ground_fn(x, y) returns terrain heights under the given world coordinates;
    friction_mu is the per-env effective friction coefficient. Contact forces
    are evaluated at the stored (pre-step) foot state; base and joints then
    integrate with a velocity-first update whose position correction keeps
    constant-acceleration trajectories exact, and the foot state is recomputed
    so it always matches the leg kinematics of the current q and base pose.
    """
    dt = sim.dt
    foot_pos, foot_vel = state.foot_pos, state.foot_vel
    ground_z = ground_fn(foot_pos[..., 0], foot_pos[..., 1])
    forces = _contact_forces(state, foot_pos, foot_vel, ground_z, np.asarray(friction_mu), sim)

    m_eff = (robot.trunk_mass * rand.mass_scale)[:, None]
    total_f = np.sum(forces, axis=1)
    total_f[:, 2] -= sim.gravity * m_eff[:, 0]
    acc = total_f / m_eff
    state.base_lin_vel += acc * dt
    state.base_pos += state.base_lin_vel * dt - 0.5 * acc * dt * dt

    lever = foot_pos - state.base_pos[:, None, :]
    torque_w = np.sum(cross3(lever, forces), axis=1)
    torque_b = quat_rotate_inverse(state.base_quat, torque_w)
    inertia = robot.trunk_inertia[None, :] * rand.mass_scale[:, None]
    coriolis = cross3(state.base_ang_vel, inertia * state.base_ang_vel)
    ang_acc = (torque_b - coriolis) / inertia
    state.base_ang_vel += ang_acc * dt
    dq = quat_from_rotvec(state.base_ang_vel * dt)
    state.base_quat[:] = quat_normalize(quat_mul(state.base_quat, dq))

    qdd = (np.asarray(torque) - sim.joint_damping * state.q_dot) / sim.joint_inertia
    state.q_dot += qdd * dt
    state.q += state.q_dot * dt - 0.5 * qdd * dt * dt
    low, high = robot.joint_lower, robot.joint_upper
    hit = (state.q <= low) | (state.q >= high)
    np.clip(state.q, low, high, out=state.q)
    state.q_dot[hit] = 0.0

    new_pos, new_vel = _world_feet(state, robot)
    state.foot_pos[:] = new_pos
    state.foot_vel[:] = new_vel
    state.contact_force[:] = forces
    state.last_torque[:] = np.broadcast_to(torque, state.last_torque.shape)

    speed = np.linalg.norm(state.base_lin_vel, axis=-1)
    bad = (~np.isfinite(speed)) | (speed > sim.velocity_sanity)
    bad |= ~np.all(np.isfinite(state.q_dot), axis=-1)
    state.diverged |= bad


def check_termination(
    state: RobotState, ground_z_base: np.ndarray, robot: mdl.RobotParams, sim: SimParams
) -> np.ndarray:
    """Per-env reason codes: trunk contact, fallen orientation, or divergence."""
    reasons = np.zeros(state.base_pos.shape[0], dtype=np.intp)
    g_b = obsmod.gravity_projection(state.base_quat)
    reasons[g_b[:, 2] > sim.orientation_gz_limit] = REASON_ORIENTATION
    trunk_clearance = state.base_pos[:, 2] - ground_z_base
    reasons[trunk_clearance < robot.trunk_dims[2] / 2.0] = REASON_TRUNK
    reasons[state.diverged] = REASON_DIVERGED
    return reasons


@dataclass
class StepResult:
    rewards: RewardBreakdown
    done: np.ndarray          # (N,) bool
    done_reason: np.ndarray   # (N,) int codes into DONE_REASONS
    episode_len: np.ndarray   # (N,) step count including this step


@dataclass
class ObsBundle:
    history: np.ndarray      # (N, 150) actor history stack, oldest frame first
    cmd: np.ndarray          # (N, 3)
    gait_vec: np.ndarray     # (N, 11)
    critic_obs: np.ndarray   # (N, 248)
    vel_target: np.ndarray   # (N, 3) true body-frame base linear velocity


class QuadrupedEnv:
    """Batch of independent simplified quadruped environments.

    All per-env state lives in arrays with a leading num_envs axis; per-env
    randomness comes from per-env generators, so stepping a batch is bitwise
    identical to stepping each env alone with the same seeds.
    """

    def __init__(
        self,
        robot: mdl.RobotParams,
        num_envs: int,
        terrains: list[TerrainField],
        seed: int = 0,
        command_ranges: CommandRanges | None = None,
        reward_weights: RewardWeights | None = None,
        noise: obsmod.NoiseConfig | None = None,
        randomization: RandomizationRanges | None = None,
        sim_params: SimParams | None = None,
        gait_frequency: float = 2.0,
        stance_ratio: float = 0.5,
        phase_offsets=(0.0, 0.5, 0.5, 0.0),
        body_height_cmd: float | None = None,
        gait_kappa: float = 0.04,
        curriculum: bool = True,
        num_threads: int = 1,
        env_index_offset: int = 0,
        spawn_noise_scale: float = 1.0,
    ):
        self.robot = robot
        self.num_envs = num_envs
        self.terrain_set = TerrainSet(terrains)
        self.seed = seed
        # global index base for per-env seeding: a sub-batch constructed with an
        # offset reproduces the corresponding rows of a larger batch bitwise
        self.env_index_offset = env_index_offset
        self.commands = command_ranges or CommandRanges()
        self.weights = reward_weights or RewardWeights()
        self.noise = noise or obsmod.NoiseConfig()
        self.randomization = randomization or RandomizationRanges()
        self.sim = sim_params or SimParams()
        self.curriculum = curriculum and self.terrain_set.num_levels > 1
        self.num_threads = max(1, num_threads)
        self.spawn_noise_scale = spawn_noise_scale
        self.geometry = mdl.nominal_stance(robot)

        self.cmd_vel = np.zeros((num_envs, 3))
        self.gait = GaitCommand(
            cmd_vel=self.cmd_vel,
            phase_offsets=np.asarray(phase_offsets, dtype=np.float64),
            frequency_hz=gait_frequency,
            body_height=robot.nominal_body_height if body_height_cmd is None else body_height_cmd,
            stance_ratio=stance_ratio,
            kappa=gait_kappa,
        )

        self.state = RobotState.zeros(num_envs)
        self.rand = RandomizedDynamics.identity(num_envs)
        self.phases = np.zeros((num_envs, 4))
        self.step_count = np.zeros(num_envs, dtype=np.intp)
        self.episode_len_max = self.sim.episode_len_max
        self.episode_counter = np.zeros(num_envs, dtype=np.intp)
        self.terrain_level = np.zeros(num_envs, dtype=np.intp)
        self.difficulty = np.zeros(num_envs)
        self.prev_q_dot = np.zeros((num_envs, 12))
        self.q_target = np.tile(robot.nominal_q, (num_envs, 1))
        self.prev_raw_obs = np.zeros((num_envs, obsmod.OBS_DIM))
        self.history = obsmod.HistoryBuffer(num_envs)
        self.rngs: list[np.random.Generator] = [None] * num_envs
        self._pool = ThreadPoolExecutor(self.num_threads) if self.num_threads > 1 else None

        self.reset_envs(np.arange(num_envs))

    # ------------------------------------------------------------------ reset

    def reset_envs(self, idx: np.ndarray, seed_override: int | None = None) -> None:
        """Re-seed and respawn the selected envs; deterministic in (seed, env, episode)."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
        rr = self.randomization
        for i in idx:
            gi = self.env_index_offset + int(i)
            if seed_override is not None:
                entropy = (int(seed_override), gi)
            else:
                entropy = (self.seed, gi, int(self.episode_counter[i]))
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
            self.rngs[i] = rng
            self.episode_counter[i] += 1

            if rr.enabled:
                self.rand.friction_scale[i] = rng.uniform(*rr.friction_scale)
                self.rand.mass_scale[i] = rng.uniform(*rr.mass_scale)
                self.rand.kp_scale[i] = rng.uniform(*rr.kp_scale)
                self.rand.kd_scale[i] = rng.uniform(*rr.kd_scale)
                self.rand.obs_latency[i] = rng.integers(rr.latency_steps[0], rr.latency_steps[1] + 1)
            else:
                self.rand.friction_scale[i] = 1.0
                self.rand.mass_scale[i] = 1.0
                self.rand.kp_scale[i] = 1.0
                self.rand.kd_scale[i] = 1.0
                self.rand.obs_latency[i] = 0

            sp = self.spawn_noise_scale
            yaw = sp * rng.uniform(-np.pi, np.pi)
            dxy = sp * rng.uniform(-0.1, 0.1, 2)
            roll, pitch = sp * rng.uniform(-0.05, 0.05, 2)
            q_pert = sp * rng.uniform(-0.05, 0.05, 12)
            self.cmd_vel[i, 0] = rng.uniform(*self.commands.lin_vel_x)
            self.cmd_vel[i, 1] = rng.uniform(*self.commands.lin_vel_y)
            self.cmd_vel[i, 2] = rng.uniform(*self.commands.ang_vel_z)

            st = self.state
            st.base_quat[i] = rpy_to_quat(roll, pitch, yaw)
            ground = self.terrain_set.heights(self.terrain_level[i], dxy[0], dxy[1])
            # spawn at the static spring penetration so the stand starts settled
            sag = (self.robot.trunk_mass * self.rand.mass_scale[i] * self.sim.gravity
                   / (4.0 * self.sim.contact_stiffness))
            st.base_pos[i] = (dxy[0], dxy[1], ground + self.robot.nominal_body_height - sag)
            st.base_lin_vel[i] = 0.0
            st.base_ang_vel[i] = 0.0
            st.q[i] = self.robot.nominal_q + q_pert
            st.q_dot[i] = 0.0
            st.contact_force[i] = 0.0
            st.last_torque[i] = 0.0
            st.prev_q_target[i] = self.robot.nominal_q
            st.contact_anchor[i] = 0.0
            st.in_contact[i] = False
            st.diverged[i] = False

        feet_pos, feet_vel = _world_feet(self.state.rows(idx), self.robot)
        self.state.foot_pos[idx] = feet_pos
        self.state.foot_vel[idx] = feet_vel
        self.phases[idx] = 0.0
        self.step_count[idx] = 0
        self.prev_q_dot[idx] = 0.0
        self.q_target[idx] = self.robot.nominal_q

        st = self.state.rows(idx)
        raw = obsmod.raw_partial_obs(st.base_quat, st.base_ang_vel, st.q, st.q_dot)
        self.prev_raw_obs[idx] = raw
        self.history.reset(idx, raw)

    def set_commands(self, cmd_vel: np.ndarray) -> None:
        self.cmd_vel[:] = np.asarray(cmd_vel, dtype=np.float64)

    # ------------------------------------------------------------------- step

    def step(self, actions: np.ndarray) -> StepResult:
        """Apply 12-dim joint-offset actions at 50 Hz; returns rewards and done flags.

        Finished envs are not auto-reset; call reset_envs on the done indices.
        """
        actions = np.asarray(actions, dtype=np.float64)
        rewards = np.empty((self.num_envs, NUM_ROWS))
        groups = np.empty((self.num_envs, 5))
        reasons = np.zeros(self.num_envs, dtype=np.intp)

        if self._pool is None or self.num_envs < 2 * self.num_threads:
            self._step_rows(slice(0, self.num_envs), actions, rewards, groups, reasons)
        else:
            bounds = np.linspace(0, self.num_envs, self.num_threads + 1).astype(int)
            futures = [
                self._pool.submit(self._step_rows, slice(a, b), actions, rewards, groups, reasons)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a
            ]
            for f in futures:
                f.result()

        self.step_count += 1
        timeout = self.step_count >= self.episode_len_max
        done = (reasons != REASON_NONE) | timeout
        reasons[(reasons == REASON_NONE) & timeout] = REASON_TIMEOUT

        period = self.commands.resample_steps
        if period > 0:
            due = np.nonzero(~done & (self.step_count % period == 0))[0]
            for i in due:
                rng = self.rngs[i]
                self.cmd_vel[i, 0] = rng.uniform(*self.commands.lin_vel_x)
                self.cmd_vel[i, 1] = rng.uniform(*self.commands.lin_vel_y)
                self.cmd_vel[i, 2] = rng.uniform(*self.commands.ang_vel_z)

        if self.curriculum and np.any(done):
            idx = np.nonzero(done)[0]
            succeeded = reasons[idx] == REASON_TIMEOUT
            self.difficulty[idx] = np.clip(self.difficulty[idx] + np.where(succeeded, 0.15, -0.15), 0.0, 1.0)
            self.terrain_level[idx] = np.rint(self.difficulty[idx] * (self.terrain_set.num_levels - 1)).astype(np.intp)

        breakdown = RewardBreakdown(
            rows=rewards, r_g=groups[:, 0], r_l=groups[:, 1], r_s=groups[:, 2],
            r_c=groups[:, 3], total=groups[:, 4],
        )
        return StepResult(rewards=breakdown, done=done, done_reason=reasons,
                          episode_len=self.step_count.copy())

    def _step_rows(self, sel: slice, actions, rewards_out, groups_out, reasons_out) -> None:
        st = self.state.rows(sel)
        rand = RandomizedDynamics(
            self.rand.friction_scale[sel], self.rand.mass_scale[sel],
            self.rand.kp_scale[sel], self.rand.kd_scale[sel], self.rand.obs_latency[sel],
        )
        levels = self.terrain_level[sel]

        def ground_fn(x, y):
            return self.terrain_set.heights(levels[:, None] if np.ndim(x) > 1 else levels, x, y)

        mu = self.terrain_set.friction_mu * rand.friction_scale
        q_target = self.robot.nominal_q + self.robot.action_scale * actions[sel]
        kp = (self.robot.kp * rand.kp_scale)[:, None]
        kd = (self.robot.kd * rand.kd_scale)[:, None]
        for _ in range(self.sim.decimation):
            torque = mdl.pd_torque(q_target, st.q, st.q_dot, self.robot, kp=kp, kd=kd)
            physics_substep(st, torque, ground_fn, mu, self.robot, self.sim, rand)

        self.phases[sel] = advance_phases(self.phases[sel], self.gait.frequency_hz, self.sim.policy_dt)
        self._compute_rewards(sel, st, levels, q_target, rewards_out, groups_out)
        self.q_target[sel] = q_target
        self.prev_q_dot[sel] = st.q_dot

        ground_base = self.terrain_set.heights(levels, st.base_pos[:, 0], st.base_pos[:, 1])
        reasons_out[sel] = check_termination(st, ground_base, self.robot, self.sim)

    def _compute_rewards(self, sel, st: RobotState, levels, q_target, rewards_out, groups_out) -> None:
        v_body = quat_rotate_inverse(st.base_quat, st.base_lin_vel)
        g_proj = obsmod.gravity_projection(st.base_quat)
        ground_base = self.terrain_set.heights(levels, st.base_pos[:, 0], st.base_pos[:, 1])
        h_b = st.base_pos[:, 2] - ground_base
        qdd = (st.q_dot - self.prev_q_dot[sel]) / self.sim.policy_dt
        dq_target = q_target - st.prev_q_target
        st.prev_q_target[:] = q_target
        n_col = self._count_collisions(st, levels)

        phases_eff = foot_phase(self.phases[sel], self.gait.phase_offsets)
        contact_cmd = desired_contact(phases_eff, self.gait.stance_ratio, self.gait.kappa)
        weight = self.robot.trunk_mass * self.sim.gravity
        forces_norm = st.contact_force / weight

        yaw = quat_yaw(st.base_quat)
        feet_rel = st.foot_pos - st.base_pos[:, None, :]
        p_actual = yaw_rotate_inverse(yaw[:, None], feet_rel[..., :2])
        des = desired_footholds(self.cmd_vel[sel], self.gait.frequency_hz, phases_eff,
                                self.gait.stance_ratio, self.geometry)

        bd = combine(
            task_reward(v_body[:, :2], self.cmd_vel[sel, :2], st.base_ang_vel[:, 2],
                        self.cmd_vel[sel, 2], self.weights),
            regularization_reward(st.last_torque, qdd, dq_target, h_b, self.gait.body_height,
                                  n_col, v_body[:, 2], st.base_ang_vel[:, 0],
                                  st.base_ang_vel[:, 1], self.weights),
            style_reward(g_proj, p_actual, des.p_desired, self.weights),
            contact_schedule_reward(contact_cmd, forces_norm, st.foot_vel, self.weights),
        )
        # diverged envs can carry non-finite physics; their episode ends this step anyway
        bad = st.diverged
        if np.any(bad):
            bd.rows[bad] = 0.0
            for arr in (bd.r_g, bd.r_l, bd.r_s, bd.r_c, bd.total):
                arr[bad] = 0.0
        rewards_out[sel] = bd.rows
        groups_out[sel, 0] = bd.r_g
        groups_out[sel, 1] = bd.r_l
        groups_out[sel, 2] = bd.r_s
        groups_out[sel, 3] = bd.r_c
        groups_out[sel, 4] = bd.total

    def _count_collisions(self, st: RobotState, levels) -> np.ndarray:
        """Non-foot contacts: trunk bottom plus each knee point below the terrain."""
        q = st.q.reshape(-1, 4, 3)
        lt = self.robot.thigh_len
        ux = lt * np.sin(q[..., 1])
        uz = -lt * np.cos(q[..., 1])
        c0, s0 = np.cos(q[..., 0]), np.sin(q[..., 0])
        knee_b = np.stack([ux, -s0 * uz, c0 * uz], axis=-1) + self.robot.hip_offsets
        knee_w = st.base_pos[:, None, :] + quat_rotate(st.base_quat[:, None, :], knee_b)
        ground_k = self.terrain_set.heights(levels[:, None], knee_w[..., 0], knee_w[..., 1])
        knee_hits = np.sum(knee_w[..., 2] < ground_k, axis=-1)
        ground_b = self.terrain_set.heights(levels, st.base_pos[:, 0], st.base_pos[:, 1])
        trunk_hit = (st.base_pos[:, 2] - ground_b) < self.robot.trunk_dims[2] / 2.0
        return knee_hits + trunk_hit.astype(np.intp)

    # ----------------------------------------------------------- observations

    def build_obs(self) -> ObsBundle:
        """Assemble actor and critic inputs for the current state; call once per step."""
        st = self.state
        raw = obsmod.raw_partial_obs(st.base_quat, st.base_ang_vel, st.q, st.q_dot)
        served = obsmod.build_partial_obs(raw, self.prev_raw_obs, self.rand.obs_latency,
                                          self.noise, self.rngs)
        self.prev_raw_obs[:] = raw
        self.history.push(served)

        phases_eff = foot_phase(self.phases, self.gait.phase_offsets)
        gait_vec = gait_descriptor(phases_eff, self.gait)
        yaw = quat_yaw(st.base_quat)
        heights = self._heightmap(st.base_pos, yaw)
        v_body = quat_rotate_inverse(st.base_quat, st.base_lin_vel)
        mu = self.terrain_set.friction_mu * self.rand.friction_scale
        priv = obsmod.build_privileged(v_body, st.contact_force, mu, self.rand.mass_scale,
                                       self.robot.trunk_mass * self.sim.gravity)
        critic_obs = obsmod.build_full_state(self.cmd_vel, gait_vec, heights, priv, raw)
        return ObsBundle(history=self.history.flat(), cmd=self.cmd_vel.copy(),
                         gait_vec=gait_vec, critic_obs=critic_obs, vel_target=v_body)

    def _heightmap(self, base_pos: np.ndarray, yaw: np.ndarray) -> np.ndarray:
        c, s = np.cos(yaw)[:, None], np.sin(yaw)[:, None]
        px = base_pos[:, 0:1] + c * HM_POINTS[:, 0] - s * HM_POINTS[:, 1]
        py = base_pos[:, 1:2] + s * HM_POINTS[:, 0] + c * HM_POINTS[:, 1]
        h = self.terrain_set.heights(self.terrain_level[:, None], px, py)
        return h - base_pos[:, 2:3]
