import numpy as np
import pytest

from ask1 import model as mdl
from ask1.obs import NoiseConfig
from ask1.sim import (
    DONE_REASONS,
    HEIGHTMAP_SIZE,
    QuadrupedEnv,
    RandomizationRanges,
    RandomizedDynamics,
    REASON_ORIENTATION,
    REASON_TRUNK,
    RobotState,
    SimParams,
    TerrainParams,
    check_termination,
    make_terrain,
    make_terrain_levels,
    physics_substep,
    sample_heightmap,
)
from ask1.mathutil import rpy_to_quat

ROBOT = mdl.make_robot("ask1")
TP = TerrainParams()


def make_env(num_envs=2, terrain="flat", seed=3, deterministic=True, **kwargs):
    terrains = make_terrain_levels(terrain, TP, 0, 1.0, kwargs.pop("levels", 1))
    defaults = dict(
        robot=ROBOT,
        num_envs=num_envs,
        terrains=terrains,
        seed=seed,
        curriculum=False,
    )
    if deterministic:
        defaults["randomization"] = RandomizationRanges(enabled=False)
        defaults["noise"] = NoiseConfig(enabled=False)
    defaults.update(kwargs)
    return QuadrupedEnv(**defaults)


# ------------------------------------------------------------------- terrain

def test_flat_terrain_all_zero():
    t = make_terrain("flat", TP, 0)
    assert np.all(t.grid == 0.0)


def test_stairs_adjacent_treads_differ_by_rise():
    t = make_terrain("stairs", TP, 0)
    x0 = TP.stair_start + TP.stair_run / 2
    for k in range(5):
        h0 = t.heights(np.array(x0 + k * TP.stair_run), np.array(0.0))
        h1 = t.heights(np.array(x0 + (k + 1) * TP.stair_run), np.array(0.0))
        assert h1 - h0 == pytest.approx(0.18, abs=1e-9)


def test_rough_terrain_deterministic_in_seed():
    a = make_terrain("rough", TP, 42)
    b = make_terrain("rough", TP, 42)
    c = make_terrain("rough", TP, 43)
    np.testing.assert_array_equal(a.grid, b.grid)
    assert np.any(a.grid != c.grid)
    assert np.all(np.isfinite(a.grid))


def test_terrain_validation():
    with pytest.raises(ValueError):
        make_terrain("flat", TerrainParams(resolution=0.0), 0)
    with pytest.raises(ValueError):
        make_terrain("stairs", TerrainParams(stair_rise=0.25), 0)
    with pytest.raises(ValueError):
        make_terrain("mesa", TP, 0)


def test_terrain_levels_scale_difficulty():
    fields = make_terrain_levels("stairs", TP, 0, 1.0, 6)
    assert len(fields) == 6
    rises = [f.heights(np.array(TP.stair_start + 0.15), np.array(0.0)) for f in fields]
    assert all(r1 > r0 for r0, r1 in zip(rises, rises[1:]))


# ----------------------------------------------------------------- heightmap

def test_heightmap_contract():
    t = make_terrain("flat", TP, 0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        pos = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.2, 0.8)])
        h = sample_heightmap(t, pos, rng.uniform(-np.pi, np.pi))
        assert h.shape == (HEIGHTMAP_SIZE,) and HEIGHTMAP_SIZE == 187
        np.testing.assert_allclose(h, -pos[2], atol=1e-12)  # flat constancy


def test_heightmap_yaw_invariant_on_flat():
    t = make_terrain("flat", TP, 0)
    pos = np.array([0.5, -0.2, 0.43])
    a = sample_heightmap(t, pos, 0.0)
    b = sample_heightmap(t, pos, np.pi / 2)
    np.testing.assert_array_equal(a, b)


def test_heightmap_sees_stairs():
    t = make_terrain("stairs", TP, 0)
    h = sample_heightmap(t, np.array([TP.stair_start, 0.0, 0.4]), 0.0)
    assert h.max() > h.min()  # forward samples see risers


# ------------------------------------------------------------------- physics

def airborne_state(n=1, z=100.0):
    st = RobotState.zeros(n)
    st.base_pos[:, 2] = z
    st.q[:] = ROBOT.nominal_q
    return st


def far_ground(x, y):
    return np.full(np.shape(x), -1000.0)


def test_free_fall_matches_analytic():
    st = airborne_state()
    sp = SimParams()
    rand = RandomizedDynamics.identity(1)
    z0 = st.base_pos[0, 2]
    for _ in range(200):  # 1 s
        physics_substep(st, np.zeros((1, 12)), far_ground, np.ones(1), ROBOT, sp, rand)
    assert abs((z0 - st.base_pos[0, 2]) - 0.5 * 9.81) < 1e-3
    assert np.all(st.base_lin_vel[0, :2] == 0.0)


def test_ballistic_energy_drift_below_one_percent():
    st = airborne_state()
    st.base_lin_vel[0] = (1.0, 0.5, 2.0)
    st.base_ang_vel[0] = (0.5, -0.3, 0.8)
    sp = SimParams()
    rand = RandomizedDynamics.identity(1)
    inertia = ROBOT.trunk_inertia

    def energy():
        ke = 0.5 * ROBOT.trunk_mass * np.sum(st.base_lin_vel[0] ** 2)
        rot = 0.5 * np.sum(inertia * st.base_ang_vel[0] ** 2)
        pe = ROBOT.trunk_mass * sp.gravity * st.base_pos[0, 2]
        return ke + rot + pe

    e0 = energy()
    for _ in range(200):
        physics_substep(st, np.zeros((1, 12)), far_ground, np.ones(1), ROBOT, sp, rand)
    assert abs(energy() - e0) / abs(e0) < 0.01


def test_zero_gravity_equilibrium_is_fixed_point():
    st = airborne_state()
    sp = SimParams(gravity=0.0)
    rand = RandomizedDynamics.identity(1)
    before = {k: getattr(st, k).copy() for k in ("base_pos", "base_quat", "base_lin_vel", "q")}
    for _ in range(50):
        physics_substep(st, np.zeros((1, 12)), far_ground, np.ones(1), ROBOT, sp, rand)
    for k, v in before.items():
        np.testing.assert_array_equal(getattr(st, k), v)


def test_static_contact_supports_weight():
    env = make_env(num_envs=1)
    env.set_commands(np.zeros((1, 3)))
    for _ in range(100):  # settle
        env.step(np.zeros((1, 12)))
    pos0 = env.state.base_pos[0].copy()
    fz_total = []
    for _ in range(50):  # 1 s
        env.step(np.zeros((1, 12)))
        fz_total.append(env.state.contact_force[0, :, 2].sum())
    drift = np.linalg.norm(env.state.base_pos[0] - pos0)
    assert drift < 1e-3
    weight = ROBOT.trunk_mass * 9.81
    assert np.mean(fz_total) == pytest.approx(weight, rel=0.02)


def test_contact_force_constraints_under_flail():
    env = make_env(num_envs=4)
    rng = np.random.default_rng(1)
    mu = env.terrain_set.friction_mu * env.rand.friction_scale
    for _ in range(100):
        env.step(rng.normal(0, 1.0, (4, 12)))
        fz = env.state.contact_force[..., 2]
        ft = np.linalg.norm(env.state.contact_force[..., :2], axis=-1)
        assert np.all(fz >= 0.0)
        assert np.all(ft <= mu[:, None] * fz + 1e-6)
        if env.step_count[0] >= env.episode_len_max:
            break


def test_divergence_flagged():
    env = make_env(num_envs=1)
    env.state.base_lin_vel[0] = (100.0, 0.0, 0.0)
    res = env.step(np.zeros((1, 12)))
    assert res.done[0]
    assert DONE_REASONS[res.done_reason[0]] == "diverged"


# --------------------------------------------------------------- termination

def test_termination_unit_cases():
    sp = SimParams()
    st = RobotState.zeros(3)
    st.base_pos[:, 2] = 0.5
    st.base_quat[1] = rpy_to_quat(np.pi, 0.0, 0.0)  # rolled over
    st.base_pos[2, 2] = 0.05                        # trunk at the ground
    reasons = check_termination(st, np.zeros(3), ROBOT, sp)
    assert reasons[0] == 0
    assert reasons[1] == REASON_ORIENTATION
    assert reasons[2] == REASON_TRUNK


def test_standing_full_episode_times_out():
    env = make_env(num_envs=1)
    env.set_commands(np.zeros((1, 3)))
    done = False
    for k in range(env.episode_len_max):
        res = env.step(np.zeros((1, 12)))
        if res.done[0]:
            done = True
            break
    assert done and k == env.episode_len_max - 1
    assert DONE_REASONS[res.done_reason[0]] == "timeout"
    assert res.episode_len[0] == 1000  # 20 s at 50 Hz


def test_trunk_forced_into_terrain_terminates():
    env = make_env(num_envs=1)
    env.state.base_pos[0, 2] = 0.05
    res = env.step(np.zeros((1, 12)))
    assert res.done[0]
    assert DONE_REASONS[res.done_reason[0]] == "trunk_contact"


def test_policy_period_is_exact():
    sp = SimParams()
    assert sp.decimation == 4
    assert sp.policy_dt == 0.02
    assert sp.episode_len_max == 1000


# -------------------------------------------------------------------- resets

def test_reset_deterministic_in_seed():
    env = make_env(num_envs=3, deterministic=False)
    env.reset_envs(np.arange(3), seed_override=123)
    snap = {k: getattr(env.state, k).copy() for k in ("base_pos", "base_quat", "q")}
    cmd = env.cmd_vel.copy()
    rand = env.rand.friction_scale.copy()
    env.reset_envs(np.arange(3), seed_override=123)
    for k, v in snap.items():
        np.testing.assert_array_equal(getattr(env.state, k), v)
    np.testing.assert_array_equal(env.cmd_vel, cmd)
    np.testing.assert_array_equal(env.rand.friction_scale, rand)


def test_reset_collapsed_ranges_are_points():
    rr = RandomizationRanges(friction_scale=(0.7, 0.7), mass_scale=(1.1, 1.1),
                             kp_scale=(1.0, 1.0), kd_scale=(1.0, 1.0), latency_steps=(1, 1))
    env = make_env(num_envs=4, randomization=rr)
    np.testing.assert_array_equal(env.rand.friction_scale, np.full(4, 0.7))
    np.testing.assert_array_equal(env.rand.mass_scale, np.full(4, 1.1))
    np.testing.assert_array_equal(env.rand.obs_latency, np.ones(4, dtype=np.intp))


def test_reset_default_ranges_membership():
    env = make_env(num_envs=100, deterministic=False)
    for _ in range(100):  # 10^4 draws in total
        env.reset_envs(np.arange(100))
        assert np.all((env.rand.friction_scale >= 0.5) & (env.rand.friction_scale <= 1.25))
        assert np.all((env.rand.mass_scale >= 0.9) & (env.rand.mass_scale <= 1.2))
        assert np.all((env.rand.kp_scale >= 0.9) & (env.rand.kp_scale <= 1.1))
        assert np.all(np.isin(env.rand.obs_latency, [0, 1]))


def test_reset_zeroes_phases_and_clock():
    env = make_env(num_envs=2)
    env.step(np.zeros((2, 12)))
    env.step(np.zeros((2, 12)))
    env.reset_envs(np.array([0]))
    assert np.all(env.phases[0] == 0.0) and env.step_count[0] == 0
    assert env.step_count[1] == 2


def test_foot_positions_consistent_with_fk():
    env = make_env(num_envs=2)
    rng = np.random.default_rng(2)
    from ask1.mathutil import quat_rotate
    for _ in range(10):
        env.step(rng.normal(0, 0.5, (2, 12)))
        feet_b = mdl.all_feet_fk(env.state.q, ROBOT)
        expected = env.state.base_pos[:, None, :] + quat_rotate(env.state.base_quat[:, None, :], feet_b)
        np.testing.assert_allclose(env.state.foot_pos, expected, atol=1e-12)


# -------------------------------------------------------- batching / threads

def assert_env_states_equal(a: QuadrupedEnv, rows_a, b: QuadrupedEnv, rows_b):
    for k in ("base_pos", "base_quat", "base_lin_vel", "base_ang_vel", "q", "q_dot",
              "foot_pos", "contact_force", "contact_anchor"):
        np.testing.assert_array_equal(getattr(a.state, k)[rows_a], getattr(b.state, k)[rows_b],
                                      err_msg=k)
    np.testing.assert_array_equal(a.phases[rows_a], b.phases[rows_b])
    np.testing.assert_array_equal(a.cmd_vel[rows_a], b.cmd_vel[rows_b])


def test_vectorization_equivalence():
    # stepping a batch is bitwise identical to stepping each env alone
    n = 4
    batch = make_env(num_envs=n, seed=11, deterministic=False)
    singles = [make_env(num_envs=1, seed=11, deterministic=False, env_index_offset=i)
               for i in range(n)]
    rng = np.random.default_rng(3)
    for step in range(30):
        actions = rng.normal(0, 0.8, (n, 12))
        res_b = batch.step(actions)
        obs_b = batch.build_obs()
        for i, env in enumerate(singles):
            res_i = env.step(actions[i:i + 1])
            obs_i = env.build_obs()
            assert_env_states_equal(batch, i, env, 0)
            np.testing.assert_array_equal(res_b.rewards.total[i], res_i.rewards.total[0])
            assert res_b.done[i] == res_i.done[0]
            np.testing.assert_array_equal(obs_b.history[i], obs_i.history[0])
            np.testing.assert_array_equal(obs_b.critic_obs[i], obs_i.critic_obs[0])
        if np.any(res_b.done):
            idx = np.nonzero(res_b.done)[0]
            batch.reset_envs(idx)
            for i in idx:
                singles[i].reset_envs(np.array([0]))


def test_thread_count_does_not_change_results():
    one = make_env(num_envs=8, seed=5, deterministic=False, num_threads=1)
    four = make_env(num_envs=8, seed=5, deterministic=False, num_threads=4)
    rng = np.random.default_rng(4)
    for _ in range(20):
        actions = rng.normal(0, 0.8, (8, 12))
        r1 = one.step(actions)
        r4 = four.step(actions)
        np.testing.assert_array_equal(r1.rewards.rows, r4.rewards.rows)
        np.testing.assert_array_equal(r1.done, r4.done)
        assert_env_states_equal(one, slice(None), four, slice(None))


# ---------------------------------------------------------------- curriculum

def test_curriculum_moves_levels():
    env = make_env(num_envs=1, terrain="stairs", levels=5, curriculum=True)
    env.difficulty[0] = 0.5
    env.step_count[0] = env.episode_len_max - 1
    res = env.step(np.zeros((1, 12)))  # survives to timeout while standing
    assert res.done[0]
    assert env.difficulty[0] > 0.5

    env.reset_envs(np.array([0]))
    d0 = env.difficulty[0]
    env.state.base_pos[0, 2] = 0.05  # force a fall
    res = env.step(np.zeros((1, 12)))
    assert res.done[0] and env.difficulty[0] < d0


def test_reward_groups_match_direct_identity():
    env = make_env(num_envs=2)
    env.set_commands(np.zeros((2, 3)))
    res = env.step(np.zeros((2, 12)))
    bd = res.rewards
    np.testing.assert_array_equal(bd.total, ((bd.r_g + bd.r_l) + bd.r_s) + bd.r_c)
    assert np.all(bd.r_g > 0) and np.all(bd.r_g <= 1.5)
    assert np.all(bd.r_l <= 0) and np.all(bd.r_s <= 0)
    assert np.all((bd.r_c >= 0) & (bd.r_c <= 4.0))
