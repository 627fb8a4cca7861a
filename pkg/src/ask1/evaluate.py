"""Deterministic policy evaluation: command-profile rollouts with tracking/feet/reward traces."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, build_env
from .mathutil import quat_rotate_inverse
from .nets import NetworkBundle, policy_forward
from .plots import CsvFormatError, read_csv_columns, save_line_plot, write_csv
from .rewards import ROW_NAMES


@dataclass
class CommandProfile:
    """Piecewise-constant (t, vx, vy, wz) schedule; each row holds from its t onward."""

    times: np.ndarray
    commands: np.ndarray  # (k, 3)

    def at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t + 1e-12) - 1)
        return self.commands[max(i, 0)]


def load_profile(path) -> CommandProfile:
    header, cols = read_csv_columns(path)
    expected = ["t", "vx", "vy", "wz"]
    if [h.strip() for h in header] != expected:
        raise CsvFormatError(f"{path}: line 1: profile header must be {','.join(expected)}")
    times = np.asarray(cols[0])
    if np.any(np.diff(times) < 0):
        raise CsvFormatError(f"{path}: profile times must be non-decreasing")
    return CommandProfile(times=times, commands=np.stack(cols[1:], axis=-1))


def constant_profile(vx: float, vy: float = 0.0, wz: float = 0.0) -> CommandProfile:
    return CommandProfile(times=np.array([0.0]), commands=np.array([[vx, vy, wz]]))


@dataclass
class EvalTrace:
    t: np.ndarray
    cmd: np.ndarray          # (T, 3)
    vel: np.ndarray          # (T, 3) body-frame vx, vy, wz
    foot_height: np.ndarray  # (T, 4) clearance above local terrain
    foot_contact: np.ndarray  # (T, 4) 0/1
    reward_groups: np.ndarray  # (T, 5) r_g r_l r_s r_c total
    reward_rows: np.ndarray    # (T, 13)
    resets: int = 0


def run_eval(bundle: NetworkBundle, cfg: RunConfig, profile: CommandProfile,
             seconds: float = 10.0) -> EvalTrace:
    """Closed-loop rollout with the mean action (no sampling, no noise, no randomization)."""
    env = build_env(cfg, num_envs=1, deterministic_eval=True)
    steps = int(round(seconds / env.sim.policy_dt))
    trace = EvalTrace(
        t=np.arange(steps) * env.sim.policy_dt,
        cmd=np.zeros((steps, 3)),
        vel=np.zeros((steps, 3)),
        foot_height=np.zeros((steps, 4)),
        foot_contact=np.zeros((steps, 4)),
        reward_groups=np.zeros((steps, 5)),
        reward_rows=np.zeros((steps, len(ROW_NAMES))),
    )
    obs = env.build_obs()
    for k in range(steps):
        cmd = profile.at(float(trace.t[k]))
        env.set_commands(cmd[None, :])
        obs.cmd[:] = cmd
        _, _, dist = policy_forward(bundle, obs.history, obs.cmd, obs.gait_vec)
        result = env.step(dist.mean)

        st = env.state
        v_body = quat_rotate_inverse(st.base_quat, st.base_lin_vel)[0]
        trace.cmd[k] = cmd
        trace.vel[k] = (v_body[0], v_body[1], st.base_ang_vel[0, 2])
        ground = env.terrain_set.heights(
            np.zeros(4, dtype=np.intp), st.foot_pos[0, :, 0], st.foot_pos[0, :, 1])
        trace.foot_height[k] = st.foot_pos[0, :, 2] - ground
        trace.foot_contact[k] = st.in_contact[0].astype(float)
        trace.reward_groups[k] = (result.rewards.r_g[0], result.rewards.r_l[0],
                                  result.rewards.r_s[0], result.rewards.r_c[0],
                                  result.rewards.total[0])
        trace.reward_rows[k] = result.rewards.rows[0]
        if result.done[0]:
            env.reset_envs(np.array([0]))
            env.set_commands(cmd[None, :])
            trace.resets += 1
        obs = env.build_obs()
    return trace


TRACKING_HEADER = ["t", "cmd_vx", "cmd_vy", "cmd_wz", "vx", "vy", "wz"]
FEET_HEADER = ["t", "fr_height", "fl_height", "rr_height", "rl_height",
               "fr_contact", "fl_contact", "rr_contact", "rl_contact"]
REWARDS_HEADER = ["t", "r_g", "r_l", "r_s", "r_c", "r_t"] + [f"rew_{n}" for n in ROW_NAMES]


def write_eval_outputs(trace: EvalTrace, out_dir) -> dict[str, Path]:
    """Write tracking/feet/rewards CSVs and matching SVG figures; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    tracking_rows = [
        [t, *cmd, *vel] for t, cmd, vel in zip(trace.t, trace.cmd, trace.vel)
    ]
    paths["tracking_csv"] = out / "tracking.csv"
    write_csv(paths["tracking_csv"], TRACKING_HEADER, tracking_rows)
    save_line_plot(
        trace.t,
        {
            "cmd_vx": trace.cmd[:, 0], "vx": trace.vel[:, 0],
            "cmd_wz": trace.cmd[:, 2], "wz": trace.vel[:, 2],
        },
        out / "tracking.svg", xlabel="time [s]", ylabel="velocity", title="command tracking",
    )
    paths["tracking_svg"] = out / "tracking.svg"

    feet_rows = [
        [t, *heights, *contacts]
        for t, heights, contacts in zip(trace.t, trace.foot_height, trace.foot_contact)
    ]
    paths["feet_csv"] = out / "feet.csv"
    write_csv(paths["feet_csv"], FEET_HEADER, feet_rows)
    save_line_plot(
        trace.t,
        {name: trace.foot_height[:, i] for i, name in enumerate(("FR", "FL", "RR", "RL"))},
        out / "feet.svg", xlabel="time [s]", ylabel="foot clearance [m]", title="foot heights",
    )
    paths["feet_svg"] = out / "feet.svg"

    reward_rows = [
        [t, *groups, *rows]
        for t, groups, rows in zip(trace.t, trace.reward_groups, trace.reward_rows)
    ]
    paths["rewards_csv"] = out / "rewards.csv"
    write_csv(paths["rewards_csv"], REWARDS_HEADER, reward_rows)
    save_line_plot(
        trace.t,
        {name: trace.reward_groups[:, i] for i, name in enumerate(("r_g", "r_l", "r_s", "r_c", "r_t"))},
        out / "rewards.svg", xlabel="time [s]", ylabel="reward", title="per-step rewards",
    )
    paths["rewards_svg"] = out / "rewards.svg"
    return paths
