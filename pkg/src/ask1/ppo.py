"""Rollout collection, generalized advantage estimation, the clipped surrogate objective,
the critic and velocity-estimator losses, and the optimization loop."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nets import ActionDistribution, NetworkBundle, critic_forward, mlp_backward, mlp_forward, policy_forward
from .rewards import NUM_ROWS
from .sim import QuadrupedEnv, ObsBundle


class TrainingFailure(RuntimeError):
    """Raised when updates keep producing non-finite losses."""


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    lr: float = 1e-3
    adaptive_lr: bool = True
    desired_kl: float = 0.01
    lr_bounds: tuple[float, float] = (1e-5, 1e-2)
    # the estimator is supervised, so its rate is fixed rather than KL-scheduled
    estimator_lr: float = 1e-3
    value_coef: float = 1.0
    entropy_coef: float = 0.01
    estimator_coef: float = 1.0
    horizon: int = 24
    grad_norm_clip: float = 1.0
    normalize_advantages: bool = True
    # during updates the actor consumes the rollout-time velocity estimates as
    # data; otherwise live estimator outputs feed the surrogate and every
    # estimator update inflates the measured policy KL
    vhat_from_rollout: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


@dataclass
class RolloutBatch:
    """Per (env, step) trajectories; every array has leading shape (num_envs, horizon)."""

    history: np.ndarray       # (N, T, 150)
    cmd: np.ndarray           # (N, T, 3)
    gait: np.ndarray          # (N, T, 11)
    critic_obs: np.ndarray    # (N, T, 248)
    actions: np.ndarray       # (N, T, 12)
    means: np.ndarray         # (N, T, 12) behavior means
    log_probs: np.ndarray     # (N, T)
    rewards: np.ndarray       # (N, T)
    values: np.ndarray        # (N, T)
    dones: np.ndarray         # (N, T) bool
    vel_targets: np.ndarray   # (N, T, 3) true base linear velocity, body frame
    vel_estimates: np.ndarray  # (N, T, 3) estimator outputs at collection time
    bootstrap: np.ndarray     # (N,) value of the post-horizon state
    behavior_std: np.ndarray  # (12,) sigma snapshot at collection time


@dataclass
class RolloutStats:
    reward_rows: np.ndarray          # (13,) per-row means over the batch
    mean_total: float
    episode_lengths: list[int] = field(default_factory=list)
    steps: int = 0


def collect_rollout(
    env: QuadrupedEnv,
    bundle: NetworkBundle,
    cfg: PpoConfig,
    obs: ObsBundle,
    rng: np.random.Generator,
) -> tuple[RolloutBatch, RolloutStats, ObsBundle]:
    """Roll the policy for cfg.horizon steps across all envs, auto-resetting finished ones."""
    n, t = env.num_envs, cfg.horizon
    batch = RolloutBatch(
        history=np.empty((n, t, obs.history.shape[1])),
        cmd=np.empty((n, t, 3)),
        gait=np.empty((n, t, obs.gait_vec.shape[1])),
        critic_obs=np.empty((n, t, obs.critic_obs.shape[1])),
        actions=np.empty((n, t, 12)),
        means=np.empty((n, t, 12)),
        log_probs=np.empty((n, t)),
        rewards=np.empty((n, t)),
        values=np.empty((n, t)),
        dones=np.zeros((n, t), dtype=bool),
        vel_targets=np.empty((n, t, 3)),
        vel_estimates=np.empty((n, t, 3)),
        bootstrap=np.zeros(n),
        behavior_std=np.exp(bundle.log_std).copy(),
    )
    row_sums = np.zeros(NUM_ROWS)
    total_sum = 0.0
    ep_lens: list[int] = []

    for k in range(t):
        _, v_hat, dist = policy_forward(bundle, obs.history, obs.cmd, obs.gait_vec)
        actions = dist.sample(rng)
        values = critic_forward(bundle, obs.critic_obs)

        batch.history[:, k] = obs.history
        batch.cmd[:, k] = obs.cmd
        batch.gait[:, k] = obs.gait_vec
        batch.critic_obs[:, k] = obs.critic_obs
        batch.actions[:, k] = actions
        batch.means[:, k] = dist.mean
        batch.log_probs[:, k] = dist.log_prob(actions)
        batch.values[:, k] = values
        batch.vel_targets[:, k] = obs.vel_target
        batch.vel_estimates[:, k] = v_hat

        result = env.step(actions)
        batch.rewards[:, k] = result.rewards.total
        batch.dones[:, k] = result.done
        row_sums += result.rewards.rows.sum(axis=0)
        total_sum += result.rewards.total.sum()
        if np.any(result.done):
            done_idx = np.nonzero(result.done)[0]
            ep_lens.extend(int(result.episode_len[i]) for i in done_idx)
            env.reset_envs(done_idx)
        obs = env.build_obs()

    batch.bootstrap = critic_forward(bundle, obs.critic_obs)
    stats = RolloutStats(
        reward_rows=row_sums / (n * t),
        mean_total=float(total_sum / (n * t)),
        episode_lengths=ep_lens,
        steps=n * t,
    )
    return batch, stats, obs


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward TD(lambda) advantage recursion with done masking; returns raw advantages.

    Shapes are (N, T); bootstrap is the value of the state after the last step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    n, t = rewards.shape
    adv = np.zeros((n, t))
    gae = np.zeros(n)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    for k in range(t - 1, -1, -1):
        delta = rewards[:, k] + gamma * next_value * not_done[:, k] - values[:, k]
        gae = delta + gamma * lam * not_done[:, k] * gae
        adv[:, k] = gae
        next_value = values[:, k]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class AdamState:
    """Plain Adam over a flat list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: list[np.ndarray]) -> "AdamState":
        return AdamState(m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        scale = lr / b1c
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v / b2c)
            denom += self.eps
            p -= scale * m / denom


@dataclass
class LossReport:
    policy: float
    value: float
    estimator: float
    entropy: float
    kl: float
    total: float


def ppo_losses(
    bundle: NetworkBundle, cfg: PpoConfig, mb: dict[str, np.ndarray]
) -> tuple[LossReport, list[np.ndarray]]:
    """Losses and exact gradients for one minibatch.

    The velocity estimator is trained by its supervised loss only; the policy
    gradient does not flow into it. Gradients are returned in
    bundle.param_list() order.
    """
    m = mb["actions"].shape[0]
    hist, cmd, gait = mb["history"], mb["cmd"], mb["gait"]

    h, tape_e = mlp_forward(bundle.history_encoder, hist)
    v_hat, tape_s = mlp_forward(bundle.state_estimator, hist)
    v_in = mb["vel_estimates"] if cfg.vhat_from_rollout else v_hat
    actor_in = np.concatenate([h, v_in, cmd, gait], axis=-1)
    mean, tape_a = mlp_forward(bundle.actor, actor_in)
    std = np.exp(bundle.log_std)
    dist = ActionDistribution(mean=mean, std=std)

    log_probs = dist.log_prob(mb["actions"])
    ratio = np.exp(log_probs - mb["old_log_probs"])
    adv = mb["advantages"]
    surr = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    policy_loss = -np.mean(np.minimum(surr, clipped))

    v_pred_all, tape_c = mlp_forward(bundle.critic, mb["critic_obs"])
    v_pred = v_pred_all[:, 0]
    value_err = v_pred - mb["returns"]
    value_loss = np.mean(value_err ** 2)

    est_err = v_hat - mb["vel_targets"]
    estimator_loss = np.mean(np.sum(est_err ** 2, axis=-1))

    entropy = float(np.mean(dist.entropy()))

    total = (policy_loss + cfg.value_coef * value_loss
             - cfg.entropy_coef * entropy + cfg.estimator_coef * estimator_loss)

    # analytic KL(old || new) of diagonal Gaussians, for the adaptive lr schedule
    old_std = mb["behavior_std"]
    kl = np.mean(np.sum(
        np.log(std / old_std)
        + (old_std ** 2 + (mb["old_means"] - mean) ** 2) / (2.0 * std ** 2) - 0.5,
        axis=-1,
    ))

    # backward pass
    active = (surr <= clipped).astype(np.float64)
    dlogp = -(active * ratio * adv) / m
    z = (mb["actions"] - mean) / std
    dmean = dlogp[:, None] * z / std
    dlog_std_policy = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    dlog_std = dlog_std_policy - cfg.entropy_coef * np.ones_like(bundle.log_std)

    grads_actor, d_actor_in = mlp_backward(bundle.actor, tape_a, dmean)
    dh = d_actor_in[:, : h.shape[1]]
    grads_enc, _ = mlp_backward(bundle.history_encoder, tape_e, dh)
    dv_hat = cfg.estimator_coef * 2.0 * est_err / m
    grads_est, _ = mlp_backward(bundle.state_estimator, tape_s, dv_hat)
    dv = cfg.value_coef * 2.0 * value_err[:, None] / m
    grads_critic, _ = mlp_backward(bundle.critic, tape_c, dv)

    grads = grads_enc + grads_est + grads_actor + grads_critic + [dlog_std]
    report = LossReport(policy=float(policy_loss), value=float(value_loss),
                        estimator=float(estimator_loss), entropy=entropy,
                        kl=float(kl), total=float(total))
    return report, grads


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


@dataclass
class UpdateStats:
    policy: float = 0.0
    value: float = 0.0
    estimator: float = 0.0
    entropy: float = 0.0
    kl: float = 0.0
    lr: float = 0.0
    aborted: bool = False


def split_params(bundle: NetworkBundle) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(policy-side params, estimator params); indices match ppo_losses grads order."""
    params = bundle.param_list()
    return params[:8] + params[16:], params[8:16]


def ppo_update(
    bundle: NetworkBundle,
    opt: AdamState,
    opt_est: AdamState,
    batch: RolloutBatch,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    shuffle_rng: np.random.Generator,
    lr: float,
) -> tuple[UpdateStats, float]:
    """Epochs x minibatch updates over a rollout; restores parameters if losses go non-finite."""
    n, t = batch.rewards.shape
    total = n * t
    flat = {
        "history": batch.history.reshape(total, -1),
        "cmd": batch.cmd.reshape(total, -1),
        "gait": batch.gait.reshape(total, -1),
        "critic_obs": batch.critic_obs.reshape(total, -1),
        "actions": batch.actions.reshape(total, -1),
        "old_means": batch.means.reshape(total, -1),
        "old_log_probs": batch.log_probs.reshape(total),
        "advantages": advantages.reshape(total),
        "returns": returns.reshape(total),
        "vel_targets": batch.vel_targets.reshape(total, -1),
        "vel_estimates": batch.vel_estimates.reshape(total, -1),
        "behavior_std": batch.behavior_std,
    }
    params = bundle.param_list()
    policy_params, est_params = split_params(bundle)
    snapshot = [p.copy() for p in params]
    stats = UpdateStats(lr=lr)
    count = 0
    mb_size = total // cfg.minibatches

    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(total)
        for b in range(cfg.minibatches):
            idx = perm[b * mb_size:(b + 1) * mb_size]
            mb = {k: (v[idx] if k != "behavior_std" else v) for k, v in flat.items()}
            report, grads = ppo_losses(bundle, cfg, mb)
            finite = np.isfinite(report.total) and all(np.all(np.isfinite(g)) for g in grads)
            if not finite:
                for p, s in zip(params, snapshot):
                    p[:] = s
                stats.aborted = True
                return stats, lr
            if cfg.adaptive_lr and cfg.desired_kl > 0:
                if report.kl > 2.0 * cfg.desired_kl:
                    lr = max(cfg.lr_bounds[0], lr / 1.5)
                elif 0.0 < report.kl < cfg.desired_kl / 2.0:
                    lr = min(cfg.lr_bounds[1], lr * 1.5)
            policy_grads = grads[:8] + grads[16:]
            est_grads = grads[8:16]
            clip_grad_norm(policy_grads, cfg.grad_norm_clip)
            clip_grad_norm(est_grads, cfg.grad_norm_clip)
            opt.step(policy_params, policy_grads, lr)
            opt_est.step(est_params, est_grads, cfg.estimator_lr)
            stats.policy += report.policy
            stats.value += report.value
            stats.estimator += report.estimator
            stats.entropy += report.entropy
            stats.kl += report.kl
            count += 1

    for name in ("policy", "value", "estimator", "entropy", "kl"):
        setattr(stats, name, getattr(stats, name) / max(count, 1))
    stats.lr = lr
    return stats, lr


METRICS_COLUMNS = (
    ["iteration", "steps", "mean_r_t"]
    + [f"rew_{name}" for name in (
        "lin_track", "ang_track", "torque", "joint_acc", "action_rate", "height",
        "collision", "vz", "omega_xy", "gravity_xy", "foothold", "swing_force", "stance_vel")]
    + ["loss_policy", "loss_value", "loss_estimator", "entropy", "kl", "lr", "mean_episode_len"]
)


def train(
    env: QuadrupedEnv,
    bundle: NetworkBundle,
    cfg: PpoConfig,
    iterations: int,
    seed: int,
    on_metrics=None,
    on_checkpoint=None,
    checkpoint_every: int = 0,
) -> list[dict]:
    """Full training loop; returns one metrics row per iteration.

    Raises TrainingFailure after three consecutive aborted (non-finite) updates.
    """
    action_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 101))))
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 102))))

    opt = AdamState.for_params(split_params(bundle)[0])
    opt_est = AdamState.for_params(split_params(bundle)[1])
    lr = cfg.lr
    rows: list[dict] = []
    recent_lens: deque[int] = deque(maxlen=100)
    steps_total = 0
    consecutive_failures = 0

    obs = env.build_obs()
    for it in range(iterations):
        batch, roll, obs = collect_rollout(env, bundle, cfg, obs, action_rng)
        adv, returns = compute_gae(batch.rewards, batch.values, batch.dones,
                                   batch.bootstrap, cfg.gamma, cfg.lam)
        if cfg.normalize_advantages:
            adv = normalize_advantages(adv)
        stats, lr = ppo_update(bundle, opt, opt_est, batch, adv, returns, cfg, shuffle_rng, lr)
        if stats.aborted:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                raise TrainingFailure(
                    f"non-finite losses in 3 consecutive updates (iteration {it})")
        else:
            consecutive_failures = 0

        steps_total += roll.steps
        recent_lens.extend(roll.episode_lengths)
        mean_len = float(np.mean(recent_lens)) if recent_lens else 0.0
        row = {
            "iteration": it,
            "steps": steps_total,
            "mean_r_t": roll.mean_total,
            **{f"rew_{name}": float(v) for name, v in zip(
                ("lin_track", "ang_track", "torque", "joint_acc", "action_rate", "height",
                 "collision", "vz", "omega_xy", "gravity_xy", "foothold", "swing_force",
                 "stance_vel"), roll.reward_rows)},
            "loss_policy": stats.policy,
            "loss_value": stats.value,
            "loss_estimator": stats.estimator,
            "entropy": stats.entropy,
            "kl": stats.kl,
            "lr": lr,
            "mean_episode_len": mean_len,
        }
        rows.append(row)
        if on_metrics is not None:
            on_metrics(row)
        if on_checkpoint is not None and checkpoint_every > 0 and (it + 1) % checkpoint_every == 0:
            on_checkpoint(it, bundle)
    if on_checkpoint is not None:
        on_checkpoint(iterations - 1, bundle)
    return rows
