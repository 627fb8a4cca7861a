import numpy as np
import pytest

from ask1 import config as C
from ask1 import ppo
from ask1.nets import init_bundle, policy_forward
from ask1.ppo import (
    AdamState,
    PpoConfig,
    TrainingFailure,
    clip_grad_norm,
    collect_rollout,
    compute_gae,
    normalize_advantages,
    ppo_losses,
    ppo_update,
    train,
)


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) discounted-sum oracle for the advantage recursion."""
    n, t = rewards.shape
    adv = np.zeros((n, t))
    for e in range(n):
        v_next = np.append(values[e, 1:], bootstrap[e])
        delta = rewards[e] + gamma * v_next * (1.0 - dones[e]) - values[e]
        for k in range(t):
            acc = 0.0
            w = 1.0
            for j in range(k, t):
                acc += w * delta[j]
                if dones[e, j]:
                    break
                w *= gamma * lam
            adv[e, k] = acc
    return adv, adv + values


def small_env(num_envs=4, seed=7):
    cfg = C.RunConfig()
    cfg.run.num_envs = num_envs
    cfg.run.seed = seed
    return C.build_env(cfg)


def test_gae_terminal_single_step():
    adv, ret = compute_gae(np.array([[1.0]]), np.array([[0.0]]), np.array([[True]]),
                           np.array([5.0]), 0.99, 0.95)
    assert adv[0, 0] == 1.0 and ret[0, 0] == 1.0


def test_gae_zero_gamma_is_td_error():
    rng = np.random.default_rng(0)
    r = rng.normal(0, 1, (3, 8))
    v = rng.normal(0, 1, (3, 8))
    adv, _ = compute_gae(r, v, np.zeros((3, 8), dtype=bool), rng.normal(0, 1, 3), 0.0, 0.95)
    np.testing.assert_allclose(adv, r - v, atol=1e-12)


def test_gae_frozen_example():
    # computed with the brute-force oracle: gamma 0.9, lam 0.95, r = [1, 1]
    r = np.array([[1.0, 1.0]])
    v = np.zeros((1, 2))
    adv, ret = compute_gae(r, v, np.zeros((1, 2), dtype=bool), np.zeros(1), 0.9, 0.95)
    oracle, _ = brute_force_gae(r, v, np.zeros((1, 2), dtype=bool), np.zeros(1), 0.9, 0.95)
    np.testing.assert_allclose(oracle[0], [1.855, 1.0], atol=1e-12)
    np.testing.assert_allclose(adv, oracle, atol=1e-12)


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):  # 200 batches x 5 envs = 1000 sequences
        t = int(rng.integers(1, 17))
        r = rng.normal(0, 2, (5, t))
        v = rng.normal(0, 2, (5, t))
        d = rng.random((5, t)) < 0.15
        boot = rng.normal(0, 2, 5)
        gamma = rng.uniform(0.9, 1.0)
        lam = rng.uniform(0.9, 1.0)
        adv, ret = compute_gae(r, v, d, boot, gamma, lam)
        o_adv, o_ret = brute_force_gae(r, v, d, boot, gamma, lam)
        np.testing.assert_allclose(adv, o_adv, atol=1e-10)
        np.testing.assert_allclose(ret, o_ret, atol=1e-10)


def test_advantage_normalization_affine_invariant():
    rng = np.random.default_rng(2)
    adv = rng.normal(3, 2, (8, 24))
    base = normalize_advantages(adv)
    assert abs(base.mean()) < 1e-12 and abs(base.std() - 1.0) < 1e-6
    for a, b in [(2.0, 0.0), (0.5, 3.0), (10.0, -7.0)]:
        np.testing.assert_allclose(normalize_advantages(a * adv + b), base, atol=1e-9)


def test_collect_rollout_shapes_and_determinism():
    cfg = PpoConfig(horizon=24)
    bundle = init_bundle(np.random.default_rng(3))

    def collect(seed):
        env = small_env(num_envs=4, seed=11)
        rng = np.random.default_rng(seed)
        obs = env.build_obs()
        return collect_rollout(env, bundle, cfg, obs, rng)

    batch1, stats1, _ = collect(9)
    assert batch1.rewards.shape == (4, 24)
    assert batch1.history.shape == (4, 24, 150)
    assert batch1.critic_obs.shape == (4, 24, 248)
    assert stats1.steps == 96
    batch2, stats2, _ = collect(9)
    np.testing.assert_array_equal(batch1.actions, batch2.actions)
    np.testing.assert_array_equal(batch1.rewards, batch2.rewards)
    np.testing.assert_array_equal(batch1.log_probs, batch2.log_probs)


def test_rollout_log_probs_recompute():
    from ask1.nets import ActionDistribution
    cfg = PpoConfig(horizon=8)
    bundle = init_bundle(np.random.default_rng(4))
    env = small_env(num_envs=3, seed=13)
    obs = env.build_obs()
    batch, _, _ = collect_rollout(env, bundle, cfg, obs, np.random.default_rng(10))
    dist = ActionDistribution(mean=batch.means, std=batch.behavior_std)
    recomputed = dist.log_prob(batch.actions)
    np.testing.assert_allclose(recomputed, batch.log_probs, atol=1e-12)


def make_minibatch(bundle, m=32, seed=5):
    rng = np.random.default_rng(seed)
    hist = 0.3 * rng.standard_normal((m, 150))
    cmd = 0.3 * rng.standard_normal((m, 3))
    gait = 0.3 * rng.standard_normal((m, 11))
    h, v_hat, dist = policy_forward(bundle, hist, cmd, gait)
    actions = dist.sample(rng)
    return {
        "history": hist, "cmd": cmd, "gait": gait,
        "critic_obs": 0.3 * rng.standard_normal((m, 248)),
        "actions": actions, "old_means": dist.mean.copy(),
        "old_log_probs": dist.log_prob(actions),
        "advantages": rng.standard_normal(m),
        "returns": rng.standard_normal(m),
        "vel_targets": rng.standard_normal((m, 3)),
        "vel_estimates": v_hat.copy(),
        "behavior_std": np.exp(bundle.log_std).copy(),
    }


def test_identity_policy_loss_is_zero():
    bundle = init_bundle(np.random.default_rng(6))
    mb = make_minibatch(bundle)
    mb["advantages"] = normalize_advantages(mb["advantages"])
    report, _ = ppo_losses(bundle, PpoConfig(), mb)
    # ratio = 1 everywhere, so the surrogate reduces to -mean(advantages) = 0
    assert report.policy == pytest.approx(0.0, abs=1e-12)
    assert report.kl == pytest.approx(0.0, abs=1e-12)


def test_clip_rule_single_sample():
    bundle = init_bundle(np.random.default_rng(7))
    mb = make_minibatch(bundle, m=1)
    mb["advantages"] = np.array([1.0])
    mb["old_log_probs"] = mb["old_log_probs"] - np.log(2.0)  # ratio = 2
    report, _ = ppo_losses(bundle, PpoConfig(clip_eps=0.2), mb)
    assert report.policy == pytest.approx(-1.2, abs=1e-12)


def test_estimator_loss_zero_when_exact():
    bundle = init_bundle(np.random.default_rng(8))
    mb = make_minibatch(bundle)
    _, v_hat, _ = policy_forward(bundle, mb["history"], mb["cmd"], mb["gait"])
    mb["vel_targets"] = v_hat.copy()
    report, _ = ppo_losses(bundle, PpoConfig(), mb)
    assert report.estimator == pytest.approx(0.0, abs=1e-12)


def test_clipped_objective_bound():
    rng = np.random.default_rng(9)
    eps = 0.2
    ratio = np.exp(rng.normal(0, 1, 10_000))
    adv = rng.normal(0, 2, 10_000)
    obj = np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)
    bound = np.maximum(np.abs(ratio * adv), (1 + eps) * np.abs(adv))
    assert np.all(np.abs(obj) <= bound + 1e-12)


def test_loss_gradients_match_finite_differences():
    bundle = init_bundle(np.random.default_rng(10))
    cfg = PpoConfig()
    mb = make_minibatch(bundle, m=16)
    mb["advantages"] = normalize_advantages(mb["advantages"])
    report, grads = ppo_losses(bundle, cfg, mb)
    params = bundle.param_list()
    rng = np.random.default_rng(11)
    h = 1e-6
    checked = 0
    for k in [0, 5, 8, 13, 16, 21, 24, 29, 32]:  # spread across the four nets + log_std
        p = params[k]
        for _ in range(3):
            idx = tuple(rng.integers(s) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            up, _ = ppo_losses(bundle, cfg, mb)
            p[idx] = old - h
            down, _ = ppo_losses(bundle, cfg, mb)
            p[idx] = old
            fd = (up.total - down.total) / (2 * h)
            g = grads[k][idx]
            assert g == pytest.approx(fd, abs=max(1e-4 * abs(fd), 1e-6)), f"param {k} idx {idx}"
            checked += 1
    assert checked == 27


def test_grad_clip():
    grads = [np.full(4, 3.0), np.full(2, -4.0)]
    norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(np.sqrt(4 * 9 + 2 * 16))
    total = np.sqrt(sum(np.sum(g * g) for g in grads))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_adam_converges_on_quadratic():
    target = np.array([1.0, -2.0, 3.0])
    p = [np.zeros(3)]
    opt = AdamState.for_params(p)
    for _ in range(2000):
        grad = [2.0 * (p[0] - target)]
        opt.step(p, grad, lr=0.01)
    np.testing.assert_allclose(p[0], target, atol=1e-3)


def test_zero_lr_leaves_losses_unchanged():
    bundle = init_bundle(np.random.default_rng(12))
    cfg = PpoConfig(lr=0.0, adaptive_lr=False)
    mb = make_minibatch(bundle)
    before, grads = ppo_losses(bundle, cfg, mb)
    opt = AdamState.for_params(bundle.param_list())
    opt.step(bundle.param_list(), grads, lr=0.0)
    after, _ = ppo_losses(bundle, cfg, mb)
    assert after.total == before.total


def test_update_aborts_on_nonfinite_and_restores_params():
    bundle = init_bundle(np.random.default_rng(13))
    cfg = PpoConfig(horizon=4, minibatches=2, epochs=1)
    env = small_env(num_envs=2, seed=17)
    obs = env.build_obs()
    batch, _, _ = collect_rollout(env, bundle, cfg, obs, np.random.default_rng(14))
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap,
                           cfg.gamma, cfg.lam)
    batch.log_probs[0, 0] = np.nan
    snapshot = [p.copy() for p in bundle.param_list()]
    opt = AdamState.for_params(ppo.split_params(bundle)[0])
    opt_est = AdamState.for_params(ppo.split_params(bundle)[1])
    stats, _ = ppo_update(bundle, opt, opt_est, batch, normalize_advantages(adv), ret, cfg,
                          np.random.default_rng(15), cfg.lr)
    assert stats.aborted
    for p, s in zip(bundle.param_list(), snapshot):
        np.testing.assert_array_equal(p, s)


def test_train_zero_iterations_returns_unchanged_bundle():
    bundle = init_bundle(np.random.default_rng(16))
    snapshot = [p.copy() for p in bundle.param_list()]
    env = small_env(num_envs=2)
    rows = train(env, bundle, PpoConfig(horizon=4), 0, seed=1)
    assert rows == []
    for p, s in zip(bundle.param_list(), snapshot):
        np.testing.assert_array_equal(p, s)


def test_train_raises_after_three_aborted_updates(monkeypatch):
    bundle = init_bundle(np.random.default_rng(17))
    env = small_env(num_envs=2)

    def always_abort(bundle, opt, opt_est, batch, adv, ret, cfg, rng, lr):
        return ppo.UpdateStats(aborted=True, lr=lr), lr

    monkeypatch.setattr(ppo, "ppo_update", always_abort)
    with pytest.raises(TrainingFailure):
        train(env, bundle, PpoConfig(horizon=4), 10, seed=1)


def test_estimator_loss_decreases_early():
    # the supervised velocity signal is strong: clear downward trend at the start
    cfg = C.RunConfig()
    cfg.run.num_envs = 32
    env = C.build_env(cfg)
    bundle = init_bundle(np.random.Generator(np.random.PCG64(np.random.SeedSequence((1, 100)))))
    rows = train(env, bundle, cfg.ppo, 12, seed=1)
    est = [r["loss_estimator"] for r in rows]
    assert np.mean(est[-3:]) < 0.5 * np.mean(est[:3])


def test_metrics_columns_frozen():
    assert ppo.METRICS_COLUMNS[0] == "iteration"
    assert ppo.METRICS_COLUMNS[-1] == "mean_episode_len"
    assert len(ppo.METRICS_COLUMNS) == 23
