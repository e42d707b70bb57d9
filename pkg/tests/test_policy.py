import math

import numpy as np
import pytest

from greenrl.policy import (Batch, PolicyConfig, PolicyParams, act, critic_loss_and_grad, critic_target,
                            evaluate_return, load_policy, mix_batches, norm_act, norm_obs, save_policy, update)
from greenrl.spaces import ACTION_SPACE, OBSERVATION_SPACE, within_bounds

from gradcheck import random_batch, random_states

TINY = PolicyConfig(hidden=(8, 8), dtype="float64")


def _mlp(net, x):
    """Plain re-implementation of a tanh MLP from its layer matrices."""
    h = x
    for k, (W, b) in enumerate(net.layers):
        h = h @ W + b
        if k < len(net.layers) - 1:
            h = np.tanh(h)
    return h


def test_act_bounds_and_determinism():
    policy = PolicyParams(TINY, seed=0)
    policy.actor.params += np.random.default_rng(0).normal(0, 1.0, policy.actor.parameter_count)
    s = random_states(np.random.default_rng(1), 2000)
    for mode in ("stochastic", "deterministic"):
        a = act(policy, s, mode, np.random.default_rng(2))
        assert np.all((a >= ACTION_SPACE.lower) & (a <= ACTION_SPACE.upper))
    one = act(policy, s[0], rng=np.random.default_rng(5))
    assert np.array_equal(one, act(policy, s[0], rng=np.random.default_rng(5)))
    assert within_bounds(one, ACTION_SPACE)
    with pytest.raises(ValueError):
        act(policy, s[0], "stochastic")


def test_modes_agree_at_log_std_floor():
    cfg = PolicyConfig(hidden=(8,), dtype="float64", log_std_bounds=(-30.0, -30.0))
    policy = PolicyParams(cfg, seed=1)
    s = random_states(np.random.default_rng(0), 5)
    det = act(policy, s, "deterministic")
    sto = act(policy, s, "stochastic", np.random.default_rng(0))
    assert np.allclose(det, sto, rtol=0, atol=1e-9 * ACTION_SPACE.span.max())


@pytest.mark.parametrize("rewards,gamma,expected", [((1, 1, 1), 0.0, 1.0), ((1, 1, 1), 1.0, 3.0),
                                                    ((2, 4, 8), 0.5, 6.0), ((), 0.9, 0.0)])
def test_evaluate_return_examples(rewards, gamma, expected):
    assert evaluate_return(rewards, gamma) == expected


def test_evaluate_return_linear_and_checked():
    rng = np.random.default_rng(0)
    r1, r2 = rng.normal(size=20), rng.normal(size=20)
    assert evaluate_return(2 * r1 + r2, 0.9) == pytest.approx(2 * evaluate_return(r1, 0.9) + evaluate_return(r2, 0.9))
    with pytest.raises(ValueError):
        evaluate_return([1.0], 1.5)


def test_zero_learning_rate_changes_nothing():
    policy = PolicyParams(TINY, seed=0)
    before = policy.flat().copy()
    info = update(policy, random_batch(np.random.default_rng(0), 8), np.random.default_rng(0), lr=0.0)
    assert info["skipped"]
    assert np.array_equal(policy.flat(), before)
    with pytest.raises(ValueError):
        update(policy, random_batch(np.random.default_rng(0), 8), np.random.default_rng(0), lr=-1.0)


def test_critic_target_by_hand():
    cfg = PolicyConfig(hidden=(4,), dtype="float64", gamma=0.5)
    policy = PolicyParams(cfg, seed=3)
    rng = np.random.default_rng(0)
    for t in policy.targets:
        t.params += rng.normal(0, 0.3, t.parameter_count)
    b = random_batch(rng, 1)
    b.done[:] = 0.0
    eps = rng.standard_normal((1, policy.action_dim))
    # actor head, tanh squash and log-density written out directly
    out = _mlp(policy.actor, norm_obs(b.s2))[0]
    mean, log_std = out[:52], np.clip(out[52:], -5.0, 0.5)
    u = mean + np.exp(log_std) * eps[0]
    y = np.tanh(u)
    logp = np.sum(-0.5 * eps[0] ** 2 - log_std - 0.5 * math.log(2 * math.pi) - np.log(1 - y * y + 1e-6))
    x2 = np.concatenate([norm_obs(b.s2)[0], y])
    q_next = min(_mlp(t, x2[None])[0, 0] for t in policy.targets)
    target = 10.0 * b.r[0] + 0.5 * (q_next - cfg.alpha * logp)
    assert critic_target(policy, b, eps)[0] == pytest.approx(target, rel=1e-12)
    x = np.concatenate([norm_obs(b.s)[0], norm_act(b.a)[0]])
    loss = sum((_mlp(c, x[None])[0, 0] - target) ** 2 for c in policy.critics)
    assert critic_loss_and_grad(policy, b, eps)[0] == pytest.approx(loss, rel=1e-12)
    # terminal transition: only the scaled reward remains
    b.done[:] = 1.0
    assert critic_target(policy, b, eps)[0] == pytest.approx(10.0 * b.r[0])


def test_targets_ignore_live_critics():
    policy = PolicyParams(TINY, seed=0)
    rng = np.random.default_rng(1)
    b = random_batch(rng, 6)
    eps = rng.standard_normal((6, policy.action_dim))
    before = critic_target(policy, b, eps)
    for c in policy.critics:
        c.params += 1.0
    assert np.array_equal(critic_target(policy, b, eps), before)


def test_bandit_actor_moves_toward_better_action():
    cfg = PolicyConfig(hidden=(16, 16), gamma=0.0, lr=3e-3, dtype="float64")
    policy = PolicyParams(cfg, seed=0)
    n = 64
    s = np.tile((OBSERVATION_SPACE.lower + OBSERVATION_SPACE.upper) / 2, (n, 1))
    y = np.zeros((n, 52))
    y[::2, 0], y[1::2, 0] = -0.5, 0.5
    a = ACTION_SPACE.lower + (y + 1) / 2 * ACTION_SPACE.span
    batch = Batch(s, a, (y[:, 0] > 0).astype(float), s, np.ones(n))
    start = act(policy, s[0], "deterministic")[0]
    rng = np.random.default_rng(0)
    for _ in range(200):
        update(policy, batch, rng)
    moved = act(policy, s[0], "deterministic")[0]
    better = ACTION_SPACE.lower[0] + 0.75 * ACTION_SPACE.span[0]
    assert abs(moved - better) < abs(start - better)
    assert moved > start


def test_mix_batches():
    rng = np.random.default_rng(0)
    real, sim = random_batch(rng, 30), random_batch(rng, 30)
    real.r[:], sim.r[:] = 1.0, 0.0
    assert np.all(mix_batches(real, sim, 1.0, 100, rng).r == 1.0)
    assert np.all(mix_batches(real, sim, 0.0, 100, rng).r == 0.0)
    assert np.all(mix_batches(None, sim, 0.7, 20, rng).r == 0.0)
    counts = np.array([mix_batches(real, sim, 0.1, 1000, np.random.default_rng(k)).r.sum() for k in range(50)])
    # 3 sigma per seed; with 50 seeds an occasional excursion is expected
    assert np.sum(np.abs(counts - 100) > 3 * math.sqrt(90)) <= 2
    assert abs(counts.mean() - 100) <= 3 * math.sqrt(90 / len(counts))
    with pytest.raises(ValueError):
        mix_batches(None, None, 0.5, 10, rng)


def test_checkpoint_roundtrip(tmp_path):
    policy = PolicyParams(TINY, seed=0)
    update(policy, random_batch(np.random.default_rng(0), 8), np.random.default_rng(0))
    save_policy(tmp_path / "p.npz", policy)
    twin = PolicyParams(TINY, seed=5)
    load_policy(tmp_path / "p.npz", twin)
    assert np.array_equal(twin.flat(), policy.flat())
    assert twin.updates == 1
    b = random_batch(np.random.default_rng(1), 8)
    update(policy, b, np.random.default_rng(2))
    update(twin, b, np.random.default_rng(2))
    assert np.array_equal(twin.flat(), policy.flat())


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(gamma=1.5)
    with pytest.raises(ValueError):
        PolicyConfig(alpha=0.0)
