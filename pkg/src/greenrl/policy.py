"""Soft actor-critic policy with analytic gradients.

The actor maps the normalized observation to the mean and log standard
deviation of a Gaussian in pre-squash space; ``tanh`` squashes a sample into
(-1, 1) and ``denormalize`` maps it onto the action box, so every emitted
action is feasible by construction. Two critics score (normalized state,
squashed action) pairs; their soft Bellman targets come from delayed target
copies only. The entropy temperature is fixed.

Losses are means over the batch. Descending them with :func:`sgd_step` is
``theta <- theta - lr * grad``, i.e. the actor ascends value plus entropy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .approximator import DenseNet, load_checkpoint, make_optimizer, net_meta, save_checkpoint
from .spaces import ACTION_SPACE, ACT_DIM, OBSERVATION_SPACE, OBS_DIM

log = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_SQUASH_EPS = 1e-6


@dataclass
class PolicyConfig:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 5e-3
    alpha: float = 0.002
    reward_scale: float = 10.0
    log_std_bounds: tuple = (-5.0, 0.5)
    optimizer: str = "adam"
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.alpha <= 0:
            raise ValueError("entropy temperature must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def norm_obs(s):
    return (np.asarray(s, dtype=np.float64) - OBSERVATION_SPACE.lower) / OBSERVATION_SPACE.span * 2.0 - 1.0


def norm_act(a):
    return (np.asarray(a, dtype=np.float64) - ACTION_SPACE.lower) / ACTION_SPACE.span * 2.0 - 1.0


def squash_to_action(y):
    """Map squashed values in [-1, 1] onto the action box (clipped against rounding)."""
    a = ACTION_SPACE.lower + (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * ACTION_SPACE.span
    return np.clip(a, ACTION_SPACE.lower, ACTION_SPACE.upper)


@dataclass
class Batch:
    """Arrays of transitions: states, actions (physical units), rewards, next states, done flags."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)


class PolicyParams:
    """Actor, twin critics, target critics and the fixed entropy temperature."""

    def __init__(self, config: PolicyConfig | None = None, seed=0,
                 state_dim: int = OBS_DIM, action_dim: int = ACT_DIM):
        self.config = cfg = config or PolicyConfig()
        dtype = np.dtype(cfg.dtype)
        s_actor, s_q1, s_q2 = _seed_sequence(seed).spawn(3)
        self.state_dim, self.action_dim = state_dim, action_dim
        self.actor = DenseNet((state_dim, *cfg.hidden, 2 * action_dim), seed=np.random.default_rng(s_actor), dtype=dtype)
        # start near the middle of the action box with moderate exploration
        W, b = self.actor.layers[-1]
        W *= 0.1
        b[:action_dim] = 0.0
        b[action_dim:] = -1.0
        self.critics = [DenseNet((state_dim + action_dim, *cfg.hidden, 1), seed=np.random.default_rng(s), dtype=dtype)
                        for s in (s_q1, s_q2)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = make_optimizer(cfg.optimizer, self.actor.parameter_count, cfg.lr, dtype)
        self.critic_opts = [make_optimizer(cfg.optimizer, c.parameter_count, cfg.lr, dtype) for c in self.critics]
        self.updates = 0

    @property
    def alpha(self) -> float:
        return self.config.alpha

    def nets(self) -> dict:
        return {"actor": self.actor, "critic0": self.critics[0], "critic1": self.critics[1],
                "target0": self.targets[0], "target1": self.targets[1]}

    def flat(self) -> np.ndarray:
        return np.concatenate([n.params for n in self.nets().values()])

    # --- actor ----------------------------------------------------------------
    def _actor_heads(self, xs):
        out, cache = self.actor.forward_cache(xs)
        mean = out[:, :self.action_dim]
        raw = out[:, self.action_dim:]
        log_std = np.clip(raw, *self.config.log_std_bounds)
        return mean, log_std, raw, cache

    def _sample(self, xs, eps):
        """Reparameterized squashed sample and its log-density."""
        mean, log_std, raw, cache = self._actor_heads(xs)
        std = np.exp(log_std)
        u = mean + std * eps
        y = np.tanh(u)
        logp = np.sum(-0.5 * eps * eps - log_std - _HALF_LOG_2PI - np.log(1.0 - y * y + _SQUASH_EPS), axis=1)
        return y, logp, (std, raw, cache)

    def _q(self, nets, xs, y):
        x = np.concatenate([xs, y.astype(xs.dtype, copy=False)], axis=1)
        outs = [n.forward_cache(x) for n in nets]
        return [o[0][:, 0] for o in outs], [o[1] for o in outs]


def act(policy: PolicyParams, s, mode: str = "stochastic", rng=None) -> np.ndarray:
    """Action for observation(s) ``s``; always inside the action box."""
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"mode must be 'stochastic' or 'deterministic', got {mode!r}")
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    xs = norm_obs(np.atleast_2d(s)).astype(policy.actor.dtype)
    mean, log_std, _, _ = policy._actor_heads(xs)
    if mode == "deterministic":
        u = mean.astype(np.float64)
    else:
        if rng is None:
            raise ValueError("stochastic mode needs an rng")
        u = mean + np.exp(log_std.astype(np.float64)) * rng.standard_normal(mean.shape)
    a = squash_to_action(np.tanh(u))
    return a[0] if single else a


def evaluate_return(rewards, gamma: float) -> float:
    """Discounted sum ``sum_t gamma^t r_t``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        return 0.0
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return float(np.sum(r * gamma ** np.arange(r.size)))


def critic_target(policy: PolicyParams, batch: Batch, eps_next) -> np.ndarray:
    """Soft Bellman target built from the target critics only."""
    cfg = policy.config
    dtype = policy.actor.dtype
    xs2 = norm_obs(batch.s2).astype(dtype)
    y2, logp2, _ = policy._sample(xs2, eps_next)
    (t1, t2), _ = policy._q(policy.targets, xs2, y2)
    soft = np.minimum(t1, t2) - cfg.alpha * logp2
    r = cfg.reward_scale * np.asarray(batch.r, dtype=np.float64)
    return r + cfg.gamma * (1.0 - np.asarray(batch.done, dtype=np.float64)) * soft


def critic_loss_and_grad(policy: PolicyParams, batch: Batch, eps_next):
    """Sum over both critics of the mean squared Bellman error, and per-critic gradients."""
    target = critic_target(policy, batch, eps_next)
    dtype = policy.actor.dtype
    xs = norm_obs(batch.s).astype(dtype)
    y = norm_act(batch.a)
    (q1, q2), caches = policy._q(policy.critics, xs, y)
    n = len(target)
    loss, grads = 0.0, []
    for q, cache, net in zip((q1, q2), caches, policy.critics):
        err = q - target
        loss += float(np.mean(err * err))
        g, _ = net.backward(cache, (2.0 * err / n)[:, None], input_grad=False)
        grads.append(g)
    return loss, grads


def actor_loss_and_grad(policy: PolicyParams, batch: Batch, eps):
    """Mean of ``alpha * log pi(a|s) - min_i Q_i(s, a)`` over reparameterized samples."""
    cfg = policy.config
    dtype = policy.actor.dtype
    xs = norm_obs(batch.s).astype(dtype)
    y, logp, (std, raw, cache) = policy._sample(xs, eps)
    (q1, q2), caches = policy._q(policy.critics, xs, y)
    n = len(logp)
    use1 = q1 <= q2
    qmin = np.where(use1, q1, q2)
    loss = float(np.mean(cfg.alpha * logp - qmin))

    # dL/dy through the critic with the smaller value
    dq = np.zeros((n, policy.action_dim))
    for which, cache_q, net in ((use1, caches[0], policy.critics[0]), (~use1, caches[1], policy.critics[1])):
        up = np.where(which, -1.0 / n, 0.0)[:, None]
        _, gx = net.backward(cache_q, up)
        dq += gx[:, policy.state_dim:]
    d_y = dq + (cfg.alpha / n) * 2.0 * y / (1.0 - y * y + _SQUASH_EPS)
    d_u = d_y * (1.0 - y * y)
    d_mean = d_u
    d_log_std = d_u * std * eps - cfg.alpha / n
    lo, hi = cfg.log_std_bounds
    d_log_std = np.where((raw < lo) | (raw > hi), 0.0, d_log_std)
    grad, _ = policy.actor.backward(cache, np.concatenate([d_mean, d_log_std], axis=1), input_grad=False)
    return loss, grad


def soft_update(policy: PolicyParams, tau: float | None = None):
    tau = policy.config.tau if tau is None else tau
    for t, c in zip(policy.targets, policy.critics):
        t.params *= 1.0 - tau
        t.params += tau * c.params


def update(policy: PolicyParams, batch: Batch, rng, lr: float | None = None) -> dict:
    """One actor-critic step on an (already filtered) batch.

    Critics first, then the actor against the updated critics, then the
    target soft update. ``lr`` overrides the optimizers' learning rate for
    this call; a zero learning rate leaves every parameter untouched,
    targets included. A non-finite loss skips the step.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    lr = policy.config.lr if lr is None else lr
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    n = len(batch)
    eps_next = rng.standard_normal((n, policy.action_dim))
    eps = rng.standard_normal((n, policy.action_dim))
    if lr == 0:
        return {"critic_loss": None, "actor_loss": None, "skipped": True}
    for opt in (policy.actor_opt, *policy.critic_opts):
        opt.lr = lr

    c_loss, c_grads = critic_loss_and_grad(policy, batch, eps_next)
    if not np.isfinite(c_loss):
        log.warning("non-finite critic loss, update skipped")
        return {"critic_loss": c_loss, "actor_loss": None, "skipped": True}
    for net, opt, g in zip(policy.critics, policy.critic_opts, c_grads):
        opt.step(net, g)

    a_loss, a_grad = actor_loss_and_grad(policy, batch, eps)
    if np.isfinite(a_loss):
        policy.actor_opt.step(policy.actor, a_grad)
    else:
        log.warning("non-finite actor loss, actor step skipped")
    soft_update(policy)
    policy.updates += 1
    return {"critic_loss": c_loss, "actor_loss": a_loss, "skipped": False}


def mix_batches(real: Batch | None, sim: Batch | None, real_fraction: float, size: int, rng) -> Batch:
    """Uniform sample of ``size`` items, each from ``real`` with probability ``real_fraction``.

    When one buffer is empty every item comes from the other.
    """
    if not 0.0 <= real_fraction <= 1.0:
        raise ValueError("real_fraction must lie in [0, 1]")
    n_real = 0 if real is None else len(real)
    n_sim = 0 if sim is None else len(sim)
    if n_real == 0 and n_sim == 0:
        raise ValueError("both buffers are empty")
    if n_sim == 0:
        k = size
    elif n_real == 0:
        k = 0
    else:
        k = int(rng.binomial(size, real_fraction))
    parts = []
    if k:
        parts.append(_take(real, rng.integers(0, n_real, size=k)))
    if size - k:
        parts.append(_take(sim, rng.integers(0, n_sim, size=size - k)))
    return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("s", "a", "r", "s2", "done")))


def _take(b: Batch, idx) -> Batch:
    return Batch(b.s[idx], b.a[idx], b.r[idx], b.s2[idx], b.done[idx])


# --- checkpoints -------------------------------------------------------------

def policy_arrays(policy: PolicyParams) -> dict:
    arrays = {f"{k}.params": n.params for k, n in policy.nets().items()}
    for k, opt in (("actor", policy.actor_opt), ("critic0", policy.critic_opts[0]), ("critic1", policy.critic_opts[1])):
        for name, v in opt.state().items():
            arrays[f"{k}.opt.{name}"] = v
    arrays["updates"] = np.array(policy.updates)
    return arrays


def load_policy_arrays(policy: PolicyParams, arrays: dict):
    for k, n in policy.nets().items():
        n.set_params(arrays[f"{k}.params"])
    for k, opt in (("actor", policy.actor_opt), ("critic0", policy.critic_opts[0]), ("critic1", policy.critic_opts[1])):
        state = {name.split(".opt.")[1]: v for name, v in arrays.items() if name.startswith(f"{k}.opt.")}
        if state:
            opt.load_state(state)
    policy.updates = int(arrays["updates"])


def save_policy(path, policy: PolicyParams, meta: dict | None = None) -> str:
    info = {"kind": "policy", "actor": net_meta(policy.actor), "critic": net_meta(policy.critics[0]),
            "alpha": policy.alpha, **(meta or {})}
    return save_checkpoint(path, policy_arrays(policy), info)


def load_policy(path, policy: PolicyParams) -> dict:
    arrays, header = load_checkpoint(path)
    if header["meta"].get("kind") != "policy":
        raise ValueError(f"{path}: not a policy checkpoint")
    load_policy_arrays(policy, arrays)
    return header


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
