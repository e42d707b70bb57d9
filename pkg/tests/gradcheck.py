"""Finite-difference oracles shared by the unit and acceptance tests."""
import numpy as np

from greenrl.approximator import numeric_gradient, relative_error
from greenrl.ensemble import ProbabilisticModel
from greenrl.policy import Batch, PolicyConfig, PolicyParams, actor_loss_and_grad, critic_loss_and_grad
from greenrl.spaces import ACTION_SPACE, OBSERVATION_SPACE

STEP = 1e-5
TOL = 1e-4


def random_states(rng, n):
    return OBSERVATION_SPACE.lower + rng.random((n, OBSERVATION_SPACE.total_dim)) * OBSERVATION_SPACE.span


def random_actions(rng, n):
    return ACTION_SPACE.lower + rng.random((n, ACTION_SPACE.total_dim)) * ACTION_SPACE.span


def random_batch(rng, n=4):
    return Batch(random_states(rng, n), random_actions(rng, n), rng.normal(0, 1, n), random_states(rng, n),
                 (rng.random(n) < 0.3).astype(float))


def _subset_check(analytic, fn, theta, coords):
    numeric = np.zeros(len(coords))
    for k, i in enumerate(coords):
        orig = theta[i]
        theta[i] = orig + STEP
        up = fn()
        theta[i] = orig - STEP
        down = fn()
        theta[i] = orig
        numeric[k] = (up - down) / (2 * STEP)
    return relative_error(analytic[coords], numeric)


def model_nll_error(seed: int) -> float:
    """Model NLL gradient vs central differences over every parameter of a small member."""
    rng = np.random.default_rng(seed)
    sd, ad = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(3, 7, size=int(rng.integers(1, 3))))
    model = ProbabilisticModel(sd, ad, hidden, seed=seed, dtype=np.float64)
    x = rng.normal(size=(6, sd + ad))
    y = rng.normal(size=(6, sd))
    _, grad = model.loss_and_grad(x, y)
    numeric = numeric_gradient(lambda: model.loss_and_grad(x, y)[0], model.net.params, STEP)
    return relative_error(grad, numeric)


def _small_policy(seed):
    rng = np.random.default_rng(seed)
    hidden = tuple(int(h) for h in rng.integers(3, 7, size=2))
    cfg = PolicyConfig(hidden=hidden, dtype="float64", gamma=float(rng.uniform(0.5, 1.0)))
    policy = PolicyParams(cfg, seed=seed)
    # make the actor output non-trivial so every term contributes
    policy.actor.params += rng.normal(0, 0.05, policy.actor.parameter_count)
    for t in policy.targets:
        t.params += rng.normal(0, 0.05, t.parameter_count)
    return policy, rng


def critic_error(seed: int, n_coords: int = 300) -> float:
    """Critic loss gradient vs central differences on random coordinates of both critics."""
    policy, rng = _small_policy(seed)
    batch = random_batch(rng)
    eps_next = rng.standard_normal((len(batch), policy.action_dim))
    _, grads = critic_loss_and_grad(policy, batch, eps_next)
    worst = 0.0
    for k, net in enumerate(policy.critics):
        coords = np.sort(rng.choice(net.parameter_count, size=min(n_coords, net.parameter_count), replace=False))
        err = _subset_check(grads[k], lambda: critic_loss_and_grad(policy, batch, eps_next)[0], net.params, coords)
        worst = max(worst, err)
    return worst


def actor_error(seed: int, n_coords: int = 300) -> float:
    """Actor loss gradient vs central differences on random actor coordinates (including the heads)."""
    policy, rng = _small_policy(seed)
    batch = random_batch(rng)
    eps = rng.standard_normal((len(batch), policy.action_dim))
    _, grad = actor_loss_and_grad(policy, batch, eps)
    n = policy.actor.parameter_count
    last = policy.actor.layout()[-2]["offset"]
    coords = np.unique(np.concatenate([rng.choice(n, size=min(n_coords, n), replace=False),
                                       rng.choice(np.arange(last, n), size=50, replace=False)]))
    return _subset_check(grad, lambda: actor_loss_and_grad(policy, batch, eps)[0], policy.actor.params, coords)
