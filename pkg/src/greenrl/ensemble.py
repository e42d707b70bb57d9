"""Bootstrap-masked ensemble of Gaussian-head dynamics models.

Each member maps the normalized pair (s, a) to the mean and log-variance of
a diagonal Gaussian over the standardized one-day change of the normalized
observation. Prediction undoes the standardization, adds the change to the
current state and projects the result back onto the valid observation box
(the clip restriction), so rollouts never leave the physical ranges.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .approximator import (DenseNet, load_checkpoint, make_optimizer, net_meta,
                           save_checkpoint)
from .spaces import ACTION_SPACE, ACT_DIM, OBSERVATION_SPACE, OBS_DIM, clip_to_bounds

log = logging.getLogger(__name__)

LOGVAR_BOUNDS = (-10.0, 4.0)
_OBS_LO, _OBS_SPAN = OBSERVATION_SPACE.lower, OBSERVATION_SPACE.span
_ACT_LO, _ACT_SPAN = ACTION_SPACE.lower, ACTION_SPACE.span
_PLANTING = OBSERVATION_SPACE.slice("planting_days")
_CUMULATIVE = [OBSERVATION_SPACE.slice("harvest_fresh_weight").start,
               OBSERVATION_SPACE.slice("harvest_dry_weight").start]


def gaussian_nll(mu, logvar, target):
    """Sum over samples of ``(mu-t)^T Sigma^-1 (mu-t) + log|Sigma|`` for diagonal Sigma.

    ``logvar`` holds ``log diag(Sigma)``. No constant term and no 1/2 factor.
    """
    mu, logvar, target = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (mu, logvar, target)))
    if mu.size == 0:
        raise ValueError("empty batch")
    err = mu - target
    return float(np.sum(err * err * np.exp(-logvar) + logvar))


def _norm_input(s, a, dtype):
    xs = (np.asarray(s, dtype=np.float64) - _OBS_LO) / _OBS_SPAN * 2.0 - 1.0
    xa = (np.asarray(a, dtype=np.float64) - _ACT_LO) / _ACT_SPAN * 2.0 - 1.0
    return np.concatenate([xs, xa], axis=-1).astype(dtype, copy=False)


@dataclass
class BootstrapMask:
    """``h[i, j] = 1`` when transition ``j`` belongs to the subset of member ``i``."""

    h: np.ndarray
    p_mask: float

    def subset(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.h[i])


def build_masks(n: int, N: int, p_mask: float = 0.8, seed=0) -> BootstrapMask:
    """Independent Bernoulli(p_mask) inclusion of each of ``n`` items for ``N`` members."""
    if not 0.0 < p_mask <= 1.0:
        raise ValueError(f"p_mask must lie in (0, 1], got {p_mask}")
    if n < 1 or N < 1:
        raise ValueError("dataset size and ensemble size must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h = (rng.random((N, n)) < p_mask).astype(np.uint8)
    return BootstrapMask(h, p_mask)


class ProbabilisticModel:
    """One Gaussian-head member: network output = concat(mu, log-variance)."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(128, 128), seed=0,
                 dtype=np.float32, logvar_bounds=LOGVAR_BOUNDS):
        self.state_dim = state_dim
        self.net = DenseNet((state_dim + action_dim, *hidden, 2 * state_dim), seed=seed, dtype=dtype)
        self.logvar_bounds = tuple(float(v) for v in logvar_bounds)

    def heads(self, x):
        """Mean and clamped log-variance for network inputs ``x``; also returns the cache."""
        out, cache = self.net.forward_cache(x)
        mu = out[..., :self.state_dim]
        raw = out[..., self.state_dim:]
        logvar = np.clip(raw, *self.logvar_bounds)
        return mu, logvar, (cache, raw)

    def loss_and_grad(self, x, target):
        """Mean per-sample NLL over the batch and its parameter gradient.

        Where the log-variance clamp is active the gradient through it is zero.
        """
        mu, logvar, (cache, raw) = self.heads(x)
        n = x.shape[0]
        inv = np.exp(-logvar)
        err = mu - target
        sq = err * err * inv
        loss = float(np.sum(sq + logvar, dtype=np.float64)) / n
        g_mu = 2.0 * err * inv / n
        g_lv = (1.0 - sq) / n
        lo, hi = self.logvar_bounds
        g_lv[(raw < lo) | (raw > hi)] = 0.0
        grad, _ = self.net.backward(cache, np.concatenate([g_mu, g_lv], axis=-1), input_grad=False)
        return loss, grad


@dataclass
class TargetScaler:
    """Per-dimension mean/std of the normalized one-day state change."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, s, s_next, floor: float = 1e-3) -> "TargetScaler":
        d = _norm_state(s_next) - _norm_state(s)
        return cls(d.mean(axis=0), np.maximum(d.std(axis=0), floor))

    @classmethod
    def identity(cls, dim: int = OBS_DIM) -> "TargetScaler":
        return cls(np.zeros(dim), np.ones(dim))

    def encode(self, s, s_next):
        return (_norm_state(s_next) - _norm_state(s) - self.mean) / self.std

    def decode(self, s, z):
        u = _norm_state(s) + self.mean + z * self.std
        return _OBS_LO + (np.clip(u, -1.0, 1.0) + 1.0) * 0.5 * _OBS_SPAN


def _norm_state(s):
    return (np.asarray(s, dtype=np.float64) - _OBS_LO) / _OBS_SPAN * 2.0 - 1.0


def restrict(s, a, s_pred):
    """Clip restriction plus the identities the simulator guarantees.

    The prediction is clipped to the observation bounds, the action echo is
    replaced by the applied action, planting days advance by exactly one and
    the cumulative harvest blocks never decrease.
    """
    out = clip_to_bounds(s_pred, OBSERVATION_SPACE)
    s = np.asarray(s, dtype=np.float64)
    out[..., :ACT_DIM] = a
    out[..., _PLANTING] = np.minimum(s[..., _PLANTING] + 1.0, OBSERVATION_SPACE.upper[_PLANTING])
    out[..., _CUMULATIVE] = np.maximum(out[..., _CUMULATIVE], s[..., _CUMULATIVE])
    return out


@dataclass
class EnsembleConfig:
    N: int = 5
    hidden: tuple = (128, 128)
    p_mask: float = 0.8
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 64
    logvar_bounds: tuple = LOGVAR_BOUNDS
    dtype: str = "float32"


class ModelEnsemble:
    """Members, the selection distribution ``P_M`` and the shared target scaler."""

    def __init__(self, config: EnsembleConfig | None = None, seed=0, selector=None,
                 state_dim: int = OBS_DIM, action_dim: int = ACT_DIM):
        self.config = config = config or EnsembleConfig()
        if config.N < 1:
            raise ValueError("ensemble needs at least one member")
        dtype = np.dtype(config.dtype)
        seeds = _seed_sequence(seed).spawn(config.N)
        self.members = [ProbabilisticModel(state_dim, action_dim, config.hidden,
                                           np.random.default_rng(s), dtype, config.logvar_bounds)
                        for s in seeds]
        self.optimizers = [make_optimizer(config.optimizer, m.net.parameter_count, config.lr, dtype)
                           for m in self.members]
        self.selector = np.full(config.N, 1.0 / config.N) if selector is None else _check_selector(selector, config.N)
        self.scaler = TargetScaler.identity(state_dim)

    def __len__(self):
        return len(self.members)

    @property
    def dtype(self):
        return self.members[0].net.dtype

    def encode(self, s, a, s_next):
        return _norm_input(s, a, self.dtype), self.scaler.encode(s, s_next).astype(self.dtype)

    def copy_from(self, other: "ModelEnsemble"):
        """Load parameters, scaler and optimizer state of an ensemble of the same shape."""
        for m, o in zip(self.members, other.members):
            m.net.set_params(o.net.params)
        for opt, o in zip(self.optimizers, other.optimizers):
            opt.load_state({k: np.copy(v) for k, v in o.state().items()})
        self.scaler = TargetScaler(other.scaler.mean.copy(), other.scaler.std.copy())
        self.selector = other.selector.copy()


def _check_selector(p, N):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (N,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
        raise ValueError("selector must be a probability vector over the members")
    return p / p.sum()


def nll_loss(model: ProbabilisticModel, s, a, s_next, scaler: TargetScaler | None = None) -> float:
    """Summed NLL of a batch of transitions under ``model`` (in standardized target units)."""
    s = np.atleast_2d(s)
    if s.shape[0] == 0:
        raise ValueError("empty batch")
    scaler = scaler or TargetScaler.identity(model.state_dim)
    x = _norm_input(s, np.atleast_2d(a), model.net.dtype)
    mu, logvar, _ = model.heads(x)
    return gaussian_nll(mu, logvar, scaler.encode(s, np.atleast_2d(s_next)))


def member_nll(model: ProbabilisticModel, x, y, chunk: int = 4096) -> float:
    """Mean per-sample NLL on pre-encoded inputs/targets."""
    total = 0.0
    for i in range(0, len(x), chunk):
        mu, logvar, _ = model.heads(x[i:i + chunk])
        total += gaussian_nll(mu, logvar, y[i:i + chunk])
    return total / max(len(x), 1)


def train_ensemble(ensemble: ModelEnsemble, x, y, mask: BootstrapMask, n_steps: int, rng) -> dict:
    """Minibatch training of every member on its own masked subset.

    ``x``/``y`` are encoded inputs/targets (see :meth:`ModelEnsemble.encode`).
    Returns per-member NLL on the subset before and after, and which members
    skipped the round because their subset was empty.
    """
    report = {"nll_start": [], "nll_end": [], "skipped": []}
    bs = ensemble.config.batch_size
    for i, (model, opt) in enumerate(zip(ensemble.members, ensemble.optimizers)):
        idx = mask.subset(i)
        if idx.size == 0:
            log.info("member %d has an empty subset, skipping training round", i)
            report["skipped"].append(i)
            report["nll_start"].append(None)
            report["nll_end"].append(None)
            continue
        # NLL on a fixed probe of the subset keeps the bookkeeping cheap
        probe = idx if idx.size <= 512 else idx[:: -(-idx.size // 512)]
        report["nll_start"].append(member_nll(model, x[probe], y[probe]))
        for _ in range(n_steps):
            batch = idx[rng.integers(0, idx.size, size=min(bs, idx.size))]
            _, grad = model.loss_and_grad(x[batch], y[batch])
            opt.step(model.net, grad)
        report["nll_end"].append(member_nll(model, x[probe], y[probe]))
    return report


def select_model(ensemble: ModelEnsemble, rng, size=None):
    """Member index drawn from ``P_M``; ``size`` draws independent indices at once."""
    return rng.choice(len(ensemble.members), size=size, p=ensemble.selector)


def predict(ensemble: ModelEnsemble, s, a, rng=None, mode: str = "sample", member=None):
    """Next observation for (s, a), restricted to the valid box.

    ``member`` is an index or an array of indices (one per row); by default
    one index per row is drawn with :func:`select_model`.
    """
    if mode not in ("sample", "mean"):
        raise ValueError(f"mode must be 'sample' or 'mean', got {mode!r}")
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    single = s.ndim == 1
    s2, a2 = np.atleast_2d(s), np.atleast_2d(a)
    n = s2.shape[0]
    if member is None:
        if rng is None:
            raise ValueError("an rng is required to select members")
        member = select_model(ensemble, rng, size=n)
    member = np.broadcast_to(np.asarray(member), (n,))
    x = _norm_input(s2, a2, ensemble.dtype)
    z = np.empty((n, s2.shape[1]))
    noise = rng.standard_normal(z.shape) if mode == "sample" else None
    for i in np.unique(member):
        rows = np.flatnonzero(member == i)
        mu, logvar, _ = ensemble.members[int(i)].heads(x[rows])
        z[rows] = mu
        if noise is not None:
            z[rows] += np.exp(0.5 * logvar.astype(np.float64)) * noise[rows]
    out = restrict(s2, a2, ensemble.scaler.decode(s2, z))
    return out[0] if single else out


def pretrain(ensemble: ModelEnsemble, s, a, s_next, n_steps: int, seed=0) -> dict:
    """Fit the target scaler and train every member on the full dataset."""
    ensemble.scaler = TargetScaler.fit(s, s_next)
    x, y = ensemble.encode(s, a, s_next)
    mask = BootstrapMask(np.ones((len(ensemble), len(x)), dtype=np.uint8), 1.0)
    return train_ensemble(ensemble, x, y, mask, n_steps, np.random.default_rng(seed))


# --- checkpoints -------------------------------------------------------------

def ensemble_arrays(ensemble: ModelEnsemble, with_optimizer: bool = True) -> dict:
    arrays = {"selector": ensemble.selector, "scaler.mean": ensemble.scaler.mean,
              "scaler.std": ensemble.scaler.std}
    for i, m in enumerate(ensemble.members):
        arrays[f"member{i}.params"] = m.net.params
        if with_optimizer:
            for k, v in ensemble.optimizers[i].state().items():
                arrays[f"member{i}.opt.{k}"] = v
    return arrays


def load_ensemble_arrays(ensemble: ModelEnsemble, arrays: dict):
    ensemble.selector = _check_selector(arrays["selector"], len(ensemble))
    ensemble.scaler = TargetScaler(arrays["scaler.mean"].copy(), arrays["scaler.std"].copy())
    for i, m in enumerate(ensemble.members):
        m.net.set_params(arrays[f"member{i}.params"])
        state = {k.split(".opt.")[1]: v for k, v in arrays.items() if k.startswith(f"member{i}.opt.")}
        if state:
            ensemble.optimizers[i].load_state(state)


def save_ensemble(path, ensemble: ModelEnsemble, meta: dict | None = None) -> str:
    info = {"kind": "ensemble", "N": len(ensemble), "hidden": list(ensemble.config.hidden),
            "member": net_meta(ensemble.members[0].net), **(meta or {})}
    return save_checkpoint(path, ensemble_arrays(ensemble), info)


def load_ensemble(path, ensemble: ModelEnsemble) -> dict:
    arrays, header = load_checkpoint(path)
    if header["meta"].get("kind") != "ensemble" or header["meta"].get("N") != len(ensemble):
        raise ValueError(f"{path}: not a checkpoint of a {len(ensemble)}-member ensemble")
    load_ensemble_arrays(ensemble, arrays)
    return header


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
