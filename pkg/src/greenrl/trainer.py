"""Dyna-style training loop with an ensemble model and sample dropout.

One epoch, in order:

1. interact with the greenhouse for ``env_steps_per_epoch`` days and add the
   transitions to the real buffer;
2. draw fresh bootstrap masks over the real buffer;
3. ``N_train`` times: train every member on its subset, roll the policy out
   for ``T`` steps on randomly selected members from real start states,
   apply dropout to that batch and push the survivors into the simulated
   buffer;
4. apply dropout to the real buffer: replace the buffer by its subset
   (``drop_real_buffer=True``) or let only this epoch's policy updates see
   the subset;
5. update the policy on batches mixed from both buffers.

``mode="sac"`` skips 2-4 and trains on real data only (the model-free
baseline). Every run is a pure function of its :class:`RunConfig`.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .approximator import load_checkpoint, save_checkpoint
from .dropout import SampleBatch, drop, drop_mask
from .ensemble import (EnsembleConfig, ModelEnsemble, build_masks, ensemble_arrays,
                       load_ensemble_arrays, pretrain, predict, select_model, train_ensemble)
from .policy import (Batch, PolicyConfig, PolicyParams, act, load_policy_arrays, mix_batches,
                     policy_arrays, update)
from .simulator import (DEFAULT_HORIZON, IDX, GreenhouseEnv, GreenhouseParams, PerturbationSpec,
                        rollout_episode, scripted_action, transition_reward)
from .spaces import ACTION_SPACE, ACT_DIM, OBS_DIM, spacespec_hash

log = logging.getLogger(__name__)

REAL, SIM = 0, 1
_TAGS = {"real": REAL, "sim": SIM}
PARAM_SETS = ("default", "held_out", "prior")
LOG_NAME = "epochs.jsonl"


class ConfigError(ValueError):
    """Invalid run or experiment configuration."""


class EpochError(RuntimeError):
    """A sub-step of an epoch failed; ``report`` says which one."""

    def __init__(self, message, report: dict):
        super().__init__(message)
        self.report = report


def param_set(name: str) -> GreenhouseParams:
    if name not in PARAM_SETS:
        raise ConfigError(f"unknown parameter set {name!r}; expected one of {PARAM_SETS}")
    return getattr(GreenhouseParams, name)() if name != "default" else GreenhouseParams()


# --- buffers -------------------------------------------------------------------

@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


class ReplayBuffer:
    """Bounded FIFO of transitions; the oldest items are evicted first.

    Every buffer has one source (``"real"`` or ``"sim"``); inserting items
    tagged with the other source raises, so simulated samples can never leak
    into the real buffer.
    """

    def __init__(self, capacity: int, source: str, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if source not in _TAGS:
            raise ValueError(f"source must be 'real' or 'sim', got {source!r}")
        self.capacity = int(capacity)
        self.source = source
        self._dims = (obs_dim, act_dim)
        self._allocate(min(self.capacity, 1024))
        self.size = 0
        self.head = 0
        self.inserted = 0

    def _allocate(self, rows: int):
        # storage grows by doubling until it reaches the capacity
        obs_dim, act_dim = self._dims
        old = {k: getattr(self, k) for k in self._COLS} if hasattr(self, "s") else None
        self.s = np.zeros((rows, obs_dim))
        self.a = np.zeros((rows, act_dim))
        self.r = np.zeros(rows)
        self.s2 = np.zeros((rows, obs_dim))
        self.done = np.zeros(rows)
        self.tag = np.zeros(rows, dtype=np.uint8)
        self.seq = np.zeros(rows, dtype=np.int64)
        if old is not None:
            n = self.size
            for k, v in old.items():
                getattr(self, k)[:n] = v[:n]

    def _reserve(self, rows: int):
        have = len(self.r)
        if rows > have and have < self.capacity:
            self._allocate(min(self.capacity, max(rows, 2 * have)))

    def __len__(self):
        return self.size

    _COLS = ("s", "a", "r", "s2", "done", "tag", "seq")

    def add(self, s, a, r, s2, done, tag: int | None = None):
        """Append one transition or a batch (leading axis) in order."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        n = s.shape[0]
        tag = _TAGS[self.source] if tag is None else tag
        if np.any(np.asarray(tag) != _TAGS[self.source]):
            raise ValueError(f"refusing to insert foreign-tagged samples into the {self.source} buffer")
        cols = {"s": s, "a": np.atleast_2d(a), "r": np.reshape(r, -1), "s2": np.atleast_2d(s2),
                "done": np.reshape(done, -1).astype(np.float64),
                "tag": np.full(n, _TAGS[self.source], dtype=np.uint8),
                "seq": self.inserted + np.arange(n)}
        if n > self.capacity:
            cols = {k: v[-self.capacity:] for k, v in cols.items()}
            self.inserted += n - self.capacity
            n = self.capacity
        self._reserve(self.size + n)
        idx = (self.head + np.arange(n)) % self.capacity
        for k, v in cols.items():
            getattr(self, k)[idx] = v
        self.head = (self.head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)
        self.inserted += n

    def order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        return (self.head - self.size + np.arange(self.size)) % self.capacity

    def storage(self) -> Batch:
        """Valid rows without copying (order unspecified); for uniform sampling."""
        n = self.size
        return Batch(self.s[:n], self.a[:n], self.r[:n], self.s2[:n], self.done[:n])

    def rewards(self) -> np.ndarray:
        return self.r[self.order()]

    def keep(self, mask):
        """Retain the items selected by ``mask`` (oldest-first order), dropping the rest."""
        idx = self.order()[np.asarray(mask, dtype=bool)]
        cols = {k: getattr(self, k)[idx].copy() for k in self._COLS}
        k = len(idx)
        for name, v in cols.items():
            getattr(self, name)[:k] = v
        self.size = k
        self.head = k % self.capacity

    def arrays(self, prefix: str) -> dict:
        idx = self.order()
        out = {f"{prefix}.{k}": getattr(self, k)[idx] for k in self._COLS}
        out[f"{prefix}.inserted"] = np.array(self.inserted)
        return out

    def load_arrays(self, arrays: dict, prefix: str):
        n = len(arrays[f"{prefix}.r"])
        self._reserve(n)
        for k in self._COLS:
            getattr(self, k)[:n] = arrays[f"{prefix}.{k}"]
        self.size = n
        self.head = n % self.capacity
        self.inserted = int(arrays[f"{prefix}.inserted"])

    def audit(self) -> bool:
        """True when every stored item carries this buffer's source tag."""
        return bool(np.all(self.tag[:self.size] == _TAGS[self.source]))


# --- configuration ---------------------------------------------------------------

@dataclass
class RunConfig:
    """Every knob of a training run."""

    seed: int = 0
    mode: str = "mbrl"                 # "mbrl" or "sac"
    p: float = 0.8                     # dropout level, 1.0 disables dropout
    N: int = 5
    p_mask: float = 0.8
    N_epoch: int = 500
    N_train: int = 4
    T: int = 400
    rollout_length: int = 5
    env_steps_per_epoch: int = 1
    model_steps: int = 20              # minibatch steps per member in each of the N_train rounds
    policy_updates_per_epoch: int = 20
    batch_size: int = 64
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 5e-3
    alpha: float = 0.002
    reward_scale: float = 10.0
    optimizer: str = "adam"
    policy_hidden: tuple = (64, 64)
    model_hidden: tuple = (128, 128)
    model_lr: float = 1e-3
    model_batch_size: int = 64
    horizon: int = DEFAULT_HORIZON
    real_fraction: float = 0.1
    real_capacity: int = 100_000
    sim_capacity: int = 20_000
    drop_real_buffer: bool = True
    reload_pretrained: bool = False
    train_params: str = "default"
    agent_params: str = "prior"        # coefficients the agent uses to price model rollouts
    eval_params: str = "held_out"
    temp_bias_setpoint: float | None = None
    co2_bias_setpoint: float | None = None
    exception: str = "none"
    pretrain_episodes: int = 20
    pretrain_steps: int = 3000
    pretrain_noise: float = 0.3
    eval_every: int = 10
    eval_seeds: tuple = (9001, 9002, 9003)
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.policy_hidden = tuple(self.policy_hidden)
        self.model_hidden = tuple(self.model_hidden)
        self.eval_seeds = tuple(int(s) for s in self.eval_seeds)
        self.validate()

    def validate(self):
        if self.mode not in ("mbrl", "sac"):
            raise ConfigError(f"mode must be 'mbrl' or 'sac', got {self.mode!r}")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        if not 0.0 < self.p_mask <= 1.0:
            raise ConfigError(f"p_mask must lie in (0, 1], got {self.p_mask}")
        for name in ("N", "N_epoch", "T", "rollout_length", "env_steps_per_epoch", "batch_size",
                     "horizon", "real_capacity", "sim_capacity", "model_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("N_train", "model_steps", "policy_updates_per_epoch", "pretrain_episodes",
                     "pretrain_steps", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ConfigError("real_fraction must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.lr < 0 or self.model_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        for name in ("train_params", "agent_params", "eval_params"):
            if getattr(self, name) not in PARAM_SETS:
                raise ConfigError(f"{name} must be one of {PARAM_SETS}")
        try:
            self.perturbation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def perturbation(self) -> PerturbationSpec:
        return PerturbationSpec(self.temp_bias_setpoint, self.co2_bias_setpoint, self.exception)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(hidden=self.policy_hidden, gamma=self.gamma, lr=self.lr, tau=self.tau,
                            alpha=self.alpha, reward_scale=self.reward_scale,
                            optimizer=self.optimizer, dtype=self.dtype)

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(N=self.N, hidden=self.model_hidden, p_mask=self.p_mask, lr=self.model_lr,
                              optimizer=self.optimizer, batch_size=self.model_batch_size, dtype=self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy_hidden"] = list(self.policy_hidden)
        d["model_hidden"] = list(self.model_hidden)
        d["eval_seeds"] = list(self.eval_seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run settings: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


DESK = dict(N_epoch=200, env_steps_per_epoch=120, N_train=2, T=400, model_steps=10,
            policy_updates_per_epoch=120, eval_every=200)


def desk_config(**changes) -> RunConfig:
    """Desk-scale preset: one 120-day episode per epoch, 200 epochs."""
    return RunConfig(**{**DESK, **changes})


# --- reports ---------------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    env_steps: int
    episodes: int
    real_size: int
    sim_size: int
    nll_start: list = field(default_factory=list)
    nll_end: list = field(default_factory=list)
    sim_generated: int = 0
    sim_retained: int = 0
    sim_dropped: int = 0
    sim_reward_before: float | None = None
    sim_reward_after: float | None = None
    real_before: int = 0
    real_retained: int = 0
    real_dropped: int = 0
    critic_loss: float | None = None
    actor_loss: float | None = None
    skipped_updates: int = 0
    train_return: float | None = None
    env_reward: float = 0.0            # sum of real rewards collected this epoch
    eval_return: float | None = None
    events: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)


# --- run state -------------------------------------------------------------------

def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


class RunState:
    """Everything that evolves during a run; checkpoints serialize all of it."""

    RNGS = ("act", "mask", "model", "rollout", "update")

    def __init__(self, config: RunConfig, ensemble: ModelEnsemble | None = None):
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        seeds = seq.spawn(len(self.RNGS) + 2)
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(self.RNGS, seeds)}
        self._episode_seq = seeds[-1]
        self.policy = PolicyParams(config.policy_config(), seed=seeds[-2])
        self.ensemble = ensemble
        self.pretrained = None
        if ensemble is not None and config.reload_pretrained:
            self.pretrained = ensemble_arrays(ensemble, with_optimizer=True)
        self.real = ReplayBuffer(config.real_capacity, "real")
        self.sim = ReplayBuffer(config.sim_capacity, "sim")
        self.real_view = None          # dropout subset of the real buffer, when it is not stored
        self.train_params = param_set(config.train_params)
        self.agent_params = param_set(config.agent_params)
        self.eval_params = param_set(config.eval_params)
        self.env = GreenhouseEnv(params=self.train_params, perturb=config.perturbation(),
                                 horizon=config.horizon)
        self.epoch = 0
        self.episodes = 0
        self.env_steps = 0
        self.episode_return = 0.0
        self.episode_returns: list = []
        self.fragments = 0
        self.timing: dict = {}
        self.env.reset(self.episode_seed(0))

    def episode_seed(self, k: int) -> int:
        return int(np.random.SeedSequence([*self._episode_seq.generate_state(2), k]).generate_state(1)[0])

    def snapshot(self) -> dict:
        return {
            "epoch": self.epoch, "episodes": self.episodes, "env_steps": self.env_steps,
            "episode_return": self.episode_return, "episode_returns": self.episode_returns,
            "fragments": self.fragments, "env": self.env.get_state(),
            "rngs": {k: _rng_state(r) for k, r in self.rngs.items()},
        }

    def restore(self, snap: dict):
        self.epoch = snap["epoch"]
        self.episodes = snap["episodes"]
        self.env_steps = snap["env_steps"]
        self.episode_return = snap["episode_return"]
        self.episode_returns = list(snap["episode_returns"])
        self.fragments = snap["fragments"]
        self.env.set_state(snap["env"])
        for k, st in snap["rngs"].items():
            _set_rng_state(self.rngs[k], st)


# --- pre-training ----------------------------------------------------------------

def pretrain_dataset(episodes: int, seed: int = 0, noise: float = 0.3, params: GreenhouseParams | None = None,
                     horizon: int = DEFAULT_HORIZON):
    """Transitions of a noisy scripted grower policy; returns (s, a, s')."""
    params = params or GreenhouseParams.prior()
    rng = np.random.default_rng([seed, 0xDA7A])
    S, A, S2 = [], [], []
    for k in range(episodes):
        env = GreenhouseEnv(seed=10_000 + k, params=params, horizon=horizon)
        obs = env.reset()
        # a few episodes with heavier noise widen the state-action coverage
        sigma = noise * (1.0 + 2.0 * (k % 3 == 2))
        while not env.done:
            a = scripted_action(obs, rng, noise=sigma)
            nxt, _, _ = env.step(a)
            S.append(obs)
            A.append(a)
            S2.append(nxt)
            obs = nxt
    return np.array(S), np.array(A), np.array(S2)


def _pretrain_key(config: RunConfig) -> str:
    fields_ = {k: getattr(config, k) for k in ("N", "model_hidden", "model_lr", "model_batch_size",
                                                "optimizer", "dtype", "pretrain_episodes",
                                                "pretrain_steps", "pretrain_noise", "agent_params",
                                                "horizon")}
    fields_["spacespec"] = spacespec_hash()
    fields_["version"] = __version__
    blob = json.dumps(fields_, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def pretrained_ensemble(config: RunConfig, cache_dir=None) -> ModelEnsemble:
    """Ensemble trained on the scripted-policy dataset, cached on disk by configuration.

    The pre-trained model does not depend on the run seed, so every run of a
    comparison starts from the same model.
    """
    ens = ModelEnsemble(config.ensemble_config(), seed=1234)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"pretrained-{_pretrain_key(config)}.npz"
        if path.exists():
            arrays, _ = load_checkpoint(path)
            load_ensemble_arrays(ens, arrays)
            return ens
    s, a, s2 = pretrain_dataset(config.pretrain_episodes, noise=config.pretrain_noise,
                                params=param_set(config.agent_params), horizon=config.horizon)
    pretrain(ens, s, a, s2, config.pretrain_steps, seed=0)
    if path is not None:
        save_checkpoint(path, ensemble_arrays(ens), {"kind": "ensemble", "N": len(ens),
                                                       "key": _pretrain_key(config)})
    return ens


# --- the algorithm steps ----------------------------------------------------------

def collect_real_step(state: RunState) -> Transition:
    """One greenhouse day under the stochastic policy, appended to the real buffer.

    Resets the environment (next training weather seed) once the horizon is reached.
    """
    env = state.env
    if env.done:
        state.episodes += 1
        env.reset(state.episode_seed(state.episodes))
    s = env.obs.copy()
    a = act(state.policy, s, "stochastic", state.rngs["act"])
    s2, r, done = env.step(a)
    state.real.add(s, a, r, s2, float(done))
    state.env_steps += 1
    state.episode_return += r
    if done:
        state.episode_returns.append(state.episode_return)
        state.episode_return = 0.0
    return Transition(s, a, r, s2.copy(), done)


def model_rollouts(state: RunState, T: int) -> SampleBatch:
    """``T`` simulated transitions in fragments of ``rollout_length`` steps.

    Fragments branch from states drawn uniformly from the real buffer; each
    step of each fragment uses a member drawn independently from ``P_M``.
    Fragments that reach the horizon stop early, so more fragments are
    started until ``T`` steps have been produced.
    """
    cfg = state.config
    if len(state.real) == 0:
        raise ValueError("real buffer is empty: no start states for model rollouts")
    rng = state.rngs["rollout"]
    L = cfg.rollout_length
    day_col = IDX["planting_days"].start
    parts, produced = [], 0
    while produced < T:
        n_frag = math.ceil((T - produced) / L)
        real = state.real.storage()
        s = real.s[rng.integers(0, len(state.real), size=n_frag)]
        frag = state.fragments + np.arange(n_frag)
        state.fragments += n_frag
        alive = np.ones(n_frag, dtype=bool)
        for t in range(L):
            rows = np.flatnonzero(alive)
            if rows.size == 0:
                break
            st = s[rows]
            a = act(state.policy, st, "stochastic", rng)
            members = select_model(state.ensemble, rng, size=rows.size)
            s2 = predict(state.ensemble, st, a, rng, member=members)
            r = transition_reward(st, a, s2, state.agent_params)
            done = s2[:, day_col] >= cfg.horizon
            parts.append(SampleBatch(st, a, r, s2, done.astype(np.float64), frag[rows],
                                     np.full(rows.size, t)))
            produced += rows.size
            s[rows] = s2
            alive[rows[done]] = False
    batch = SampleBatch.concat(parts)
    if len(batch) > T:
        # keep whole time steps in generation order, then trim to exactly T
        batch = batch.take(np.arange(T))
    return batch


def rollout_and_fill(state: RunState, T: int, p: float) -> dict:
    """Model rollouts, dropout on the batch, survivors appended to the simulated buffer."""
    batch = model_rollouts(state, T)
    kept = drop(batch, p)
    state.sim.add(kept.s, kept.a, kept.r, kept.s2, kept.done)
    return {"generated": len(batch), "retained": len(kept),
            "reward_before": float(np.mean(batch.r)), "reward_after": float(np.mean(kept.r))}


def _policy_batch(state: RunState, rng) -> Batch:
    cfg = state.config
    if cfg.mode == "sac":
        return mix_batches(state.real.storage(), None, 1.0, cfg.batch_size, rng)
    real = state.real.storage() if state.real_view is None else state.real_view
    return mix_batches(real, state.sim.storage(), cfg.real_fraction, cfg.batch_size, rng)


def evaluate_policy(policy: PolicyParams, params: GreenhouseParams, seeds, perturb=None,
                    horizon: int = DEFAULT_HORIZON) -> list:
    """Deterministic-mode episodes; returns one result per weather seed."""
    perturb = perturb or PerturbationSpec()
    pol = lambda obs: act(policy, obs, "deterministic")
    return [rollout_episode(pol, horizon=horizon, seed=s, perturb=perturb, params=params) for s in seeds]


def run_epoch(state: RunState) -> EpochReport:
    """One outer iteration, in the order documented at the top of the module."""
    cfg = state.config
    events = []
    phase = "env"
    timing = state.timing
    try:
        t0 = time.perf_counter()
        finished_before = len(state.episode_returns)
        env_reward = 0.0
        for _ in range(cfg.env_steps_per_epoch):
            env_reward += collect_real_step(state).r
        events.append("env")
        timing["env"] = timing.get("env", 0.0) + time.perf_counter() - t0

        report = EpochReport(epoch=state.epoch, env_steps=state.env_steps, episodes=state.episodes,
                             real_size=0, sim_size=0, env_reward=float(env_reward))
        if cfg.mode == "mbrl" and cfg.N_train > 0:
            phase = "mask"
            if state.pretrained is not None:
                load_ensemble_arrays(state.ensemble, state.pretrained)
            S = state.real.storage()
            mask = build_masks(len(state.real), cfg.N, cfg.p_mask, state.rngs["mask"])
            x, y = state.ensemble.encode(S.s, S.a, S.s2)
            events.append("mask")
            before, after = [], []
            for _ in range(cfg.N_train):
                phase = "model_train"
                t0 = time.perf_counter()
                rep = train_ensemble(state.ensemble, x, y, mask, cfg.model_steps, state.rngs["model"])
                events.append("model_train")
                timing["model"] = timing.get("model", 0.0) + time.perf_counter() - t0
                if not report.nll_start:
                    report.nll_start = rep["nll_start"]
                report.nll_end = rep["nll_end"]
                phase = "rollout"
                t0 = time.perf_counter()
                fill = rollout_and_fill(state, cfg.T, cfg.p)
                events.append("rollout")
                timing["rollout"] = timing.get("rollout", 0.0) + time.perf_counter() - t0
                report.sim_generated += fill["generated"]
                report.sim_retained += fill["retained"]
                before.append(fill["reward_before"])
                after.append(fill["reward_after"])
            report.sim_dropped = report.sim_generated - report.sim_retained
            report.sim_reward_before = float(np.mean(before))
            report.sim_reward_after = float(np.mean(after))

        report.real_before = len(state.real)
        report.real_retained = len(state.real)
        state.real_view = None
        if cfg.mode == "mbrl" and cfg.p < 1.0:
            phase = "real_dropout"
            if cfg.drop_real_buffer:
                state.real.keep(drop_mask(state.real.rewards(), cfg.p))
                report.real_retained = len(state.real)
            else:
                # the buffer stays whole; only this epoch's policy updates see the subset
                S = state.real.storage()
                keep = drop_mask(S.r, cfg.p)
                state.real_view = Batch(S.s[keep], S.a[keep], S.r[keep], S.s2[keep], S.done[keep])
                report.real_retained = len(state.real_view)
            events.append("real_dropout")
        report.real_dropped = report.real_before - report.real_retained

        phase = "policy_update"
        t0 = time.perf_counter()
        rng = state.rngs["update"]
        c_losses, a_losses = [], []
        for _ in range(cfg.policy_updates_per_epoch):
            out = update(state.policy, _policy_batch(state, rng), rng)
            if out["skipped"]:
                report.skipped_updates += 1
            else:
                c_losses.append(out["critic_loss"])
                a_losses.append(out["actor_loss"])
        if cfg.policy_updates_per_epoch:
            events.append("policy_update")
        timing["policy"] = timing.get("policy", 0.0) + time.perf_counter() - t0
        report.critic_loss = float(np.mean(c_losses)) if c_losses else None
        report.actor_loss = float(np.mean(a_losses)) if a_losses else None

        if len(state.episode_returns) > finished_before:
            report.train_return = state.episode_returns[-1]
        last = state.epoch + 1 == cfg.N_epoch
        if cfg.eval_every and ((state.epoch + 1) % cfg.eval_every == 0 or last):
            phase = "evaluate"
            t0 = time.perf_counter()
            res = evaluate_policy(state.policy, state.eval_params, cfg.eval_seeds, horizon=cfg.horizon)
            report.eval_return = float(np.mean([r.episodic_return for r in res]))
            events.append("evaluate")
            timing["eval"] = timing.get("eval", 0.0) + time.perf_counter() - t0
    except Exception as exc:
        raise EpochError(f"epoch {state.epoch} failed during {phase}: {exc}",
                         {"epoch": state.epoch, "phase": phase, "events": events,
                          "error": f"{type(exc).__name__}: {exc}"}) from exc

    report.real_size = len(state.real)
    report.sim_size = len(state.sim)
    report.episodes = state.episodes
    report.events = events
    state.epoch += 1
    return report


# --- checkpoints -------------------------------------------------------------------

def save_run(state: RunState, directory) -> Path:
    """Checkpoint directory: config.json, manifest.json, policy/, ensemble/, buffers/, state.json."""
    d = Path(directory)
    for sub in ("policy", "ensemble", "buffers"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(state.config.to_dict(), indent=2, sort_keys=True))
    hashes = {"policy": save_checkpoint(d / "policy" / "policy.npz", policy_arrays(state.policy),
                                        {"kind": "policy"})}
    if state.ensemble is not None:
        arrays = ensemble_arrays(state.ensemble)
        if state.pretrained is not None:
            arrays.update({f"pretrained.{k}": v for k, v in state.pretrained.items()})
        hashes["ensemble"] = save_checkpoint(d / "ensemble" / "ensemble.npz", arrays,
                                             {"kind": "ensemble", "N": len(state.ensemble)})
    buffers = {**state.real.arrays("real"), **state.sim.arrays("sim")}
    hashes["buffers"] = save_checkpoint(d / "buffers" / "buffers.npz", buffers, {"kind": "buffers"})
    (d / "state.json").write_text(json.dumps(state.snapshot(), sort_keys=True))
    manifest = {"version": __version__, "spacespec": spacespec_hash(), "epoch": state.epoch,
                "hashes": hashes}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_run(directory, cache_dir=None) -> RunState:
    d = Path(directory)
    config = RunConfig.from_dict(json.loads((d / "config.json").read_text()))
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest["spacespec"] != spacespec_hash():
        raise ConfigError(f"{d}: checkpoint was written for a different observation/action layout")
    ensemble = None
    if config.mode == "mbrl":
        ensemble = ModelEnsemble(config.ensemble_config(), seed=1234)
        arrays, _ = load_checkpoint(d / "ensemble" / "ensemble.npz")
        load_ensemble_arrays(ensemble, {k: v for k, v in arrays.items() if not k.startswith("pretrained.")})
    state = RunState(config, ensemble)
    if ensemble is not None and config.reload_pretrained:
        state.pretrained = {k[len("pretrained."):]: v for k, v in arrays.items() if k.startswith("pretrained.")}
    arrays, _ = load_checkpoint(d / "policy" / "policy.npz")
    load_policy_arrays(state.policy, arrays)
    arrays, _ = load_checkpoint(d / "buffers" / "buffers.npz")
    state.real.load_arrays(arrays, "real")
    state.sim.load_arrays(arrays, "sim")
    state.restore(json.loads((d / "state.json").read_text()))
    return state


# --- driver --------------------------------------------------------------------------

@dataclass
class RunResult:
    policy: PolicyParams
    reports: list
    state: RunState
    out_dir: Path | None = None

    @property
    def final_eval(self) -> float | None:
        for rep in reversed(self.reports):
            if rep.eval_return is not None:
                return rep.eval_return
        return None


def init_state(config: RunConfig, cache_dir=None) -> RunState:
    ensemble = pretrained_ensemble(config, cache_dir) if config.mode == "mbrl" else None
    return RunState(config, ensemble)


def train(config: RunConfig, out_dir=None, cache_dir=None, resume: bool = False,
          stop_after: int | None = None) -> RunResult:
    """Run ``config.N_epoch`` epochs.

    With ``out_dir`` the epoch log (JSONL) and checkpoints are written there.
    ``resume`` continues from ``out_dir/checkpoint`` when it exists.
    ``stop_after`` ends the call early after that many epochs in total
    (used to interrupt and resume runs).
    """
    out = Path(out_dir) if out_dir is not None else None
    if cache_dir is None and out is not None:
        cache_dir = out / "cache"
    reports: list = []
    state = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint"
        if resume and (ckpt / "manifest.json").exists():
            state = load_run(ckpt, cache_dir)
            if state.config.to_dict() != config.to_dict():
                raise ConfigError("resume config differs from the checkpointed run")
            reports = _read_log(out / LOG_NAME)[:state.epoch]
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    if state is None:
        state = init_state(config, cache_dir)
    log_fh = None
    if out is not None:
        log_fh = open(out / LOG_NAME, "w")
        for rep in reports:
            log_fh.write(rep.to_json() + "\n")
        log_fh.flush()
    limit = config.N_epoch if stop_after is None else min(config.N_epoch, stop_after)
    try:
        while state.epoch < limit:
            rep = run_epoch(state)
            reports.append(rep)
            if log_fh:
                log_fh.write(rep.to_json() + "\n")
                log_fh.flush()
                ck = config.checkpoint_every
                if (ck and state.epoch % ck == 0) or state.epoch == limit:
                    save_run(state, out / "checkpoint")
    finally:
        if log_fh:
            log_fh.close()
    if out is not None and state.epoch == config.N_epoch:
        save_run(state, out / "checkpoint")
        (out / "timing.json").write_text(json.dumps(state.timing, indent=2, sort_keys=True))
    return RunResult(state.policy, reports, state, out)


def _read_log(path) -> list:
    reports = []
    if Path(path).exists():
        for line in Path(path).read_text().splitlines():
            if line.strip():
                reports.append(EpochReport(**json.loads(line)))
    return reports
