"""Experiment suite: training curves, perturbation heat maps, exception tests, p-sweep.

Every function is a pure function of its configs and seeds. Training runs
are expensive, so the functions that need trained policies accept already
trained runs (see :func:`train_runs`) and only train what is missing.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..policy import PolicyParams, act
from ..simulator import DEFAULT_HORIZON, PerturbationSpec, rollout_episode
from ..trainer import ConfigError, EpochReport, RunConfig, param_set, train
from .plotting import emit_plot, write_csv

log = logging.getLogger(__name__)

TEMP_INTERVAL = (25.0, 31.0)
CO2_INTERVAL = (400.0, 1000.0)
PAPER_STEPS_PER_CELL = 500_000
DISTURBED_ENVIRONMENTS = {
    "T26_C500": (26.0, 500.0),
    "T26_C900": (26.0, 900.0),
    "T30_C500": (30.0, 500.0),
    "T30_C900": (30.0, 900.0),
}
SWEEP_P = (1.0, 0.9, 0.8, 0.7, 0.6)
EXCEPTION_CONDITIONS = {
    "AirT(35,40)": "AirT_high",
    "AirT(-2,10)": "AirT_low",
    "AirRH=90": "AirRH_fixed",
    "Iglob=0": "Iglob_zero",
}
# reference values reported for the real greenhouse (fresh weight, retention %),
# kept as annotation only
PAPER_EXCEPTION_TABLE = {
    ("AirT(35,40)", 1.0): (38.51, 80.23), ("AirT(35,40)", 0.8): (45.24, 85.35),
    ("AirT(-2,10)", 1.0): (30.31, 63.14), ("AirT(-2,10)", 0.8): (38.49, 72.62),
    ("AirRH=90", 1.0): (32.69, 68.10), ("AirRH=90", 0.8): (39.30, 74.16),
    ("Iglob=0", 1.0): (36.76, 76.59), ("Iglob=0", 0.8): (43.71, 82.47),
}


# --- trained runs ------------------------------------------------------------------

@dataclass
class TrainedRun:
    """What experiments keep from a training run (the buffers are discarded)."""

    label: str
    seed: int
    config: RunConfig
    policy: PolicyParams | None
    reports: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.policy is not None and self.error is None


def method_configs(base: RunConfig) -> dict:
    """The three compared methods: dropout p=0.8, no dropout (p=1) and plain SAC."""
    return {
        "p=0.8": base.replace(mode="mbrl", p=0.8),
        "p=1.0": base.replace(mode="mbrl", p=1.0),
        "SAC": base.replace(mode="sac", p=1.0),
    }


def train_runs(configs: dict, seeds, out_dir=None, cache_dir=None, runs: dict | None = None,
               strict: bool = False) -> dict:
    """Train every (label, seed) pair not already in ``runs``.

    Returns ``{(label, seed): TrainedRun}``. A failing run is recorded with its
    error instead of aborting the batch, unless ``strict``.
    """
    runs = dict(runs or {})
    for label, cfg in configs.items():
        for seed in seeds:
            key = (label, int(seed))
            if key in runs:
                continue
            run_cfg = cfg.replace(seed=int(seed))
            run_out = None if out_dir is None else Path(out_dir) / "runs" / _slug(label) / f"seed{seed}"
            try:
                res = train(run_cfg, out_dir=run_out, cache_dir=cache_dir)
            except (ConfigError, KeyboardInterrupt):
                raise
            except Exception as exc:
                if strict:
                    raise
                log.error("run %s seed %s failed: %s", label, seed, exc)
                runs[key] = TrainedRun(label, int(seed), run_cfg, None, error=str(exc))
                continue
            runs[key] = TrainedRun(label, int(seed), run_cfg, res.policy, res.reports)
    return runs


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def episode_seeds(seed: int, n: int) -> list:
    """Weather seeds of ``n`` evaluation episodes for experiment seed ``seed``."""
    return [int(x) for x in np.random.SeedSequence([int(seed), 0x5EED]).generate_state(n)]


def evaluate(policy: PolicyParams, params, seeds, perturb: PerturbationSpec | None = None,
             horizon: int = DEFAULT_HORIZON) -> list:
    """Deterministic episodes of ``policy``, one per weather seed."""
    perturb = perturb or PerturbationSpec()
    pol = lambda obs: act(policy, obs, "deterministic")
    return [rollout_episode(pol, horizon=horizon, seed=s, perturb=perturb, params=params) for s in seeds]


def mean_return(policy: PolicyParams, params, seeds, perturb=None, horizon: int = DEFAULT_HORIZON) -> float:
    return float(np.mean([r.episodic_return for r in evaluate(policy, params, seeds, perturb, horizon)]))


# --- training curves ---------------------------------------------------------------

def curve_rows(runs: dict, metric: str = "eval") -> list:
    """(method, seed, epoch, return) rows from the epoch reports."""
    rows = []
    for (label, seed), run in sorted(runs.items()):
        if not run.ok:
            continue
        for rep in run.reports:
            value = rep.eval_return if metric == "eval" else rep.train_return
            if value is not None:
                rows.append({"method": label, "seed": seed, "epoch": rep.epoch, "return": float(value)})
    return rows


def band_summary(rows: list) -> dict:
    """Per method and epoch: (mean, std, n) across seeds (std 0 for a single seed)."""
    acc: dict = {}
    for r in rows:
        acc.setdefault(r["method"], {}).setdefault(int(r["epoch"]), []).append(float(r["return"]))
    return {m: {e: (float(np.mean(v)), float(np.std(v)), len(v)) for e, v in sorted(eps.items())}
            for m, eps in acc.items()}


def run_training_comparison(base: RunConfig, seeds, out_dir=None, cache_dir=None, runs: dict | None = None,
                            configs: dict | None = None, metric: str = "eval",
                            reference: float | None = None) -> dict:
    """Train (or reuse) every method for every seed and summarise the curves.

    Returns a dict with ``rows``, ``bands``, ``missing`` (list of (label, seed)
    that failed or were absent), ``partial`` and, with ``out_dir``, the CSV
    and SVG paths. ``reference`` draws an optional horizontal reference line.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigError("training comparison needs at least 2 seeds")
    configs = configs or method_configs(base)
    runs = train_runs(configs, seeds, out_dir, cache_dir, runs)
    missing = [(label, s) for label in configs for s in seeds
               if (label, s) not in runs or not runs[(label, s)].ok]
    wanted = {(label, s): runs[(label, s)] for label in configs for s in seeds if (label, s) in runs}
    rows = curve_rows(wanted, metric)
    out = {"rows": rows, "bands": band_summary(rows), "missing": missing, "partial": bool(missing), "runs": runs}
    if missing:
        log.warning("training comparison is partial; missing runs: %s", missing)
    if out_dir is not None and rows:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "curves.csv", "curve", rows)
        out["csv"] = d / "curves.csv"
        opts = {} if reference is None else {"reference": reference}
        out["svg"] = emit_plot(d / "curves.csv", "curve", d / "curves.svg", **opts)
        (d / "curves_status.json").write_text(json.dumps(
            {"partial": bool(missing), "missing": [list(m) for m in missing]}, indent=2, sort_keys=True))
    return out


# --- heat maps ---------------------------------------------------------------------

@dataclass
class ExperimentGrid:
    """Perturbation grid of setpoint overrides."""

    temp_values: tuple = tuple(np.linspace(25.0, 31.0, 5).tolist())
    co2_values: tuple = tuple(np.linspace(400.0, 1000.0, 5).tolist())
    steps_per_cell: int = 50_000
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        self.temp_values = tuple(float(v) for v in self.temp_values)
        self.co2_values = tuple(float(v) for v in self.co2_values)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if not self.temp_values or not self.co2_values:
            raise ConfigError("grid needs at least one temperature and one CO2 value")
        for v in self.temp_values:
            if not TEMP_INTERVAL[0] <= v <= TEMP_INTERVAL[1]:
                raise ConfigError(f"temperature {v} outside {TEMP_INTERVAL}")
        for v in self.co2_values:
            if not CO2_INTERVAL[0] <= v <= CO2_INTERVAL[1]:
                raise ConfigError(f"CO2 {v} outside {CO2_INTERVAL}")
        if self.steps_per_cell < 1:
            raise ConfigError("steps_per_cell must be >= 1")
        if not self.seeds:
            raise ConfigError("grid needs at least one seed")

    @classmethod
    def paper(cls) -> "ExperimentGrid":
        """Reference protocol: 7x7 grid, 500,000 steps per cell, 5 seeds."""
        return cls(tuple(np.linspace(25.0, 31.0, 7).tolist()), tuple(np.linspace(400.0, 1000.0, 7).tolist()),
                   PAPER_STEPS_PER_CELL, (0, 1, 2, 3, 4))

    def to_dict(self) -> dict:
        return {"temp_values": list(self.temp_values), "co2_values": list(self.co2_values),
                "steps_per_cell": self.steps_per_cell, "seeds": list(self.seeds)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGrid":
        unknown = set(d) - {"temp_values", "co2_values", "steps_per_cell", "seeds"}
        if unknown:
            raise ConfigError(f"unknown grid key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class HeatmapResult:
    """Cell matrices (rows = temperature, columns = CO2), averaged over seeds."""

    temp_values: tuple
    co2_values: tuple
    matrix: np.ndarray                       # mean evaluation reward per step
    train_matrix: np.ndarray | None          # mean training reward per step (train mode only)
    rows: list
    metadata: dict
    baseline: float | None = None            # unperturbed evaluation, same seeds

    def __post_init__(self):
        shape = (len(self.temp_values), len(self.co2_values))
        if self.matrix.shape != shape:
            raise ValueError(f"matrix shape {self.matrix.shape} != {shape}")


def _episodes_for(steps: int, horizon: int) -> int:
    return max(1, math.ceil(steps / horizon))


def heatmap_cell(source, temp: float | None, co2: float | None, seed: int, steps: int,
                 params=None, horizon: int = DEFAULT_HORIZON, cache_dir=None) -> dict:
    """One (cell, seed) value.

    ``source`` is either a trained policy, evaluated for ``steps`` environment
    steps under the perturbation, or a :class:`RunConfig`, trained for
    ``steps`` real steps under the perturbation and then evaluated there.
    Rewards are reported per environment step.
    """
    perturb = PerturbationSpec(temp_bias_setpoint=temp, co2_bias_setpoint=co2)
    if isinstance(source, RunConfig):
        cfg = source.replace(seed=int(seed), temp_bias_setpoint=temp, co2_bias_setpoint=co2,
                             N_epoch=max(1, math.ceil(steps / source.env_steps_per_epoch)), eval_every=0)
        res = train(cfg, cache_dir=cache_dir)
        train_reward = _training_reward(res.reports)
        params = params or param_set(cfg.eval_params)
        horizon = cfg.horizon
        policy = res.policy
        steps = len(cfg.eval_seeds) * horizon
    else:
        train_reward = None
        policy = source
        params = params or param_set("held_out")
    n = _episodes_for(steps, horizon)
    results = evaluate(policy, params, episode_seeds(seed, n), perturb, horizon)
    eval_reward = float(np.mean([r.episodic_return for r in results])) / horizon
    return {"temp": temp, "co2": co2, "seed": int(seed), "train_mean_reward": train_reward,
            "eval_mean_reward": eval_reward}


def _training_reward(reports: list) -> float | None:
    total = sum(r.env_reward for r in reports)
    steps = reports[-1].env_steps if reports else 0
    return None if steps == 0 else float(total / steps)


def run_heatmap(source, grid: ExperimentGrid, params=None, horizon: int = DEFAULT_HORIZON, out_dir=None,
                cache_dir=None, baseline: bool = True, label: str = "") -> HeatmapResult:
    """Fill every (temperature, CO2) cell for every seed.

    ``source`` is a policy (evaluation mode), a ``{seed: policy}`` mapping, or
    a :class:`RunConfig` (train-per-cell mode).
    """
    grid.validate()
    rows = []
    for temp in grid.temp_values:
        for co2 in grid.co2_values:
            for seed in grid.seeds:
                rows.append(heatmap_cell(_for_seed(source, seed), temp, co2, seed, grid.steps_per_cell,
                                         params, horizon, cache_dir))
    shape = (len(grid.temp_values), len(grid.co2_values))
    matrix = np.zeros(shape)
    train_matrix = None if isinstance(source, (PolicyParams, dict)) else np.zeros(shape)
    for i, temp in enumerate(grid.temp_values):
        for j, co2 in enumerate(grid.co2_values):
            cell = [r for r in rows if r["temp"] == temp and r["co2"] == co2]
            matrix[i, j] = np.mean([r["eval_mean_reward"] for r in cell])
            if train_matrix is not None:
                train_matrix[i, j] = np.mean([r["train_mean_reward"] for r in cell])
    base = None
    if baseline:
        base = float(np.mean([heatmap_cell(_for_seed(source, s), None, None, s, grid.steps_per_cell, params,
                                           horizon, cache_dir)["eval_mean_reward"] for s in grid.seeds]))
    meta = {"steps_per_cell": grid.steps_per_cell, "seeds": list(grid.seeds), "label": label,
            "mode": "train" if train_matrix is not None else "evaluate"}
    if isinstance(source, RunConfig):
        meta["p"] = source.p
        meta["method"] = source.mode
    result = HeatmapResult(grid.temp_values, grid.co2_values, matrix, train_matrix, rows, meta, base)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        name = f"heatmap{('_' + _slug(label)) if label else ''}"
        write_csv(d / f"{name}.csv", "heatmap", rows)
        emit_plot(d / f"{name}.csv", "heatmap", d / f"{name}.svg")
        (d / f"{name}_meta.json").write_text(json.dumps(
            dict(meta, grid=grid.to_dict(), baseline=base), indent=2, sort_keys=True))
    return result


def _for_seed(source, seed):
    if isinstance(source, dict):
        if seed not in source:
            raise ConfigError(f"no policy for seed {seed}")
        return source[seed]
    return source


# --- exception tests ---------------------------------------------------------------

def run_exception_tests(policies: dict, seeds=None, params=None, eval_seeds=(9001, 9002, 9003),
                        horizon: int = DEFAULT_HORIZON, out_dir=None) -> list:
    """Table-shaped fresh weight and retention rate per condition and policy.

    ``policies`` maps p (1.0 and 0.8) to a policy or a ``{seed: policy}`` dict.
    Each row averages over the policy seeds and weather seeds. A control row
    (no exception) is added per policy; its retention is 1 by construction.
    """
    params = params or param_set("held_out")
    rows = []
    for p in sorted(policies, reverse=True):
        pols = policies[p] if isinstance(policies[p], dict) else {0: policies[p]}
        if seeds is not None:
            pols = {s: pols[s] for s in seeds}
        conditions = dict(EXCEPTION_CONDITIONS, control="none")
        for name, exc in conditions.items():
            fresh, retention = [], []
            for policy in pols.values():
                pol = lambda obs, policy=policy: act(policy, obs, "deterministic")
                for ws in eval_seeds:
                    ref = rollout_episode(pol, horizon=horizon, seed=ws, params=params)
                    res = ref if exc == "none" else rollout_episode(
                        pol, horizon=horizon, seed=ws, params=params,
                        perturb=PerturbationSpec(exception=exc, seed=ws), reference=ref)
                    fresh.append(res.metrics["fresh_weight"])
                    retention.append(res.metrics["retention_rate"])
            paper = PAPER_EXCEPTION_TABLE.get((name, float(p)), (None, None))
            rows.append({"condition": name, "p": float(p), "fresh_weight": float(np.mean(fresh)),
                         "retention_rate": float(np.mean(retention)),
                         "paper_fresh_weight": paper[0],
                         "paper_retention_rate": None if paper[1] is None else paper[1] / 100.0})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "exceptions.csv", "exceptions", rows)
    return rows


# --- p sweep -----------------------------------------------------------------------

def sweep_rows(runs: dict, p_values, seeds, params=None, eval_seeds=(9001, 9002, 9003),
               horizon: int = DEFAULT_HORIZON, environments: dict | None = None) -> list:
    """Net profit rows for trained runs keyed ``(f"p={p:g}", seed)``."""
    params = params or param_set("held_out")
    environments = DISTURBED_ENVIRONMENTS if environments is None else environments
    rows = []
    for p in p_values:
        for seed in seeds:
            run = runs.get((sweep_label(p), int(seed)))
            if run is None or not run.ok:
                log.warning("sweep: no run for p=%g seed=%s", p, seed)
                continue
            std = mean_return(run.policy, params, eval_seeds, None, horizon)
            rows.append({"p": float(p), "environment": "standard", "seed": int(seed), "net_profit": std})
            dist = []
            for env, (t, c) in environments.items():
                v = mean_return(run.policy, params, eval_seeds,
                                PerturbationSpec(temp_bias_setpoint=t, co2_bias_setpoint=c), horizon)
                dist.append(v)
                rows.append({"p": float(p), "environment": env, "seed": int(seed), "net_profit": v})
            rows.append({"p": float(p), "environment": "disturbed_mean", "seed": int(seed),
                         "net_profit": float(np.mean(dist))})
    return rows


def sweep_label(p: float) -> str:
    return f"p={float(p):.1f}"


def sweep_configs(base: RunConfig, p_values) -> dict:
    for p in p_values:
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"p must lie in (0, 1], got {p}")
    return {sweep_label(p): base.replace(mode="mbrl", p=float(p)) for p in p_values}


def run_p_sweep(base: RunConfig, p_values=SWEEP_P, seeds=(0, 1, 2, 3, 4), out_dir=None, cache_dir=None,
                runs: dict | None = None, environments: dict | None = None) -> dict:
    """Train one policy per (p, seed) in the standard environment and score it
    in the standard and the disturbed environments.

    Returns ``rows`` (CSV schema p, environment, seed, net_profit), ``summary``
    (per p: mean standard and mean disturbed net profit) and ``runs``.
    """
    runs = train_runs(sweep_configs(base, p_values), seeds, out_dir, cache_dir, runs)
    params = param_set(base.eval_params)
    rows = sweep_rows(runs, p_values, seeds, params, base.eval_seeds, base.horizon, environments)
    summary = {}
    for p in p_values:
        std = [r["net_profit"] for r in rows if r["p"] == float(p) and r["environment"] == "standard"]
        dist = [r["net_profit"] for r in rows if r["p"] == float(p) and r["environment"] == "disturbed_mean"]
        summary[float(p)] = {"standard": float(np.mean(std)) if std else None,
                             "disturbed": float(np.mean(dist)) if dist else None}
    out = {"rows": rows, "summary": summary, "runs": runs}
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "sweep.csv", "box", rows)
        out["csv"] = d / "sweep.csv"
        out["svg"] = emit_plot(d / "sweep.csv", "box", d / "sweep.svg")
    return out
