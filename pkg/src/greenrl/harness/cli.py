"""Command line entry point: ``greenrl <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.

The optional ``--config`` file is one YAML document with up to three
sections::

    run:         # RunConfig fields
      p: 0.8
      N_epoch: 100
    grid:        # ExperimentGrid fields
      temp_values: [25, 28, 31]
      co2_values: [400, 700, 1000]
      steps_per_cell: 1200
      seeds: [0, 1]
    experiment:  # seeds / p_values used by train --compare, exception-test and sweep
      seeds: [0, 1, 2, 3, 4]
      p_values: [1.0, 0.9, 0.8, 0.7, 0.6]
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from ..policy import PolicyParams, load_policy
from ..simulator import EXCEPTIONS, PerturbationSpec, write_metrics_csv, write_trajectory_jsonl
from ..trainer import ConfigError, RunConfig, desk_config, param_set, train
from . import experiments as ex
from .plotting import PLOT_KINDS, PlotError, emit_plot

log = logging.getLogger("greenrl")

SECTIONS = ("run", "grid", "experiment")
EXPERIMENT_KEYS = ("seeds", "p_values")


def load_config_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}; expected {list(SECTIONS)}")
    for k in SECTIONS:
        if not isinstance(doc.get(k) or {}, dict):
            raise ConfigError(f"{path}: section {k!r} must be a mapping")
    bad = set(doc.get("experiment") or {}) - set(EXPERIMENT_KEYS)
    if bad:
        raise ConfigError(f"{path}: unknown experiment key(s) {sorted(bad)}")
    return doc


def resolve(args) -> tuple:
    """(RunConfig, ExperimentGrid, experiment dict) from defaults, file and flags."""
    doc = load_config_file(args.config) if args.config else {}
    base = RunConfig() if args.paper_scale else desk_config()
    run = base.to_dict()
    run.update(doc.get("run") or {})
    if args.seed is not None:
        run["seed"] = args.seed
    try:
        cfg = RunConfig.from_dict(run)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    grid = ex.ExperimentGrid.paper() if args.paper_scale else ex.ExperimentGrid()
    if doc.get("grid"):
        merged = dict(grid.to_dict(), **doc["grid"])
        grid = ex.ExperimentGrid.from_dict(merged)
    exp = {"seeds": list(grid.seeds) if args.paper_scale else [0, 1, 2, 3, 4], "p_values": list(ex.SWEEP_P)}
    exp.update(doc.get("experiment") or {})
    return cfg, grid, exp


def load_run_policy(run_dir) -> tuple:
    """Policy and config stored in a training output directory."""
    ckpt = Path(run_dir) / "checkpoint"
    if not (ckpt / "config.json").exists():
        raise ConfigError(f"{run_dir}: no checkpoint found (expected {ckpt}/config.json)")
    cfg = RunConfig.from_dict(json.loads((ckpt / "config.json").read_text()))
    policy = PolicyParams(cfg.policy_config(), seed=cfg.seed)
    load_policy(ckpt / "policy" / "policy.npz", policy)
    return policy, cfg


def _out(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- subcommands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, _, exp = resolve(args)
    out = _out(args)
    if args.compare:
        res = ex.run_training_comparison(cfg, exp["seeds"], out, cache_dir=out / "cache")
        for method, eps in res["bands"].items():
            last = max(eps)
            mean, std, n = eps[last]
            print(f"{method}: epoch {last} return {mean:.3f} +/- {std:.3f} (n={n})")
        if res["partial"]:
            print(f"partial output; missing runs: {res['missing']}", file=sys.stderr)
            return 2
        return 0
    res = train(cfg, out_dir=out, resume=args.resume)
    final = res.final_eval
    print(f"trained {len(res.reports)} epochs; final evaluation return "
          f"{'n/a' if final is None else f'{final:.3f}'}; output in {out}")
    return 0


def cmd_evaluate(args) -> int:
    resolve(args)   # rejects a malformed --config early; the run directory holds the settings
    policy, run_cfg = load_run_policy(args.run_dir)
    params = param_set(args.params or run_cfg.eval_params)
    perturb = PerturbationSpec(temp_bias_setpoint=args.temp, co2_bias_setpoint=args.co2,
                               exception=args.exception)
    seeds = args.episodes or list(run_cfg.eval_seeds)
    results = ex.evaluate(policy, params, seeds, perturb, run_cfg.horizon)
    out = _out(args)
    rows = []
    for s, r in zip(seeds, results):
        rows.append({"weather_seed": s, "return": r.episodic_return, **r.metrics})
        write_trajectory_jsonl(out / f"trajectory_{s}.jsonl", r.trajectory)
    write_metrics_csv(out / "evaluation.csv", rows)
    mean = sum(r["return"] for r in rows) / len(rows)
    print(f"mean return {mean:.3f} over {len(rows)} episode(s) [{perturb.tag}]")
    return 0


def cmd_heatmap(args) -> int:
    cfg, grid, _ = resolve(args)
    out = _out(args)
    if args.run_dir:
        policy, run_cfg = load_run_policy(args.run_dir)
        res = ex.run_heatmap(policy, grid, param_set(run_cfg.eval_params), run_cfg.horizon, out, label=args.label)
    else:
        res = ex.run_heatmap(cfg, grid, out_dir=out, cache_dir=out / "cache", label=args.label)
    print(f"{res.matrix.shape[0]}x{res.matrix.shape[1]} cells; max {res.matrix.max():.4f}, "
          f"min {res.matrix.min():.4f}, unperturbed {res.baseline:.4f}")
    return 0


def cmd_exception_test(args) -> int:
    cfg, _, exp = resolve(args)
    out = _out(args)
    if args.run_dirs:
        policies = {}
        for item in args.run_dirs:
            policy, run_cfg = load_run_policy(item)
            policies.setdefault(run_cfg.p, {})[run_cfg.seed] = policy
    else:
        configs = {"p=1.0": cfg.replace(mode="mbrl", p=1.0), "p=0.8": cfg.replace(mode="mbrl", p=0.8)}
        runs = ex.train_runs(configs, exp["seeds"], out, out / "cache", strict=True)
        policies = {float(label[2:]): {s: r.policy for (lab, s), r in runs.items() if lab == label}
                    for label in configs}
    rows = ex.run_exception_tests(policies, params=param_set(cfg.eval_params), eval_seeds=cfg.eval_seeds,
                                  horizon=cfg.horizon, out_dir=out)
    for r in rows:
        print(f"{r['condition']:>12s} p={r['p']:.1f} fresh {r['fresh_weight']:.3f} "
              f"retention {100 * r['retention_rate']:.2f}%")
    return 0


def cmd_sweep(args) -> int:
    cfg, _, exp = resolve(args)
    out = _out(args)
    res = ex.run_p_sweep(cfg, exp["p_values"], exp["seeds"], out, out / "cache")
    for p, s in res["summary"].items():
        print(f"p={p:.1f} standard {s['standard']:.3f} disturbed {s['disturbed']:.3f}")
    return 0


def cmd_plot(args) -> int:
    if not Path(args.csv).is_file():
        raise PlotError(f"{args.csv}: no such CSV file")
    opts = {"reference": args.reference} if args.reference is not None else {}
    path = emit_plot(args.csv, args.kind, args.output, **opts)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with run/grid/experiment sections")
    common.add_argument("--seed", type=int, help="run seed (overrides the config file)")
    common.add_argument("--out-dir", default="greenrl-out", help="output directory")
    common.add_argument("--paper-scale", action="store_true",
                        help="reference budgets (500 epochs, 7x7 grid, 500,000 steps per cell)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="greenrl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one run, or compare methods")
    p.add_argument("--compare", action="store_true", help="train p=0.8, p=1.0 and SAC over the experiment seeds")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a trained policy")
    p.add_argument("--run-dir", required=True, help="output directory of a training run")
    p.add_argument("--params", choices=("default", "held_out", "prior"))
    p.add_argument("--temp", type=float, help="temperature setpoint override (degC)")
    p.add_argument("--co2", type=float, help="CO2 setpoint override (ppm)")
    p.add_argument("--exception", choices=EXCEPTIONS, default="none")
    p.add_argument("--episodes", type=int, nargs="+", help="weather seeds")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("heatmap", parents=[common], help="perturbation heat map")
    p.add_argument("--run-dir", help="evaluate this trained policy instead of training per cell")
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("exception-test", parents=[common], help="fresh weight and retention under anomalies")
    p.add_argument("--run-dirs", nargs="+", help="trained runs (p read from each config); trains when omitted")
    p.set_defaults(func=cmd_exception_test)

    p = sub.add_parser("sweep", parents=[common], help="net profit over dropout levels p")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", parents=[common], help="render a CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--output")
    p.add_argument("--reference", type=float, help="reference line for curve plots")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; bad usage is a configuration error here
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
