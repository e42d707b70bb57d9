"""Compiled vs pure-Python simulator day kernel.

Records the kernel inputs of real episodes, then times both kernels on the
same inputs and checks that their outputs agree bit for bit. Also times whole
episodes with each kernel plugged into the simulator.

    python3 benchmarks/bench_kernels.py --episodes 3 --repeat 5
"""
import argparse
import json
import time

import numpy as np

from greenrl import kernels, simulator
from greenrl.simulator import GreenhouseParams, rollout_episode, scripted_action


def record_calls(episodes: int, horizon: int) -> list:
    calls = []
    original = simulator.kernels.advance_day

    def spy(state, p, *args):
        calls.append((state.copy(), p, *[np.array(a, copy=True) for a in args]))
        original(state, p, *args)

    simulator.kernels.advance_day = spy
    try:
        rng = np.random.default_rng(0)
        for k in range(episodes):
            rollout_episode(lambda o: scripted_action(o, rng, 0.3), horizon=horizon, seed=k,
                            params=GreenhouseParams())
    finally:
        simulator.kernels.advance_day = original
    return calls


def time_kernel(fn, calls, repeat: int) -> tuple:
    best = float("inf")
    outputs = None
    for _ in range(repeat):
        work = [(c[0].copy(), c[1], *c[2:-2], c[-2].copy(), c[-1].copy()) for c in calls]
        t0 = time.perf_counter()
        for args in work:
            fn(*args)
        best = min(best, time.perf_counter() - t0)
        outputs = work
    return best, outputs


def time_episodes(fn, episodes: int, horizon: int, repeat: int) -> float:
    original = simulator.kernels.advance_day
    simulator.kernels.advance_day = fn
    best = float("inf")
    try:
        for _ in range(repeat):
            rng = np.random.default_rng(0)
            t0 = time.perf_counter()
            for k in range(episodes):
                rollout_episode(lambda o: scripted_action(o, rng, 0.3), horizon=horizon, seed=k)
            best = min(best, time.perf_counter() - t0)
    finally:
        simulator.kernels.advance_day = original
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--episodes", type=int, default=3)
    ap.add_argument("--horizon", type=int, default=120)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results to this file")
    args = ap.parse_args(argv)

    if kernels.compiled_advance_day is None:
        print("compiled kernel not available (not built, or GREENRL_PURE_PYTHON is set)")
        return 1
    calls = record_calls(args.episodes, args.horizon)
    t_py, out_py = time_kernel(kernels.python_advance_day, calls, args.repeat)
    t_c, out_c = time_kernel(kernels.compiled_advance_day, calls, args.repeat)
    identical = all(np.array_equal(x, y, equal_nan=True) for a, b in zip(out_py, out_c) for x, y in zip(a, b))
    ep_py = time_episodes(kernels.python_advance_day, args.episodes, args.horizon, args.repeat)
    ep_c = time_episodes(kernels.compiled_advance_day, args.episodes, args.horizon, args.repeat)

    days = len(calls)
    result = {
        "days": days,
        "kernel_python_us_per_day": 1e6 * t_py / days,
        "kernel_compiled_us_per_day": 1e6 * t_c / days,
        "kernel_speedup": t_py / t_c,
        "episode_python_s": ep_py / args.episodes,
        "episode_compiled_s": ep_c / args.episodes,
        "episode_speedup": ep_py / ep_c,
        "bit_identical": identical,
    }
    print(f"{days} simulated days, best of {args.repeat}")
    print(f"  kernel   python {result['kernel_python_us_per_day']:9.1f} us/day   "
          f"compiled {result['kernel_compiled_us_per_day']:7.1f} us/day   x{result['kernel_speedup']:.1f}")
    print(f"  episode  python {result['episode_python_s']:9.3f} s        "
          f"compiled {result['episode_compiled_s']:7.3f} s        x{result['episode_speedup']:.1f}")
    print(f"  outputs bit-identical: {identical}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(result, f, indent=2)
    return 0 if identical else 1


if __name__ == "__main__":
    raise SystemExit(main())
