"""The compiled day kernel and its pure-Python twin must agree bit for bit."""
import numpy as np
import pytest

from greenrl import _kernel_layout as layout
from greenrl import kernels, simulator
from greenrl.simulator import EXCEPTIONS, GreenhouseParams, PerturbationSpec, rollout_episode, scripted_action

compiled = pytest.mark.skipif(kernels.compiled_advance_day is None, reason="compiled kernel not built")


def test_layout_counts():
    assert len(layout.PARAM_NAMES) == layout.N_PARAMS == 45
    assert layout.N_STATE == 9
    assert layout.N_DAILY == 10
    assert layout.N_HOURLY == 4
    assert GreenhouseParams().kernel_vector().shape == (45,)


@compiled
def test_compiled_layout_matches():
    from greenrl import _simkernel
    assert _simkernel.PARAM_COUNT == layout.N_PARAMS
    assert _simkernel.STATE_COUNT == layout.N_STATE
    assert _simkernel.DAILY_COUNT == layout.N_DAILY


def _both(calls):
    def advance(state, p, *args):
        hourly, daily = args[-2], args[-1]
        s_py = state.copy()
        h_py, d_py = hourly.copy(), daily.copy()
        kernels.python_advance_day(s_py, p, *args[:-2], h_py, d_py)
        kernels.compiled_advance_day(state, p, *args)
        calls.append((np.array_equal(s_py, state), np.array_equal(h_py, hourly), np.array_equal(d_py, daily)))
    return advance


@compiled
@pytest.mark.parametrize("exception", EXCEPTIONS)
def test_bit_identical_over_episodes(monkeypatch, exception):
    calls = []
    monkeypatch.setattr(simulator.kernels, "advance_day", _both(calls))
    rng = np.random.default_rng(3)
    for params in (GreenhouseParams(), GreenhouseParams.held_out()):
        perturb = PerturbationSpec(temp_bias_setpoint=27.5, co2_bias_setpoint=650.0, exception=exception)
        rollout_episode(lambda o: scripted_action(o, rng, 0.5), horizon=60, seed=11, perturb=perturb,
                        params=params)
    assert len(calls) > 100
    assert all(all(c) for c in calls)


@compiled
def test_bit_identical_on_random_inputs():
    rng = np.random.default_rng(0)
    p = GreenhouseParams().kernel_vector()
    for _ in range(50):
        state = np.abs(rng.normal(0.5, 0.5, layout.N_STATE))
        state[layout.S["day"]] = rng.integers(0, 120)
        state[layout.S["air_temp"]] = rng.uniform(5, 35)
        state[layout.S["air_co2"]] = rng.uniform(400, 1000)
        args = [rng.uniform(13, 32, 24), rng.uniform(400, 1000, 24), rng.uniform(0, 30, 24),
                rng.uniform(0, 900, 24), rng.random(24), rng.random(24), rng.uniform(-5, 30, 24),
                rng.uniform(30, 100, 24), np.where(rng.random(24) < 0.2, rng.uniform(-2, 40, 24), np.nan),
                np.where(rng.random(24) < 0.2, 90.0, np.nan)]
        outs = []
        for fn in (kernels.python_advance_day, kernels.compiled_advance_day):
            s = state.copy()
            h, d = np.zeros((layout.N_HOURLY, 24)), np.zeros(layout.N_DAILY)
            fn(s, p, *args, h, d)
            outs.append((s, h, d))
        for a, b in zip(*outs):
            assert np.array_equal(a, b)


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
