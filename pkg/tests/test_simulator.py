import csv
import json

import numpy as np
import pytest

from greenrl.simulator import (IDX, NEUTRAL_ACTION, CropState, EconomicParams, GreenhouseEnv,
                               GreenhouseParams, PerturbationSpec, SimulationError, daily_costs,
                               generate_weather, net_profit, rollout_episode, scripted_action, step,
                               window_fraction, write_metrics_csv, write_trajectory_jsonl)
from greenrl.spaces import ACTION_SPACE, OBSERVATION_SPACE, within_bounds


def scripted(seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    return lambda obs: scripted_action(obs, rng, noise)


def test_weather_is_deterministic_and_bounded():
    a, b = generate_weather(3, 10), generate_weather(3, 10)
    assert np.array_equal(a.stacked(), b.stacked())
    assert not np.array_equal(a.stacked(), generate_weather(4, 10).stacked())
    for day in range(0, 120, 7):
        w = generate_weather(1, day)
        assert w.solar_radiation[0] == 0.0 and w.solar_radiation[23] == 0.0
        assert np.all(w.solar_radiation >= 0) and w.solar_radiation.max() > 0
        assert np.all((w.outside_humidity >= 0) & (w.outside_humidity <= 100))
    with pytest.raises(ValueError):
        generate_weather(0, 400)


def test_window_fraction():
    assert window_fraction(6.0, 16.0).sum() == pytest.approx(10.0)
    assert window_fraction(6.5, 8.0)[6] == pytest.approx(0.5)
    assert not np.any(window_fraction(10.0, 10.0))
    assert not np.any(window_fraction(12.0, 4.0))


@pytest.mark.parametrize("gains,costs,expected", [(10.0, 4.0, 6.0), (0.0, 0.0, 0.0), (2 * 1.5, 1.0, 2.0)])
def test_net_profit_examples(gains, costs, expected):
    assert net_profit(gains, costs) == pytest.approx(expected)


def test_zero_consumption_day_costs_maintenance_only():
    econ = EconomicParams()
    obs = (OBSERVATION_SPACE.lower + OBSERVATION_SPACE.upper) / 2
    obs[IDX["greenhouse_air_temperature"]] = OBSERVATION_SPACE.lower[IDX["greenhouse_air_temperature"]]
    obs[IDX["greenhouse_air_co2"]] = 400.0
    obs[IDX["irrigation_per_day"]] = 0.0
    obs[IDX["outside_temperature"]] = 30.0
    action = NEUTRAL_ACTION.copy()   # lamps off
    assert daily_costs(action, obs, GreenhouseParams(), econ) == pytest.approx(-net_profit(0.0, econ.maintenance_cost))


def test_dark_day_without_lamps_adds_no_biomass():
    params = GreenhouseParams()
    state = CropState.initial(params)
    w = generate_weather(0, 1)
    perturb = PerturbationSpec(exception="Iglob_zero", exception_start=1, exception_days=1)
    nxt, _, _ = step(state, NEUTRAL_ACTION, w, perturb, params)
    assert nxt.biomass_dry - state.biomass_dry <= 1e-9


def test_identity_perturbation_and_determinism():
    base = rollout_episode(scripted(), horizon=30, seed=5)
    again = rollout_episode(scripted(), horizon=30, seed=5, perturb=PerturbationSpec())
    assert base.episodic_return == again.episodic_return
    assert [r["observation"] for r in base.trajectory] == [r["observation"] for r in again.trajectory]
    assert base.metrics["retention_rate"] == 1.0


def test_hot_exception_does_not_raise_fresh_weight():
    kw = dict(horizon=70, seed=2)
    ref = rollout_episode(scripted(), **kw)
    hot = rollout_episode(scripted(), perturb=PerturbationSpec(exception="AirT_high"), **kw)
    assert hot.metrics["fresh_weight"] <= ref.metrics["fresh_weight"]
    assert hot.metrics["retention_rate"] <= 1.0


def test_episode_invariants():
    res = rollout_episode(scripted(1, 0.5), horizon=60, seed=9)
    obs = np.array([r["observation"] for r in res.trajectory])
    assert all(within_bounds(o, OBSERVATION_SPACE) for o in obs)
    for name in ("harvest_fresh_weight", "harvest_dry_weight", "planting_days"):
        assert np.all(np.diff(obs[:, IDX[name]][:, 0]) >= 0)
    assert [r["day"] for r in res.trajectory] == list(range(1, 61))
    assert res.episodic_return == pytest.approx(sum(r["reward"] for r in res.trajectory))


def test_step_rejects_terminal_and_bad_actions():
    params = GreenhouseParams()
    state = CropState.initial(params)
    w = generate_weather(0, 1)
    with pytest.raises(ValueError):
        step(state, np.zeros(51), w)
    bad = NEUTRAL_ACTION.copy()
    bad[0] = 40.0
    with pytest.raises(ValueError):
        step(state, bad, w)
    env = GreenhouseEnv(horizon=2)
    with pytest.raises(SimulationError):
        env.step(NEUTRAL_ACTION)
    env.reset()
    env.step(NEUTRAL_ACTION)
    _, _, done = env.step(NEUTRAL_ACTION)
    assert done
    with pytest.raises(SimulationError):
        env.step(NEUTRAL_ACTION)


def test_env_snapshot_restores_trajectory():
    env = GreenhouseEnv(seed=4, horizon=10)
    env.reset()
    env.step(NEUTRAL_ACTION)
    snap = json.loads(json.dumps(env.get_state()))
    a = [env.step(NEUTRAL_ACTION)[1] for _ in range(3)]
    env.set_state(snap)
    assert [env.step(NEUTRAL_ACTION)[1] for _ in range(3)] == a


def test_perturbation_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(temp_bias_setpoint=40.0)
    with pytest.raises(ValueError):
        PerturbationSpec(exception="hail")
    with pytest.raises(ValueError):
        EconomicParams(fruit_price=-1.0)
    assert PerturbationSpec().is_identity
    assert PerturbationSpec(26.0, 500.0).tag == "T26+CO2_500"


def test_scripted_action_in_bounds():
    env = GreenhouseEnv(seed=0, horizon=5)
    obs = env.reset()
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert within_bounds(scripted_action(obs, rng, 1.0), ACTION_SPACE)


def test_output_writers(tmp_path):
    res = rollout_episode(scripted(), horizon=3, seed=0)
    write_trajectory_jsonl(tmp_path / "t.jsonl", res.trajectory)
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"day", "action", "observation", "reward", "perturb"}
    assert len(rec["observation"]) == 275
    write_metrics_csv(tmp_path / "m.csv", [{"seed": 0, **res.metrics}])
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert float(rows[0]["retention_rate"]) == 1.0
    with pytest.raises(ValueError):
        write_metrics_csv(tmp_path / "e.csv", [])
