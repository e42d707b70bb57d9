import json
import math

import numpy as np
import pytest

from greenrl.spaces import OBSERVATION_SPACE, within_bounds
from greenrl.trainer import (ConfigError, EpochError, ReplayBuffer, RunConfig, RunState, collect_real_step,
                             desk_config, init_state, load_run, param_set, rollout_and_fill, run_epoch,
                             save_run, train)

TINY = dict(N=3, N_epoch=3, N_train=1, T=100, rollout_length=5, env_steps_per_epoch=6, model_steps=3,
            policy_updates_per_epoch=4, batch_size=16, policy_hidden=(16, 16), model_hidden=(16,),
            horizon=10, pretrain_episodes=2, pretrain_steps=20, eval_every=2, eval_seeds=(1,),
            real_capacity=500, sim_capacity=500)


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    return tmp_path_factory.mktemp("pretrained")


def tiny(**changes):
    return RunConfig(**{**TINY, **changes})


def _rows(buf, n, start=0):
    s = np.full((n, 275), 1.0)
    return s, np.zeros((n, 52)), np.arange(start, start + n, dtype=float), s, np.zeros(n)


def test_buffer_fifo_and_growth():
    buf = ReplayBuffer(3, "real")
    buf.add(*_rows(buf, 1))
    assert len(buf) == 1
    buf.add(*_rows(buf, 2, 1))
    buf.add(*_rows(buf, 1, 3))
    assert len(buf) == 3
    assert list(buf.rewards()) == [1.0, 2.0, 3.0]
    big = ReplayBuffer(5000, "sim")
    for k in range(3):
        big.add(*_rows(big, 1500, 1500 * k))
    assert len(big) == 4500 and big.rewards()[0] == 0.0 and big.rewards()[-1] == 4499.0
    big.add(*_rows(big, 1000, 4500))
    assert len(big) == 5000 and big.rewards()[0] == 500.0


def test_buffer_tags_and_keep():
    buf = ReplayBuffer(10, "real")
    with pytest.raises(ValueError):
        buf.add(*_rows(buf, 2), tag=1)
    with pytest.raises(ValueError):
        ReplayBuffer(10, "imagined")
    buf.add(*_rows(buf, 6))
    buf.keep(buf.rewards() <= 2)
    assert list(buf.rewards()) == [0.0, 1.0, 2.0]
    assert buf.audit()


def test_collect_real_step_and_fill(cache):
    state = init_state(tiny(p=0.8), cache)
    assert len(state.real) == 0
    tr = collect_real_step(state)
    assert len(state.real) == 1 and state.real.r[0] == tr.r
    with pytest.raises(ValueError):
        rollout_and_fill(init_state(tiny(), cache), 10, 0.8)
    for _ in range(9):
        collect_real_step(state)
    out = rollout_and_fill(state, 100, 0.8)
    assert out["generated"] == 100 and out["retained"] == 80
    assert out["reward_after"] <= out["reward_before"]
    out = rollout_and_fill(state, 100, 1.0)
    assert out["retained"] == 100
    assert len(state.sim) == 180 and state.sim.audit() and state.real.audit()
    sim = state.sim.storage()
    assert all(within_bounds(s, OBSERVATION_SPACE) for s in sim.s2)


def test_epoch_order_and_dropout_counts(cache):
    state = init_state(tiny(p=0.8, N_train=2), cache)
    rep = run_epoch(state)
    assert rep.events == ["env", "mask", "model_train", "rollout", "model_train", "rollout",
                          "real_dropout", "policy_update"]
    assert rep.real_retained == math.ceil(0.8 * rep.real_before)
    assert rep.sim_retained == 2 * 80 and rep.sim_dropped == 40
    assert rep.sim_reward_after <= rep.sim_reward_before
    rep = run_epoch(state)
    assert rep.events[-1] == "evaluate" and rep.eval_return is not None


def test_zero_model_rounds_still_update_policy(cache):
    state = init_state(tiny(N_train=0, p=1.0), cache)
    before = state.policy.flat().copy()
    rep = run_epoch(state)
    assert rep.events == ["env", "policy_update"]
    assert len(state.sim) == 0
    assert not np.array_equal(state.policy.flat(), before)


def test_sac_mode_and_p_one(cache):
    rep = run_epoch(init_state(tiny(mode="sac"), cache))
    assert rep.events == ["env", "policy_update"] and rep.sim_size == 0
    rep = run_epoch(init_state(tiny(p=1.0), cache))
    assert rep.sim_dropped == 0 and rep.real_dropped == 0


def test_epoch_error_carries_phase(cache):
    state = init_state(tiny(), cache)
    state.ensemble = None
    with pytest.raises(EpochError) as info:
        run_epoch(state)
    assert info.value.report["phase"] == "mask"
    assert info.value.report["events"] == ["env"]


def test_determinism_and_artifacts(tmp_path, cache):
    a = train(tiny(), tmp_path / "a", cache_dir=cache)
    b = train(tiny(), tmp_path / "b", cache_dir=cache)
    log_a = (tmp_path / "a" / "epochs.jsonl").read_bytes()
    assert log_a == (tmp_path / "b" / "epochs.jsonl").read_bytes()
    assert np.array_equal(a.policy.flat(), b.policy.flat())
    for name in ("config.json", "timing.json", "checkpoint/manifest.json", "checkpoint/policy/policy.npz",
                 "checkpoint/ensemble/ensemble.npz", "checkpoint/buffers/buffers.npz", "checkpoint/state.json"):
        assert (tmp_path / "a" / name).exists(), name
    assert len(log_a.splitlines()) == 3
    assert a.final_eval is not None


def test_resume_matches_uninterrupted(tmp_path, cache):
    full = train(tiny(), tmp_path / "full", cache_dir=cache)
    part = train(tiny(), tmp_path / "part", cache_dir=cache, stop_after=1)
    assert len(part.reports) == 1
    done = train(tiny(), tmp_path / "part", cache_dir=cache, resume=True)
    assert (tmp_path / "part" / "epochs.jsonl").read_bytes() == (tmp_path / "full" / "epochs.jsonl").read_bytes()
    assert np.array_equal(done.policy.flat(), full.policy.flat())
    with pytest.raises(ConfigError):
        train(tiny(seed=5), tmp_path / "part", cache_dir=cache, resume=True)


def test_save_load_state(tmp_path, cache):
    state = init_state(tiny(), cache)
    run_epoch(state)
    save_run(state, tmp_path / "ck")
    twin = load_run(tmp_path / "ck")
    assert twin.epoch == 1 and len(twin.real) == len(state.real)
    assert np.array_equal(twin.policy.flat(), state.policy.flat())
    r1, r2 = run_epoch(state), run_epoch(twin)
    assert r1.to_json() == r2.to_json()


def test_config_roundtrip_and_validation():
    cfg = desk_config(seed=3, p=0.9)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.env_steps_per_epoch == 120 and cfg.N_epoch == 200
    with pytest.raises(ConfigError):
        RunConfig(p=0.0)
    with pytest.raises(ConfigError):
        RunConfig(mode="ppo")
    with pytest.raises(ConfigError):
        RunConfig(temp_bias_setpoint=50.0)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        param_set("tropical")
    assert isinstance(RunState(tiny(mode="sac")), RunState)


def test_real_dropout_view_keeps_buffer(cache):
    state = init_state(tiny(p=0.8, drop_real_buffer=False), cache)
    rep = run_epoch(state)
    assert "real_dropout" in rep.events and len(state.real) == rep.real_before == rep.real_size
    assert rep.real_retained == math.ceil(0.8 * rep.real_before)
    assert len(state.real_view) == rep.real_retained
    assert state.real_view.r.max() <= np.sort(state.real.rewards())[rep.real_retained - 1]
