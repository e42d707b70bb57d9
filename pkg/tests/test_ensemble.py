import math

import numpy as np
import pytest
from scipy import stats

from greenrl.ensemble import (BootstrapMask, _norm_input, EnsembleConfig, ModelEnsemble, ProbabilisticModel, TargetScaler,
                              build_masks, gaussian_nll, load_ensemble, nll_loss, predict, restrict,
                              save_ensemble, select_model, train_ensemble)
from greenrl.simulator import IDX
from greenrl.spaces import ACT_DIM, OBSERVATION_SPACE, within_bounds

from gradcheck import random_actions, random_states

SMALL = EnsembleConfig(N=5, hidden=(16,), dtype="float64")


def test_nll_identities():
    t = np.array([[0.3, -1.2, 4.0]])
    assert gaussian_nll(t, np.zeros(3), t) == 0.0
    assert gaussian_nll(t, np.ones(3), t) == pytest.approx(3.0, abs=1e-12)   # sigma = e I
    assert gaussian_nll([1.0], [0.0], [0.0]) == 1.0
    with pytest.raises(ValueError):
        gaussian_nll(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))


def test_nll_minimised_at_target():
    rng = np.random.default_rng(0)
    t, lv = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    best = gaussian_nll(t, lv, t)
    for _ in range(20):
        assert gaussian_nll(t + rng.normal(0, 0.1, t.shape), lv, t) > best


def test_nll_loss_sums_over_batch():
    model = ProbabilisticModel(OBSERVATION_SPACE.total_dim, ACT_DIM, (8,), seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    s, a, s2 = random_states(rng, 3), random_actions(rng, 3), random_states(rng, 3)
    total = nll_loss(model, s, a, s2)
    assert total == pytest.approx(sum(nll_loss(model, s[i], a[i], s2[i]) for i in range(3)))


def test_masks():
    m = build_masks(50, 3, 1.0, seed=0)
    assert m.h.all()
    assert np.array_equal(build_masks(100, 5, 0.8, 7).h, build_masks(100, 5, 0.8, 7).h)
    rows = build_masks(1000, 5, 0.5, 3).h.sum(axis=1).astype(int)
    assert np.all(np.abs(rows - 500) <= 3 * math.sqrt(250))
    with pytest.raises(ValueError):
        build_masks(10, 2, 0.0)
    with pytest.raises(ValueError):
        build_masks(10, 2, 1.2)


def _linear_data(rng, n=400):
    A, B = rng.normal(0, 0.3, (3, 3)), rng.normal(0, 0.3, (3, 2))
    s, a = rng.normal(size=(n, 3)), rng.normal(size=(n, 2))
    return np.hstack([s, a]), s @ A.T + a @ B.T


def test_train_zero_steps_unchanged_and_linear_fit():
    rng = np.random.default_rng(0)
    x, y = _linear_data(rng)
    ens = ModelEnsemble(EnsembleConfig(N=1, hidden=(16,), dtype="float64", lr=3e-3), seed=0,
                        state_dim=3, action_dim=2)
    before = ens.members[0].net.params.copy()
    mask = build_masks(len(x), 1, 1.0)
    train_ensemble(ens, x, y, mask, 0, rng)
    assert np.array_equal(ens.members[0].net.params, before)
    rep = train_ensemble(ens, x, y, mask, 500, rng)
    assert rep["nll_end"][0] < rep["nll_start"][0]


def test_masks_shape_members_and_empty_subset():
    rng = np.random.default_rng(1)
    x, y = _linear_data(rng, 100)
    cfg = EnsembleConfig(N=2, hidden=(8,), dtype="float64")
    h = np.zeros((2, 100), np.uint8)
    h[0, :50] = 1
    a = ModelEnsemble(cfg, seed=0, state_dim=3, action_dim=2)
    b = ModelEnsemble(cfg, seed=0, state_dim=3, action_dim=2)
    h2 = h.copy()
    h2[0] = 0
    h2[0, 50:] = 1
    rep = train_ensemble(a, x, y, BootstrapMask(h, 0.5), 20, np.random.default_rng(0))
    train_ensemble(b, x, y, BootstrapMask(h2, 0.5), 20, np.random.default_rng(0))
    assert rep["skipped"] == [1]
    assert not np.array_equal(a.members[0].net.params, b.members[0].net.params)
    assert np.array_equal(a.members[1].net.params, b.members[1].net.params)


def test_select_model():
    ens = ModelEnsemble(SMALL, seed=0)
    assert np.allclose(ens.selector, 0.2)
    draws = select_model(ens, np.random.default_rng(0), size=10_000)
    assert stats.chisquare(np.bincount(draws, minlength=5)).pvalue > 0.01
    deg = ModelEnsemble(SMALL, seed=0, selector=[1, 0, 0, 0, 0])
    assert np.all(select_model(deg, np.random.default_rng(0), size=500) == 0)
    with pytest.raises(ValueError):
        ModelEnsemble(SMALL, seed=0, selector=[0.5, 0.5])


def test_predict_in_bounds_and_identities():
    ens = ModelEnsemble(SMALL, seed=0)
    ens.scaler = TargetScaler(np.zeros(275), np.full(275, 5.0))   # wide: forces clipping
    rng = np.random.default_rng(0)
    s, a = random_states(rng, 500), random_actions(rng, 500)
    out = predict(ens, s, a, rng)
    assert all(within_bounds(o, OBSERVATION_SPACE) for o in out)
    assert np.array_equal(out[:, :ACT_DIM], a)
    pd = IDX["planting_days"]
    assert np.array_equal(out[:, pd], np.minimum(s[:, pd] + 1, OBSERVATION_SPACE.upper[pd]))
    assert np.all(out[:, IDX["harvest_fresh_weight"]] >= s[:, IDX["harvest_fresh_weight"]])
    with pytest.raises(ValueError):
        predict(ens, s, a, rng, mode="median")


def test_restrict_is_projection():
    rng = np.random.default_rng(2)
    s, a = random_states(rng, 20), random_actions(rng, 20)
    raw = rng.normal(0, 1e4, s.shape)
    once = restrict(s, a, raw)
    assert np.array_equal(restrict(s, a, once), once)


def test_mean_equals_sample_at_variance_floor():
    cfg = EnsembleConfig(N=2, hidden=(8,), dtype="float64", logvar_bounds=(-20.0, -20.0))
    ens = ModelEnsemble(cfg, seed=3)
    ens.scaler = TargetScaler(np.zeros(275), np.full(275, 1e-2))
    rng = np.random.default_rng(0)
    s, a = random_states(rng, 10), random_actions(rng, 10)
    mean = predict(ens, s, a, mode="mean", member=0)
    sample = predict(ens, s, a, rng, member=0)
    assert np.all(np.abs(mean - sample) <= 1e-5 * OBSERVATION_SPACE.span)


def test_sample_mean_clt():
    ens = ModelEnsemble(SMALL, seed=4)
    ens.scaler = TargetScaler(np.zeros(275), np.full(275, 1e-3))
    rng = np.random.default_rng(5)
    s = (OBSERVATION_SPACE.lower + OBSERVATION_SPACE.upper) / 2
    a = random_actions(rng, 1)[0]
    n = 10_000
    draws = predict(ens, np.tile(s, (n, 1)), np.tile(a, (n, 1)), rng, member=1)
    mu = predict(ens, s, a, mode="mean", member=1)
    _, logvar, _ = ens.members[1].heads(_norm_input(s[None], a[None], ens.dtype))
    sd = 0.5 * OBSERVATION_SPACE.span * 1e-3 * np.exp(0.5 * logvar[0])
    free = np.ones(275, bool)
    free[:ACT_DIM] = False
    free[IDX["planting_days"]] = False
    free[IDX["harvest_fresh_weight"]] = free[IDX["harvest_dry_weight"]] = False
    free &= (mu - 6 * sd > OBSERVATION_SPACE.lower) & (mu + 6 * sd < OBSERVATION_SPACE.upper)
    assert free.sum() > 150
    err = np.abs(draws.mean(axis=0) - mu)[free]
    assert np.all(err <= 4 * sd[free] / math.sqrt(n))


def test_checkpoint_roundtrip(tmp_path):
    ens = ModelEnsemble(SMALL, seed=0)
    ens.scaler = TargetScaler(np.full(275, 0.1), np.full(275, 2.0))
    save_ensemble(tmp_path / "e.npz", ens)
    twin = ModelEnsemble(SMALL, seed=9)
    load_ensemble(tmp_path / "e.npz", twin)
    for m, t in zip(ens.members, twin.members):
        assert np.array_equal(m.net.params, t.net.params)
    assert np.array_equal(twin.scaler.std, ens.scaler.std)
    with pytest.raises(ValueError):
        load_ensemble(tmp_path / "e.npz", ModelEnsemble(EnsembleConfig(N=3, hidden=(16,)), seed=0))
