import numpy as np
import pytest

from seedstab.errors import InputError
from seedstab.swa import SwaConfig, SwaState, select_swa_lr, swa_update, train_swa
from seedstab.textmodel import ModelWeights


def test_running_average_equals_mean(rng):
    snaps = [ModelWeights.initialize(5, 2, 3, rng) for _ in range(4)]
    state = SwaState()
    for s in snaps:
        state = swa_update(state, s)
    assert state.n_averaged == 4
    np.testing.assert_allclose(state.avg_weights.flat, np.mean([s.flat for s in snaps], axis=0), atol=1e-12)


def test_first_update_copies(rng):
    w = ModelWeights.initialize(5, 2, 3, rng)
    state = swa_update(SwaState(), w)
    w.flat[:] = 0
    assert state.avg_weights.flat.any()


def test_shape_mismatch_rejected(rng):
    state = swa_update(SwaState(), ModelWeights.initialize(5, 2, 3, rng))
    with pytest.raises(InputError):
        swa_update(state, ModelWeights.initialize(6, 2, 3, rng))


def test_cutoff_validation():
    with pytest.raises(InputError):
        SwaConfig(cutoff_epoch=5).validate(5)
    with pytest.raises(InputError):
        SwaConfig(cutoff_epoch=0).validate(5)


def test_train_swa_uses_post_cutoff_snapshots(tiny_train, tiny_config):
    tr, dv = tiny_train
    res = train_swa(tiny_config, SwaConfig(cutoff_epoch=3), tr, dv, 30, constant_lr=0.01)
    assert res.n_averaged == 2
    for got, want in zip(res.snapshots, res.run.snapshots[3:]):
        assert np.array_equal(got.flat, want.flat)
    steps = tiny_config.resolved(len(tr)).steps_per_epoch(len(tr))
    assert set(res.run.lr_trace[3 * steps :]) == {0.01}


def test_select_lr_prefers_accuracy_then_smaller_lr():
    assert select_swa_lr({0.1: 0.8, 0.2: 0.9}) == 0.2
    assert select_swa_lr({0.3: 0.9, 0.2: 0.9}) == 0.2
    with pytest.raises(InputError):
        select_swa_lr({})
