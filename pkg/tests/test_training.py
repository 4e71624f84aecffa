import os

import numpy as np
import pytest

from panlab import models, training
from panlab import tensor as t
from panlab.exceptions import (
    ConfigurationError, DataError, FormatError, NumericError
)

from conftest import small_model_config


def _params(*arrays):
    return {"p%d" % i: t.Tensor(np.array(a, dtype=np.float32),
                                requires_grad=True)
            for i, a in enumerate(arrays)}


def _train_config(tmp_path=None, kind="SAN", **kwargs):
    values = dict(model=small_model_config(kind, num_blocks=2), epochs=2,
                  batch_size=8, learning_rate=1e-3, seed=5)
    if tmp_path is not None:
        values["checkpoint"] = str(tmp_path / "model.ckpt")
    values.update(kwargs)
    return training.TrainConfig(**values)


# ======== ADAM ========

def test_adam_ignores_zero_gradient():
    params = _params([1., -2., 3.])
    state = training.AdamState.zeros(params)
    training.adam_step(params, {"p0": np.zeros(3, np.float32)}, state)
    np.testing.assert_array_equal(params["p0"].data, [1., -2., 3.])


def test_adam_first_step_moves_by_learning_rate():
    params = _params([1., 1.])
    state = training.AdamState.zeros(params)
    training.adam_step(params, {"p0": np.array([0.5, -4.], np.float32)},
                       state, learning_rate=0.01)
    # bias-corrected m/sqrt(v) is sign(g) on the first step
    np.testing.assert_allclose(params["p0"].data, [0.99, 1.01], rtol=1e-5)
    assert state.t == 1


def test_adam_constant_gradient_takes_constant_steps():
    params = _params([0.])
    state = training.AdamState.zeros(params)
    grad = {"p0": np.array([2.], np.float32)}
    for _ in range(500):
        training.adam_step(params, grad, state, learning_rate=1e-3)
    assert params["p0"].data[0] == pytest.approx(-0.5, rel=0.01)


def test_adam_rejects_wrong_gradient_shape():
    params = _params([0., 0.])
    with pytest.raises(ConfigurationError):
        training.adam_step(params, {"p0": np.zeros(3, np.float32)},
                           training.AdamState.zeros(params))


def test_clip_gradients():
    grads = {"a": np.array([3., 0.], np.float32),
             "b": np.array([4.], np.float32)}
    assert training.clip_gradients(grads, 1.) == pytest.approx(5.)
    norm = np.sqrt(sum((g ** 2).sum() for g in grads.values()))
    assert norm == pytest.approx(1., rel=1e-5)


@pytest.mark.parametrize("kwargs", [
    dict(batch_size=0), dict(learning_rate=-1), dict(beta1=1.),
    dict(eval_every=0), dict(patience=0), dict(clip_norm=0),
])
def test_invalid_train_configs(kwargs):
    with pytest.raises(ConfigurationError):
        _train_config(**kwargs)


# ======== CHECKPOINTS ========

def test_checkpoint_roundtrip(tmp_path):
    config = small_model_config("PAN_CTX")
    params = models.init_model(config, 3)
    adam = training.AdamState.zeros(params)
    adam.t = 7
    for m in adam.m.values():
        m += 0.25
    ckpt = training.Checkpoint(config=config, params=params, adam=adam,
                               epoch=4, best_val=0.5,
                               rng_state=np.random.default_rng(1)
                               .bit_generator.state,
                               history=[{"epoch": 4, "train_loss": 1.5,
                                         "val_acc": 0.5}])
    path = str(tmp_path / "x.ckpt")
    training.save_checkpoint(path, ckpt)
    with open(path, "rb") as f:
        assert f.read(8) == b"PANCKPT1"

    restored = training.load_checkpoint(path, expected=config)
    assert restored.config == config
    assert list(restored.params) == list(params)
    for name in params:
        assert np.array_equal(restored.params[name].data, params[name].data)
        assert np.array_equal(restored.adam.m[name], adam.m[name])
    assert (restored.epoch, restored.adam.t, restored.best_val) == (4, 7, .5)
    assert restored.history_frame().loc[4, "train_loss"] == 1.5

    rng = np.random.default_rng()
    rng.bit_generator.state = restored.rng_state
    assert rng.random() == np.random.default_rng(1).random()


def test_checkpoint_for_other_architecture_is_refused(tmp_path):
    config = small_model_config("SAN")
    params = models.init_model(config, 0)
    path = str(tmp_path / "san.ckpt")
    training.save_checkpoint(path, training.Checkpoint(
        config=config, params=params,
        adam=training.AdamState.zeros(params)))
    with pytest.raises(ConfigurationError):
        training.load_checkpoint(path, expected=small_model_config("PAN"))


@pytest.mark.parametrize("corrupt", ["magic", "truncate", "header"])
def test_corrupted_checkpoint(tmp_path, corrupt):
    config = small_model_config("SAN")
    params = models.init_model(config, 0)
    path = str(tmp_path / "bad.ckpt")
    training.save_checkpoint(path, training.Checkpoint(
        config=config, params=params,
        adam=training.AdamState.zeros(params)))
    raw = bytearray(open(path, "rb").read())
    if corrupt == "magic":
        raw[:8] = b"NOTACKPT"
    elif corrupt == "truncate":
        raw = raw[:-4]
    else:
        raw[12] = ord("!")
    with open(path, "wb") as f:
        f.write(bytes(raw))
    with pytest.raises(FormatError):
        training.load_checkpoint(path)


def test_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        training.load_checkpoint(str(tmp_path / "none.ckpt"))


# ======== GRADIENTS ========

def test_canvas_must_divide_by_the_trunk():
    config = small_model_config("PAN")
    assert training.check_canvas(config, 96) == 6
    with pytest.raises(ConfigurationError):
        training.check_canvas(config, 40)


def test_sharded_gradients_match_single_pass(small_arrays):
    config = small_model_config("PAN", num_blocks=2)
    params = models.init_model(config, 0)
    indices = np.arange(7)
    loss1, grads1 = training.batch_gradients(params, config, small_arrays,
                                             indices, workers=1)
    loss3, grads3 = training.batch_gradients(params, config, small_arrays,
                                             indices, workers=3)
    assert loss1 == pytest.approx(loss3, rel=1e-5)
    for name in grads1:
        np.testing.assert_allclose(grads1[name], grads3[name],
                                   rtol=1e-4, atol=1e-6)


def test_predict_keeps_maps(small_arrays):
    config = small_model_config("PAN", num_blocks=2)
    params = models.init_model(config, 0)
    probabilities, maps = training.predict(params, config, small_arrays,
                                           batch_size=5, keep_maps=True)
    assert probabilities.shape == (24, 5)
    assert [m.shape for m in maps] == [(24, 24, 24), (24, 12, 12)]
    np.testing.assert_allclose(maps[-1].sum(axis=(1, 2)), 1, atol=1e-5)


# ======== TRAINING LOOP ========

def test_zero_learning_rate_keeps_initial_weights(small_arrays):
    cfg = _train_config(learning_rate=0., epochs=1)
    best, history = training.train(cfg, small_arrays, small_arrays)
    initial = models.init_model(cfg.model, cfg.seed)
    for name, p in best.params.items():
        assert np.array_equal(p.data, initial[name].data)
    assert list(history.index) == [1]


def test_training_is_deterministic(tmp_path, small_arrays):
    runs = []
    for run in ("a", "b"):
        directory = tmp_path / run
        directory.mkdir()
        cfg = _train_config(directory)
        runs.append(training.train(cfg, small_arrays, small_arrays))
        assert os.path.exists(cfg.checkpoint + training.LAST_SUFFIX)
    (best_a, hist_a), (best_b, hist_b) = runs
    assert hist_a.equals(hist_b)
    for name in best_a.params:
        assert np.array_equal(best_a.params[name].data,
                              best_b.params[name].data)


def test_resume_continues_the_same_trajectory(tmp_path, small_arrays):
    straight = tmp_path / "straight"
    split = tmp_path / "split"
    straight.mkdir()
    split.mkdir()

    full = _train_config(straight, epochs=3, eval_every=1)
    training.train(full, small_arrays, small_arrays)

    first = _train_config(split, epochs=1)
    training.train(first, small_arrays, small_arrays)
    second = _train_config(split, epochs=3)
    training.train(second, small_arrays, small_arrays,
                   resume=second.checkpoint + training.LAST_SUFFIX)

    a = training.load_checkpoint(full.checkpoint + training.LAST_SUFFIX)
    b = training.load_checkpoint(second.checkpoint + training.LAST_SUFFIX)
    assert a.epoch == b.epoch == 3
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    assert a.history == b.history


def test_resume_with_other_config_is_refused(tmp_path, small_arrays):
    cfg = _train_config(tmp_path, epochs=1)
    training.train(cfg, small_arrays, small_arrays)
    other = _train_config(tmp_path, kind="HAN", epochs=2)
    with pytest.raises(ConfigurationError):
        training.train(other, small_arrays, small_arrays,
                       resume=cfg.checkpoint + training.LAST_SUFFIX)


def test_non_finite_loss_stops_training(small_arrays, monkeypatch):
    cfg = _train_config(epochs=1)

    def _nan_loss(*args, **kwargs):
        return float("nan"), {name: np.full(shape, np.nan, np.float32)
                              for name, shape, _ in
                              models.parameter_shapes(cfg.model)}

    monkeypatch.setattr(training, "batch_gradients", _nan_loss)
    with pytest.raises(NumericError, match="epoch 1, batch 0"):
        training.train(cfg, small_arrays, small_arrays)


def test_patience_stops_early(small_arrays):
    cfg = _train_config(learning_rate=0., epochs=5, patience=1)
    _, history = training.train(cfg, small_arrays, small_arrays)
    assert len(history) == 2


def test_history_csv(tmp_path, small_arrays):
    cfg = _train_config(epochs=1)
    best, history = training.train(cfg, small_arrays, small_arrays)
    path = str(tmp_path / "history.csv")
    training.write_history(path, history)
    with open(path) as f:
        assert f.readline().strip() == "epoch,train_loss,val_acc"
    assert 0 <= training.train_accuracy(best, small_arrays) <= 1
