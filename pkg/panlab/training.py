#!/usr/bin/env python
# -*- coding: UTF-8 -*-
#
# PanLab: Progressive attention networks for query-driven reference tasks
#
# Copyright 2026 The PanLab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json as _json
import logging as _logging
import struct as _struct
from concurrent.futures import ThreadPoolExecutor as _ThreadPoolExecutor
from dataclasses import dataclass as _dataclass, field as _field

import numpy as _np
import pandas as _pd

from . import tensor as _t, models as _models, stats as _stats
from .dataset import SampleArrays as _SampleArrays, \
    stack_samples as _stack_samples
from .exceptions import (
    ConfigurationError, DataError, FormatError, NumericError
)

_log = _logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PANCKPT1"
CHECKPOINT_FORMAT = 1
LAST_SUFFIX = ".last"


# ======== TYPES ========

@_dataclass
class TrainConfig:
    model: _models.ModelConfig = _field(
        default_factory=lambda: _models.ModelConfig.for_kind("PAN"))
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    checkpoint: str = None
    eval_every: int = 1
    patience: int = None
    clip_norm: float = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = _models.ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigurationError("epochs >= 0 and eval_every >= 1 needed")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigurationError("invalid Adam hyperparameters")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be > 0")


@_dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(
            m={k: _np.zeros_like(p.data) for k, p in params.items()},
            v={k: _np.zeros_like(p.data) for k, p in params.items()})


@_dataclass
class Checkpoint:
    config: _models.ModelConfig
    params: dict
    adam: AdamState
    epoch: int = 0
    rng_state: dict = None
    best_val: float = None
    history: list = _field(default_factory=list)

    def history_frame(self):
        return history_frame(self.history)


def history_frame(history):
    """Training history as a DataFrame indexed by epoch"""
    frame = _pd.DataFrame(history, columns=["epoch", "train_loss", "val_acc"])
    return frame.set_index("epoch")


# ======== OPTIMIZER ========

def adam_step(params, grads, state, learning_rate=1e-3, beta1=0.9,
              beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update, in place, in the order of ``params``.
    Parameters without a gradient are left untouched.
    """
    state.t += 1
    t = state.t
    correction1 = 1. - beta1 ** t
    correction2 = 1. - beta2 ** t
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ConfigurationError("gradient of %s has shape %s" % (
                name, grad.shape))
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * (grad * grad)
        step = (learning_rate * (m / correction1)
                / (_np.sqrt(v / correction2) + eps))
        param.data -= step.astype(param.dtype)
    return state


def clip_gradients(grads, max_norm):
    """Rescales ``grads`` so their global L2 norm is at most ``max_norm``"""
    norm = float(_np.sqrt(sum(float((g.astype(_np.float64) ** 2).sum())
                              for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * _np.float32(scale)
    return norm


# ======== CHECKPOINTS ========

def save_checkpoint(path, ckpt):
    """
    PANCKPT1 layout: magic, u32-LE header length, JSON header, then f32-LE
    buffers for every parameter, then the Adam first and second moments,
    all in canonical parameter order.
    """
    order = [name for name, _, _ in _models.parameter_shapes(ckpt.config)]
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": ckpt.config.to_dict(),
        "epoch": int(ckpt.epoch),
        "adam_t": int(ckpt.adam.t),
        "rng_state": ckpt.rng_state,
        "best_val": ckpt.best_val,
        "history": ckpt.history,
        "params": [[name, list(ckpt.params[name].shape)] for name in order],
    }
    encoded = _json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(_struct.pack("<I", len(encoded)))
            f.write(encoded)
            for buffers in ({k: p.data for k, p in ckpt.params.items()},
                            ckpt.adam.m, ckpt.adam.v):
                for name in order:
                    f.write(_np.asarray(buffers[name], dtype="<f4").tobytes())
    except OSError as e:
        raise DataError("cannot write checkpoint %s: %s" % (path, e)) from e


def load_checkpoint(path, expected=None):
    """
    Reads a PANCKPT1 file. With ``expected`` (a ModelConfig), a checkpoint
    for any other architecture is rejected.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError("cannot read checkpoint %s: %s" % (path, e)) from e

    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0, path)
    if len(raw) < 12:
        raise FormatError("truncated checkpoint header", len(raw), path)
    size, = _struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + size:
        raise FormatError("truncated checkpoint header", len(raw), path)
    try:
        header = _json.loads(raw[12:12 + size].decode("utf-8"))
        config = _models.ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError("unreadable checkpoint header: %s" % e, 12,
                          path) from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("unsupported checkpoint format %r" % (
            header.get("format"),), 12, path)

    if expected is not None and expected.to_dict() != config.to_dict():
        raise ConfigurationError(
            "checkpoint holds a %s model that does not match the requested "
            "%s configuration" % (config.kind, expected.kind))

    declared = [(name, tuple(shape)) for name, shape in header["params"]]
    canonical = [(name, shape) for name, shape, _ in
                 _models.parameter_shapes(config)]
    if declared != canonical:
        raise FormatError("parameter table does not match the stored "
                          "configuration", 12, path)

    offset = 12 + size
    total = sum(int(_np.prod(shape)) for _, shape in declared) * 4 * 3
    if len(raw) != offset + total:
        raise FormatError("checkpoint payload is %d bytes, expected %d" % (
            len(raw) - offset, total), min(len(raw), offset + total), path)

    buffers = []
    for _ in range(3):
        group = {}
        for name, shape in declared:
            count = int(_np.prod(shape))
            group[name] = _np.frombuffer(
                raw, dtype="<f4", count=count, offset=offset).reshape(
                    shape).astype(_np.float32)
            offset += count * 4
        buffers.append(group)

    params = {name: _t.Tensor(values, requires_grad=True, name=name)
              for name, values in buffers[0].items()}
    return Checkpoint(config=config, params=params,
                      adam=AdamState(m=buffers[1], v=buffers[2],
                                     t=header["adam_t"]),
                      epoch=header["epoch"], rng_state=header["rng_state"],
                      best_val=header["best_val"],
                      history=header.get("history", []))


def _snapshot(config, params, adam, epoch, rng, best_val, history):
    return Checkpoint(
        config=config,
        params=_models.copy_params(params),
        adam=AdamState(m={k: v.copy() for k, v in adam.m.items()},
                       v={k: v.copy() for k, v in adam.v.items()}, t=adam.t),
        epoch=epoch, rng_state=rng.bit_generator.state, best_val=best_val,
        history=[dict(row) for row in history])


# ======== TRAINING ========

def _as_arrays(data):
    if isinstance(data, _SampleArrays):
        return data
    return _stack_samples(data)


def check_canvas(config, canvas):
    """The trunk halves the map per block; the canvas must divide evenly"""
    factor = 2 ** config.num_blocks
    if canvas % factor:
        raise ConfigurationError(
            "canvas %d is not divisible by 2^%d for a %d-block model" % (
                canvas, config.num_blocks, config.num_blocks))
    return canvas // factor


def _shard_gradients(params, config, data, indices):
    """Mean loss and gradients over one shard, on thread-private tensors"""
    local = {name: _t.Tensor(p.data, requires_grad=True, name=name)
             for name, p in params.items()}
    image, query, labels = data.batch(indices)
    with _t.Tape() as tape:
        result = _models.forward(local, config, image, query)
        loss = _models.loss(result, config, labels)
        _t.backward(tape, loss)
    grads = {name: (p.grad if p.grad is not None else
                    _np.zeros_like(p.data)) for name, p in local.items()}
    return loss.item(), grads


def batch_gradients(params, config, data, indices, workers=1, executor=None):
    """
    Loss and gradients of a minibatch, split over ``workers`` shards and
    reduced in shard order so the result does not depend on scheduling.
    """
    shards = [s for s in _np.array_split(indices, max(1, workers)) if len(s)]
    if executor is not None and len(shards) > 1:
        results = list(executor.map(
            lambda s: _shard_gradients(params, config, data, s), shards))
    else:
        results = [_shard_gradients(params, config, data, s) for s in shards]

    total = float(len(indices))
    loss = 0.
    grads = {name: _np.zeros_like(p.data) for name, p in params.items()}
    for shard, (shard_loss, shard_grads) in zip(shards, results):
        weight = len(shard) / total
        loss += shard_loss * weight
        for name, grad in shard_grads.items():
            grads[name] += grad * _np.float32(weight)
    return loss, grads


def predict(params, config, data, batch_size=64, keep_maps=False):
    """
    Forward pass over every sample, in order, without recording.

    Returns:
        * (probabilities N x K, list of per-layer maps N x H' x W' or None)
    """
    data = _as_arrays(data)
    probabilities, maps = [], []
    for start in range(0, len(data), batch_size):
        indices = _np.arange(start, min(start + batch_size, len(data)))
        image, query, _ = data.batch(indices)
        result = _models.forward(params, config, image, query)
        probabilities.append(result.probabilities.data)
        if keep_maps:
            maps.append([alpha.data[:, 0] for alpha in result.attention_maps])
    probabilities = _np.concatenate(probabilities) if probabilities else \
        _np.zeros((0, config.num_colors), dtype=_np.float32)
    if not keep_maps:
        return probabilities, None
    layers = [_np.concatenate([batch[i] for batch in maps])
              for i in range(len(config.attention_layers))]
    return probabilities, layers


def _max_abs(grads):
    return max(float(_np.nan_to_num(_np.abs(g), nan=_np.inf).max())
               for g in grads.values())


def train(train_cfg, train_data, val_data, resume=None, workers=1):
    """
    Trains ``train_cfg.model`` with minibatch Adam.

    Args:
        * train_cfg (TrainConfig)
        * train_data, val_data: SampleArrays or lists of Sample
        * resume (Checkpoint or path): latest-state checkpoint to continue
        * workers (int): data-parallel shards per minibatch
    Returns:
        * (best-validation Checkpoint, history DataFrame)
    """
    config = train_cfg.model
    train_data = _as_arrays(train_data)
    val_data = _as_arrays(val_data)
    if not len(train_data) or not len(val_data):
        raise DataError("training and validation data must not be empty")
    if train_data.canvas != val_data.canvas:
        raise ConfigurationError("train and val archives differ in canvas")
    check_canvas(config, train_data.canvas)

    if resume is not None:
        if not isinstance(resume, Checkpoint):
            resume = load_checkpoint(resume, expected=config)
        elif resume.config.to_dict() != config.to_dict():
            raise ConfigurationError("resume checkpoint config mismatch")
        params = _models.copy_params(resume.params)
        adam = AdamState(m={k: v.copy() for k, v in resume.adam.m.items()},
                         v={k: v.copy() for k, v in resume.adam.v.items()},
                         t=resume.adam.t)
        rng = _np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        best_val = resume.best_val
        history = [dict(row) for row in resume.history]
        _log.info("resuming %s training at epoch %d", config.kind,
                  start_epoch)
    else:
        params = _models.init_model(config, train_cfg.seed)
        adam = AdamState.zeros(params)
        rng = _np.random.default_rng([train_cfg.seed, 1])
        start_epoch = 0
        best_val = None
        history = []

    best = None
    stale = 0
    n = len(train_data)
    executor = _ThreadPoolExecutor(max_workers=workers) if workers > 1 \
        else None
    try:
        for epoch in range(start_epoch + 1, train_cfg.epochs + 1):
            order = rng.permutation(n) if train_cfg.shuffle else _np.arange(n)
            losses = []
            for batch, start in enumerate(range(0, n, train_cfg.batch_size)):
                indices = order[start:start + train_cfg.batch_size]
                loss, grads = batch_gradients(params, config, train_data,
                                              indices, workers, executor)
                if not _np.isfinite(loss):
                    raise NumericError(
                        "non-finite loss at epoch %d, batch %d "
                        "(max |grad| %.4g)" % (epoch, batch, _max_abs(grads)))
                if train_cfg.clip_norm is not None:
                    clip_gradients(grads, train_cfg.clip_norm)
                adam_step(params, grads, adam, train_cfg.learning_rate,
                          train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
                losses.append(loss)

            val_acc = None
            if epoch % train_cfg.eval_every == 0 \
                    or epoch == train_cfg.epochs:
                probabilities, _ = predict(params, config, val_data)
                val_acc = _stats.accuracy(probabilities, val_data.color_labels)
            history.append({"epoch": epoch,
                            "train_loss": float(_np.mean(losses)),
                            "val_acc": val_acc})
            _log.info("%s epoch %d/%d: train loss %.4f, val acc %s",
                      config.kind, epoch, train_cfg.epochs,
                      history[-1]["train_loss"],
                      "-" if val_acc is None else "%.4f" % val_acc)

            improved = val_acc is not None and (
                best_val is None or val_acc > best_val)
            if improved:
                best_val = val_acc
                stale = 0
            elif val_acc is not None:
                stale += 1

            latest = _snapshot(config, params, adam, epoch, rng, best_val,
                               history)
            if improved:
                best = latest
                if train_cfg.checkpoint:
                    save_checkpoint(train_cfg.checkpoint, best)
            if train_cfg.checkpoint:
                save_checkpoint(train_cfg.checkpoint + LAST_SUFFIX, latest)

            if train_cfg.patience is not None \
                    and stale >= train_cfg.patience:
                _log.info("early stop after %d epochs without improvement",
                          stale)
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if best is None:
        # nothing improved in this run (zero epochs, or a resumed plateau)
        if train_cfg.checkpoint and resume is not None:
            try:
                best = load_checkpoint(train_cfg.checkpoint, expected=config)
            except DataError:
                best = None
        if best is None:
            best = _snapshot(config, params, adam, start_epoch if not history
                             else history[-1]["epoch"], rng, best_val,
                             history)
    best.history = [dict(row) for row in history]
    return best, history_frame(history)


def write_history(path, history):
    """Writes the history CSV (epoch, train_loss, val_acc)"""
    frame = history if isinstance(history, _pd.DataFrame) else \
        history_frame(history)
    try:
        frame.to_csv(path, float_format="%.6f")
    except OSError as e:
        raise DataError("cannot write %s: %s" % (path, e)) from e


def train_accuracy(ckpt, data):
    """Accuracy of a checkpoint on its own training data"""
    probabilities, _ = predict(ckpt.params, ckpt.config, data)
    return _stats.accuracy(probabilities, _as_arrays(data).color_labels)

