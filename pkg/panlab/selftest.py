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

"""
Gradient and invariant checks runnable from an installed package
(``panlab selftest``). Every differentiable operation is compared with
central differences in float64 on random inputs.
"""

import logging as _logging
import time as _time

import numpy as _np
import pandas as _pd
from tabulate import tabulate as _tabulate

from . import tensor as _t, models as _models

_log = _logging.getLogger(__name__)

F64 = _np.float64
OP_TOLERANCE = 1e-3
MODEL_TOLERANCE = 1e-2


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), 0 when both vanish"""
    a = _np.asarray(analytic, dtype=F64).ravel()
    n = _np.asarray(numeric, dtype=F64).ravel()
    scale = max(_np.linalg.norm(a), _np.linalg.norm(n))
    if scale < 1e-10:
        return 0.
    return float(_np.linalg.norm(a - n) / scale)


def gradient_error(fn, arrays, rng, h=1e-6):
    """
    Worst relative error between ``backward`` and numeric gradients of
    sum(fn(*inputs) * R) over every input, R a fixed random weighting.
    """
    inputs = [_t.Tensor(a, requires_grad=True, dtype=F64) for a in arrays]
    weights = _t.Tensor(rng.standard_normal(fn(*inputs).shape), dtype=F64)

    def scalar(*tensors):
        return _t.reduce_sum(_t.multiply(fn(*tensors), weights))

    with _t.Tape() as tape:
        loss = scalar(*inputs)
        _t.backward(tape, loss)

    worst = 0.
    for i, tensor in enumerate(inputs):
        def _f(x, i=i):
            args = list(inputs)
            args[i] = x
            return scalar(*args)
        numeric = _t.numeric_gradient(_f, tensor, h=h)
        analytic = tensor.grad if tensor.grad is not None else \
            _np.zeros_like(tensor.data)
        worst = max(worst, relative_error(analytic, numeric.data))
    return worst


# ======== RANDOM INPUTS ========

def _away_from_zero(rng, shape, low=0.1):
    return rng.choice([-1., 1.], size=shape) * rng.uniform(low, 1., shape)


def _distinct(rng, shape):
    # well separated values so a window max never ties
    return (rng.permutation(int(_np.prod(shape))).reshape(shape)
            * 0.1 + rng.uniform(0, 0.01, shape))


def _op_cases():
    """name -> (callable, input factory)"""
    def labels(rng, n, k):
        return rng.integers(0, k, size=n)

    return {
        "conv2d": (
            lambda x, w, b: _t.conv2d(x, w, b, pad=1),
            lambda rng: [rng.standard_normal((2, 2, 5, 5)),
                         rng.standard_normal((3, 2, 3, 3)),
                         rng.standard_normal(3)]),
        "conv2d (stride 2)": (
            lambda x, w: _t.conv2d(x, w, stride=2),
            lambda rng: [rng.standard_normal((1, 2, 7, 7)),
                         rng.standard_normal((2, 2, 3, 3))]),
        "maxpool2d": (
            lambda x: _t.maxpool2d(x, 2, 2),
            lambda rng: [_distinct(rng, (2, 2, 4, 4))]),
        "fully_connected": (
            lambda x, w, b: _t.fully_connected(x, w, b),
            lambda rng: [rng.standard_normal((3, 4)),
                         rng.standard_normal((4, 5)),
                         rng.standard_normal(5)]),
        "relu": (
            _t.relu,
            lambda rng: [_away_from_zero(rng, (2, 3, 4))]),
        "sigmoid": (
            _t.sigmoid,
            lambda rng: [rng.standard_normal((2, 3, 4))]),
        "add (broadcast)": (
            _t.add,
            lambda rng: [rng.standard_normal((2, 3, 4, 4)),
                         rng.standard_normal((2, 3, 1, 1))]),
        "multiply (broadcast)": (
            _t.multiply,
            lambda rng: [rng.standard_normal((2, 3, 4)),
                         rng.standard_normal((1, 3, 1))]),
        "reshape": (
            lambda x: _t.reshape(x, (4, 6)),
            lambda rng: [rng.standard_normal((2, 3, 4))]),
        "transpose": (
            lambda x: _t.transpose(x, (2, 0, 1)),
            lambda rng: [rng.standard_normal((2, 3, 4))]),
        "spatial_softmax": (
            _t.spatial_softmax,
            lambda rng: [rng.standard_normal((2, 1, 3, 3))]),
        "softmax": (
            _t.softmax,
            lambda rng: [rng.standard_normal((3, 5))]),
        "attend": (
            _t.attend,
            lambda rng: [rng.standard_normal((2, 3, 4, 4)),
                         rng.uniform(0, 1, (2, 1, 4, 4))]),
        "spatial_sum": (
            _t.spatial_sum,
            lambda rng: [rng.standard_normal((2, 3, 4, 4))]),
        "softmax_cross_entropy": (
            None, lambda rng: [rng.standard_normal((4, 5)),
                               labels(rng, 4, 5)]),
        "nll_of_probability": (
            None, lambda rng: [rng.standard_normal((4, 5)),
                               labels(rng, 4, 5)]),
    }


def check_operation(name, trials=100, seed=0):
    """Worst relative gradient error of one operation over ``trials``"""
    fn, factory = _op_cases()[name]
    rng = _np.random.default_rng(seed)
    worst = 0.
    for _ in range(trials):
        arrays = factory(rng)
        if name == "softmax_cross_entropy":
            logits, y = arrays
            arrays = [logits]
            fn = (lambda y: lambda x: _t.softmax_cross_entropy(x, y))(y)
        elif name == "nll_of_probability":
            logits, y = arrays
            arrays = [logits]
            fn = (lambda y: lambda x: _t.nll_of_probability(
                _t.softmax(x), y, eps=0.))(y)
        worst = max(worst, gradient_error(fn, arrays, rng))
    return worst


def toy_model(kind="PAN_CTX", seed=0):
    """Small float64 model on 16x16 inputs for end-to-end checks"""
    config = _models.ModelConfig.for_kind(kind, num_blocks=2, channels=3,
                                          hidden_dim=4)
    params = {name: _t.Tensor(p.data, requires_grad=True, dtype=F64,
                              name=name)
              for name, p in _models.init_model(config, seed).items()}
    return config, params


def check_model(kind="PAN_CTX", seed=0, samples=2):
    """Relative error of the full forward + loss gradient of a toy model"""
    rng = _np.random.default_rng(seed)
    config, params = toy_model(kind, seed)
    image = _t.Tensor(rng.uniform(0, 1, (samples, 3, 16, 16)), dtype=F64)
    query = rng.integers(0, 10, size=samples)
    labels = rng.integers(0, config.num_colors, size=samples)

    def objective(values):
        result = _models.forward(values, config, image, query)
        return _models.loss(result, config, labels)

    with _t.Tape() as tape:
        loss = objective(params)
        _t.backward(tape, loss)

    analytic, numeric = [], []
    for name, param in params.items():
        def _f(x, name=name):
            values = dict(params)
            values[name] = x
            return objective(values)
        numeric.append(_t.numeric_gradient(_f, param, h=1e-6).data.ravel())
        grad = param.grad if param.grad is not None else \
            _np.zeros_like(param.data)
        analytic.append(grad.ravel())
    return relative_error(_np.concatenate(analytic), _np.concatenate(numeric))


# ======== INVARIANTS ========

def _check_invariants(seed=0):
    rng = _np.random.default_rng(seed)
    checks = {}

    scores = _t.Tensor(rng.standard_normal((4, 1, 6, 6)) * 5)
    sums = _t.spatial_softmax(scores).data.sum(axis=(2, 3))
    checks["spatial_softmax sums to 1"] = bool(
        (_np.abs(sums - 1) <= 1e-5).all())

    feature = _t.Tensor(rng.standard_normal((2, 3, 4, 4)))
    ones = _t.Tensor(_np.ones((2, 1, 4, 4)))
    checks["attend(f, 1) == f"] = bool(_np.array_equal(
        _t.attend(feature, ones).data, feature.data))

    san = _models.ModelConfig.for_kind("SAN", channels=4, hidden_dim=4)
    pan = _models.ModelConfig.for_kind("PAN", channels=4, hidden_dim=4,
                                       attention_layers=(4,))
    params = _models.init_model(san, seed)
    image = _t.Tensor(rng.uniform(0, 1, (2, 3, 32, 32)))
    query = rng.integers(0, 10, size=2)
    checks["PAN on the last block == SAN"] = bool(_np.array_equal(
        _models.pan_forward(params, pan, image, query).probabilities.data,
        _models.san_forward(params, san, image, query).probabilities.data))

    han = _models.ModelConfig.for_kind("HAN", channels=4, hidden_dim=4)
    probabilities = _models.han_forward(
        _models.init_model(han, seed), han, image, query).probabilities.data
    checks["HAN rows sum to 1"] = bool(
        (_np.abs(probabilities.sum(axis=1) - 1) <= 1e-5).all())
    return checks


def run(trials=100, seed=0, display=True):
    """
    Runs every check.

    Returns:
        * (passed flag, pandas DataFrame of results)
    """
    start = _time.time()
    rows = []
    for name in _op_cases():
        error = check_operation(name, trials, seed)
        rows.append({"check": "grad %s" % name, "value": error,
                     "limit": OP_TOLERANCE, "ok": error <= OP_TOLERANCE})
        _log.debug("%s: %.3g", name, error)
    for kind in _models.KINDS:
        error = check_model(kind, seed)
        rows.append({"check": "grad %s end-to-end" % kind, "value": error,
                     "limit": MODEL_TOLERANCE,
                     "ok": error <= MODEL_TOLERANCE})
    for name, ok in _check_invariants(seed).items():
        rows.append({"check": name, "value": None, "limit": None, "ok": ok})

    table = _pd.DataFrame(rows).set_index("check")
    passed = bool(table["ok"].all())
    if display:
        print(_tabulate(table.fillna("-"), headers="keys", tablefmt="simple",
                        floatfmt=".2e"))
        print("\n%s in %.1fs" % ("PASSED" if passed else "FAILED",
                                 _time.time() - start))
    return passed, table
