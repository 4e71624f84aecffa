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
The four attention models on a shared convolutional trunk:

* PAN      - sigmoid gates after every pooling layer, softmax at the end
* PAN_CTX  - PAN whose non-final gates also see a local context
* SAN      - one softmax attention on the last pooling output
* HAN      - SAN's attention used as a distribution over locations, with
             the answer marginalized over it
"""

from dataclasses import dataclass as _dataclass, field as _field, \
    asdict as _asdict

import numpy as _np
import pandas as _pd

from . import tensor as _t, layers as _layers
from .exceptions import ConfigurationError, UsageError

KINDS = ("PAN", "PAN_CTX", "SAN", "HAN")

# output bias of non-final heads: sigmoid(2) ~ 0.88 keeps early gates open
GATE_BIAS = 2.0


# ======== TYPES ========

@_dataclass
class ModelConfig:
    kind: str = "PAN"
    num_blocks: int = 4
    channels: int = 32
    attention_layers: tuple = (1, 2, 3, 4)
    context_radius: int = 0
    num_colors: int = 5
    query_len: int = _layers.QUERY_LEN
    hidden_dim: int = 32
    in_channels: int = 3

    def __post_init__(self):
        self.kind = str(self.kind).upper().replace("-", "_")
        self.attention_layers = tuple(int(x) for x in self.attention_layers)
        self.validate()

    @classmethod
    def for_kind(cls, kind, **kwargs):
        """Default architecture for ``kind``; keyword arguments override it"""
        kind = str(kind).upper().replace("-", "_")
        num_blocks = kwargs.get("num_blocks", 4)
        if kind in ("SAN", "HAN"):
            defaults = dict(attention_layers=(num_blocks,), context_radius=0)
        elif kind == "PAN_CTX":
            defaults = dict(attention_layers=tuple(range(1, num_blocks + 1)),
                            context_radius=1)
        else:
            defaults = dict(attention_layers=tuple(range(1, num_blocks + 1)),
                            context_radius=0)
        defaults.update(kwargs)
        return cls(kind=kind, **defaults)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(
                "model kind must be one of %s, got `%s`" % (
                    ", ".join(KINDS), self.kind))
        if self.num_blocks < 1:
            raise ConfigurationError("a model needs at least one conv block")
        for name in ("channels", "num_colors", "query_len",
                     "hidden_dim", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError("`%s` must be >= 1" % name)
        if self.context_radius < 0:
            raise ConfigurationError("context_radius must be >= 0")
        layers = self.attention_layers
        if not layers or list(layers) != sorted(set(layers)) \
                or layers[0] < 1 or layers[-1] != self.num_blocks:
            raise ConfigurationError(
                "attention_layers must be increasing block indices ending "
                "at the last block (%d), got %s" % (self.num_blocks, layers))
        if self.kind in ("SAN", "HAN") and len(layers) != 1:
            raise ConfigurationError(
                "%s carries exactly one attention head" % self.kind)

    def heads(self):
        """(block index, context radius, final flag) for every head"""
        last = self.attention_layers[-1]
        return [(index, 0 if index == last else self.context_radius,
                 index == last) for index in self.attention_layers]

    def to_dict(self):
        values = _asdict(self)
        values["attention_layers"] = list(self.attention_layers)
        return values

    @classmethod
    def from_dict(cls, values):
        return cls(**values)


@_dataclass
class ForwardResult:
    logits: _t.Tensor
    probabilities: _t.Tensor
    attention_maps: list = _field(default_factory=list)
    attended_feature: _t.Tensor = None

    @property
    def final_map(self):
        return self.attention_maps[-1]


# ======== PARAMETERS ========

def he_normal(rng, shape, fan_in):
    """Gaussian draw with std sqrt(2 / fan_in), as float32"""
    std = _np.sqrt(2. / fan_in)
    return (rng.standard_normal(shape) * std).astype(_np.float32)


def parameter_shapes(config):
    """Canonical (name, shape, fan_in) list; defines parameter order"""
    shapes = []
    channels = config.in_channels
    for b in range(1, config.num_blocks + 1):
        shapes.append(("block%d.weight" % b,
                       (config.channels, channels, 3, 3), channels * 9))
        shapes.append(("block%d.bias" % b, (config.channels,), None))
        channels = config.channels

    hidden = config.hidden_dim
    for index, radius, _ in config.heads():
        k = 2 * radius + 1
        width = k * k * config.channels + config.query_len
        shapes += [
            ("att%d.w_context" % index, (hidden, config.channels, k, k), width),
            ("att%d.w_query" % index, (config.query_len, hidden), width),
            ("att%d.b_hidden" % index, (hidden,), None),
            ("att%d.w_out" % index, (1, hidden, 1, 1), hidden),
            ("att%d.b_out" % index, (1,), None),
        ]

    shapes.append(("fc.weight", (config.channels, config.num_colors),
                   config.channels))
    shapes.append(("fc.bias", (config.num_colors,), None))
    return shapes


def init_model(config, seed=0):
    """
    He-normal weights, zero biases except the output bias of non-final
    attention heads (GATE_BIAS). Deterministic given ``seed``.
    """
    rng = _np.random.default_rng(seed)
    finals = {index: final for index, _, final in config.heads()}
    params = {}
    for name, shape, fan_in in parameter_shapes(config):
        if fan_in is not None:
            values = he_normal(rng, shape, fan_in)
        else:
            values = _np.zeros(shape, dtype=_np.float32)
            if name.endswith(".b_out") and not finals[int(name[3:-6])]:
                values[:] = GATE_BIAS
        params[name] = _t.Tensor(values, requires_grad=True, name=name)
    return params


def copy_params(params, requires_grad=True):
    return {name: _t.Tensor(p.data.copy(), requires_grad=requires_grad,
                            dtype=p.dtype, name=name)
            for name, p in params.items()}


def check_params(params, config):
    """Raises ConfigurationError unless ``params`` fit ``config`` exactly"""
    expected = [(name, shape) for name, shape, _ in parameter_shapes(config)]
    actual = [(name, tuple(p.shape)) for name, p in params.items()]
    if sorted(expected) != sorted(actual):
        raise ConfigurationError(
            "parameters do not match a %s model configuration" % config.kind)


def count_parameters(params):
    """Total number of scalars in a parameter set"""
    return int(sum(p.size for p in params.values()))


def describe_parameters(params):
    """Parameter table (name, shape, count)"""
    return _pd.DataFrame([
        {"parameter": name, "shape": "x".join(map(str, p.shape)),
         "count": p.size} for name, p in params.items()
    ]).set_index("parameter")


def conv_blocks(params, config):
    return [_layers.ConvBlock(params["block%d.weight" % b],
                              params["block%d.bias" % b])
            for b in range(1, config.num_blocks + 1)]


def attention_heads(params, config):
    heads = {}
    for index, radius, final in config.heads():
        prefix = "att%d." % index
        heads[index] = _layers.AttentionHead(
            w_context=params[prefix + "w_context"],
            w_query=params[prefix + "w_query"],
            b_hidden=params[prefix + "b_hidden"],
            w_out=params[prefix + "w_out"],
            b_out=params[prefix + "b_out"],
            radius=radius, final=final)
    return heads


# ======== FORWARD ========

def _as_query(query, config):
    query = _np.asarray(query)
    if query.ndim <= 1:
        return _layers.make_query(query, config.query_len)
    return query


def _check_kind(config, kinds):
    if config.kind not in kinds:
        raise UsageError("%s model cannot run through the %s forward" % (
            config.kind, "/".join(kinds)))


def _attended_trunk(params, config, image, query, score_overrides):
    """Conv blocks with their attention gates; returns (f^L, maps)"""
    overrides = score_overrides or {}
    heads = attention_heads(params, config)
    feature = image
    maps = []
    for index, block in enumerate(conv_blocks(params, config), 1):
        feature = _layers.conv_block_forward(block, feature)
        head = heads.get(index)
        if head is None:
            continue
        scores = _layers.attention_scores(
            head, feature, query, override=overrides.get(index))
        alpha = _layers.normalize_scores(scores, head.final)
        maps.append(alpha)
        if not head.final:
            feature = _t.attend(feature, alpha)
    return feature, maps


def _soft_forward(params, config, image, query, score_overrides):
    query = _as_query(query, config)
    feature, maps = _attended_trunk(params, config, image, query,
                                    score_overrides)
    attended = _t.spatial_sum(_t.attend(feature, maps[-1]))
    logits = _t.fully_connected(attended, params["fc.weight"],
                                params["fc.bias"])
    return ForwardResult(logits=logits,
                         probabilities=_t.softmax(logits, axis=1),
                         attention_maps=maps,
                         attended_feature=attended)


def pan_forward(params, config, image, query, score_overrides=None):
    """
    Progressive attention forward pass

    Args:
        * params (dict): from ``init_model``
        * config (ModelConfig): kind PAN or PAN_CTX
        * image (Tensor): N x 3 x H x W in [0, 1]
        * query: digit classes (N,) or one-hot rows (N x 10)
        * score_overrides (dict): block index -> constant score, test hook
    Returns:
        * ForwardResult
    """
    _check_kind(config, ("PAN", "PAN_CTX"))
    return _soft_forward(params, config, image, query, score_overrides)


def san_forward(params, config, image, query, score_overrides=None):
    """Soft attention: one softmax map over the last pooling output"""
    _check_kind(config, ("SAN",))
    return _soft_forward(params, config, image, query, score_overrides)


def han_forward(params, config, image, query, score_overrides=None):
    """
    Hard attention with exact marginalization: every location classifies
    with the shared fc layer and the answers are averaged under alpha.
    """
    _check_kind(config, ("HAN",))
    query = _as_query(query, config)
    feature, maps = _attended_trunk(params, config, image, query,
                                    score_overrides)
    alpha = maps[-1]

    classifier = _t.reshape(_t.transpose(params["fc.weight"], (1, 0)),
                            (config.num_colors, config.channels, 1, 1))
    local = _t.softmax(_t.conv2d(feature, classifier, params["fc.bias"]),
                       axis=1)
    probabilities = _t.spatial_sum(_t.attend(local, alpha))
    logits = _t.Tensor(_np.log(_np.maximum(probabilities.data, 1e-30)),
                       dtype=probabilities.dtype)
    return ForwardResult(logits=logits,
                         probabilities=probabilities,
                         attention_maps=maps,
                         attended_feature=_t.spatial_sum(
                             _t.attend(feature, alpha)))


_FORWARDS = {
    "PAN": pan_forward,
    "PAN_CTX": pan_forward,
    "SAN": san_forward,
    "HAN": han_forward,
}


def forward(params, config, image, query, score_overrides=None):
    """Runs the forward pass matching ``config.kind``"""
    return _FORWARDS[config.kind](params, config, image, query,
                                  score_overrides)


def loss(result, config, labels):
    """Training loss: cross entropy on logits, NLL for HAN"""
    if config.kind == "HAN":
        return _t.nll_of_probability(result.probabilities, labels)
    return _t.softmax_cross_entropy(result.logits, labels)
