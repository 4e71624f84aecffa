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

from dataclasses import dataclass as _dataclass

import numpy as _np

from . import tensor as _t
from .exceptions import ConfigurationError, UsageError

QUERY_LEN = 10


# ======== TYPES ========

@_dataclass
class ConvBlock:
    """3x3 convolution (stride 1, pad 1) + activation + optional 2x2 pool"""
    weight: _t.Tensor
    bias: _t.Tensor
    activation: str = "relu"
    pool: bool = True

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ConfigurationError(
                "ConvBlock needs a K x C x 3 x 3 kernel, got %s" % (
                    self.weight.shape,))


@_dataclass
class AttentionHead:
    """
    Two-layer scoring network g_att shared by every location of a map.

    The first layer acts on [local context; query]. Its weight matrix is
    stored as two blocks: ``w_context`` (hidden x C x k x k, k = 2r + 1)
    applied to the (2r + 1)^2 neighbourhood, and ``w_query``
    (query_len x hidden) applied to the query, with bias ``b_hidden``.
    The output layer is ``w_out`` (1 x hidden x 1 x 1) plus ``b_out``.
    """
    w_context: _t.Tensor
    w_query: _t.Tensor
    b_hidden: _t.Tensor
    w_out: _t.Tensor
    b_out: _t.Tensor
    radius: int = 0
    final: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigurationError("context radius must be >= 0")
        k = 2 * self.radius + 1
        hidden = self.w_context.shape[0]
        if self.w_context.ndim != 4 or self.w_context.shape[2:] != (k, k):
            raise ConfigurationError(
                "context weight %s does not match radius %d" % (
                    self.w_context.shape, self.radius))
        if self.w_query.shape[1:] != (hidden,) \
                or self.b_hidden.shape != (hidden,) \
                or self.w_out.shape != (1, hidden, 1, 1) \
                or self.b_out.shape != (1,):
            raise ConfigurationError("inconsistent attention head shapes")

    @property
    def channels(self):
        return self.w_context.shape[1]

    @property
    def hidden_dim(self):
        return self.w_context.shape[0]

    @property
    def query_len(self):
        return self.w_query.shape[0]

    @property
    def input_width(self):
        return (2 * self.radius + 1) ** 2 * self.channels + self.query_len

    def first_layer_matrix(self):
        """First-layer weights as one input_width x hidden matrix"""
        ctx = self.w_context.data.transpose(2, 3, 1, 0).reshape(
            -1, self.hidden_dim)
        return _np.concatenate([ctx, self.w_query.data], axis=0)


# ======== QUERIES ========

def make_query(digits, query_len=QUERY_LEN):
    """One-hot query rows for an iterable of digit classes"""
    digits = _np.atleast_1d(_np.asarray(digits, dtype=_np.int64))
    if ((digits < 0) | (digits >= query_len)).any():
        raise UsageError("query digits must lie in [0, %d)" % query_len)
    query = _np.zeros((len(digits), query_len), dtype=_np.float32)
    query[_np.arange(len(digits)), digits] = 1
    return query


def _check_query(query, n, query_len):
    query = _np.asarray(query)
    if query.shape != (n, query_len):
        raise ConfigurationError(
            "query must be %d x %d, got %s" % (n, query_len, query.shape))
    if not ((query == 0) | (query == 1)).all() \
            or not (query.sum(axis=1) == 1).all():
        raise UsageError("every query row must be one-hot")
    return query


# ======== OPERATIONS ========

def conv_block_forward(block, input):
    out = _t.conv2d(input, block.weight, block.bias, stride=1, pad=1)
    out = _t.activation(out, block.activation)
    if block.pool:
        out = _t.maxpool2d(out, 2, 2)
    return out


def extract_local_context(feature, i, j, radius):
    """
    Concatenates f[s, t] for |s - i| <= radius, |t - j| <= radius,
    zero outside the map, neighbourhood positions in row-major order and
    channels contiguous per position.

    Returns:
        * ndarray: N x ((2 radius + 1)^2 * C)
    """
    data = feature.data if isinstance(feature, _t.Tensor) else \
        _np.asarray(feature)
    n, c, h, w = data.shape
    if not (0 <= i < h and 0 <= j < w):
        raise UsageError(
            "location (%d, %d) outside a %dx%d map" % (i, j, h, w))
    r = radius
    padded = _np.pad(data, ((0, 0), (0, 0), (r, r), (r, r)))
    patch = padded[:, :, i:i + 2 * r + 1, j:j + 2 * r + 1]
    return patch.transpose(0, 2, 3, 1).reshape(n, -1)


def score_location(head, feature, query, i, j):
    """Per-location definition of the attention score (N values)"""
    context = extract_local_context(feature, i, j, head.radius)
    inputs = _np.concatenate([context, _np.asarray(query)], axis=1)
    hidden = _np.maximum(
        inputs @ head.first_layer_matrix() + head.b_hidden.data, 0)
    return hidden @ head.w_out.data.reshape(-1) + head.b_out.data[0]


def attention_scores(head, feature, query, override=None):
    """
    Scores every location of ``feature`` (N x C x H x W) for the one-hot
    ``query`` rows (N x query_len). The context block of the first layer
    runs as a (2r + 1)^2 convolution and the output layer as a 1x1
    convolution, which equals ``score_location`` at every (i, j).

    ``override`` replaces the computed scores by a constant (or an array
    broadcastable to N x 1 x H x W); +inf on a non-final head forces the
    gate open.
    """
    if feature.ndim != 4 or feature.shape[1] != head.channels:
        raise ConfigurationError(
            "attention head expects %d channels, feature is %s" % (
                head.channels, feature.shape))
    n, _, h, w = feature.shape
    query = _check_query(query, n, head.query_len)

    if override is not None:
        return _t.Tensor(_np.broadcast_to(
            _np.asarray(override, dtype=feature.dtype), (n, 1, h, w)),
            dtype=feature.dtype)

    context = _t.conv2d(feature, head.w_context, None, pad=head.radius)
    query_term = _t.fully_connected(
        _t.Tensor(query, dtype=feature.dtype), head.w_query, head.b_hidden)
    query_term = _t.reshape(query_term, (n, head.hidden_dim, 1, 1))
    hidden = _t.relu(_t.add(context, query_term))
    return _t.conv2d(hidden, head.w_out, head.b_out)


def normalize_scores(scores, final):
    """Spatial softmax for the final head, independent sigmoids otherwise"""
    if final:
        return _t.spatial_softmax(scores)
    return _t.sigmoid(scores)
