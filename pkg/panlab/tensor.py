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
Dense tensors and the reverse-mode differentiable operations the
attention models are built from.

Operations record themselves on the innermost active ``Tape`` (entered
with ``with Tape() as tape:``) whenever one of their inputs requires a
gradient. Outside a tape nothing is recorded, which is how evaluation
runs. The active tape is thread-local: a tape and its tensors belong to
one worker at a time.
"""

import threading as _threading
from collections import namedtuple as _namedtuple

import numpy as _np
from numpy.lib.stride_tricks import sliding_window_view as _windows
from scipy import special as _special

from .exceptions import (
    ConfigurationError, DataError, NumericError, UsageError
)

DTYPE = _np.float32

_state = _threading.local()

TapeEntry = _namedtuple("TapeEntry", ["kind", "inputs", "output", "backward"])


# ======== STORAGE ========

class Tensor(object):
    """
    N-dimensional float array with an optional gradient buffer.

    4-D image data is laid out N x C x H x W, row-major, W fastest.
    Storage defaults to float32; float64 is accepted for gradient oracles.
    """
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name")

    def __init__(self, data, requires_grad=False, dtype=DTYPE, name=None):
        self.data = _np.asarray(data, dtype=dtype, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_id = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Returns a tape-free tensor sharing the same values"""
        return Tensor(self.data, dtype=self.data.dtype, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = " %s" % self.name if self.name else ""
        return "<Tensor%s shape=%s dtype=%s grad=%s>" % (
            label, self.shape, self.data.dtype, self.grad is not None)


class Tape(object):
    """Ordered record of the operations executed while the tape is active"""

    def __init__(self):
        self.entries = []

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, kind, inputs, output, backward):
        output.tape_id = (id(self), len(self.entries))
        self.entries.append(TapeEntry(kind, tuple(inputs), output, backward))


def active_tape():
    """Returns the innermost tape of the calling thread (or None)"""
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def _apply(kind, inputs, out, backward):
    requires = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=requires, dtype=out.dtype)
    tape = active_tape()
    if tape is not None and requires:
        tape.record(kind, inputs, result, backward)
    return result


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def zero_grad(tensors):
    """Clears gradient buffers of an iterable (or dict) of tensors"""
    if isinstance(tensors, dict):
        tensors = tensors.values()
    for tensor in tensors:
        tensor.grad = None


# ======== CONVOLUTION / POOLING ========

def _im2col(x, kh, kw, stride, pad):
    n, c = x.shape[:2]
    if pad:
        x = _np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def _col2im(dcols, x_shape, kh, kw, stride, pad, oh, ow):
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, oh, ow, c, kh, kw)
    dx = _np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += \
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dx[:, :, pad:pad + h, pad:pad + w]


def conv2d(input, weight, bias=None, stride=1, pad=0):
    """
    2-D cross-correlation computed as a patch-gather matrix product

    Args:
        * input (Tensor): N x C x H x W
        * weight (Tensor): K x C x kh x kw, odd kernel extents
        * bias (Tensor): K, optional
        * stride (int): >= 1
        * pad (int): zero padding on every border, >= 0
    Returns:
        * Tensor: N x K x H' x W', H' = (H + 2 pad - kh) / stride + 1
    """
    if input.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(
            "conv2d expects 4-D input and weight, got %s and %s" % (
                input.shape, weight.shape))
    n, c, h, w = input.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ConfigurationError(
            "conv2d channel mismatch: input has %d, weight expects %d" % (
                c, wc))
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError("conv2d kernel extents must be odd")
    if stride < 1 or pad < 0:
        raise ConfigurationError("conv2d needs stride >= 1 and pad >= 0")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride \
            or h + 2 * pad < kh or w + 2 * pad < kw:
        raise ConfigurationError(
            "conv2d output extent is not exact for %dx%d input, "
            "%dx%d kernel, stride %d, pad %d" % (h, w, kh, kw, stride, pad))
    if bias is not None and bias.shape != (k,):
        raise ConfigurationError(
            "conv2d bias must have shape (%d,), got %s" % (k, bias.shape))

    cols, oh, ow = _im2col(input.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(k, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = _np.ascontiguousarray(out.reshape(n, oh, ow, k).transpose(0, 3, 1, 2))

    def _backward(grad):
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, k)
        dw = (g2.T @ cols).reshape(weight.shape)
        dx = _col2im(g2 @ wmat, input.shape, kh, kw, stride, pad, oh, ow)
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _apply("conv2d", inputs, out, _backward)


def maxpool2d(input, window=2, stride=2):
    """
    Windowed max. Backward routes the gradient to the first
    (row-major) maximum of each window.
    """
    if input.ndim != 4:
        raise ConfigurationError("maxpool2d expects a 4-D input")
    n, c, h, w = input.shape
    if h < window or w < window \
            or (h - window) % stride or (w - window) % stride:
        raise ConfigurationError(
            "maxpool2d: %dx%d input does not divide into %d-windows "
            "with stride %d" % (h, w, window, stride))

    win = _windows(input.data, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, window * window)
    idx = flat.argmax(axis=-1)
    out = _np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def _backward(grad):
        du, dv = _np.divmod(idx, window)
        rows = _np.arange(oh)[:, None] * stride + du
        cols = _np.arange(ow)[None, :] * stride + dv
        nn = _np.arange(n)[:, None, None, None]
        cc = _np.arange(c)[None, :, None, None]
        dx = _np.zeros(input.shape, dtype=grad.dtype)
        if window == stride:
            dx[nn, cc, rows, cols] = grad
        else:
            _np.add.at(dx, (nn, cc, rows, cols), grad)
        return (dx,)

    return _apply("maxpool2d", (input,), _np.ascontiguousarray(out), _backward)


def fully_connected(input, weight, bias=None):
    """Affine map: N x D times D x E plus E"""
    if input.ndim != 2 or weight.ndim != 2 or input.shape[1] != weight.shape[0]:
        raise ConfigurationError(
            "fully_connected shape mismatch: %s x %s" % (
                input.shape, weight.shape))
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ConfigurationError(
            "fully_connected bias must have shape (%d,)" % weight.shape[1])

    out = input.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def _backward(grad):
        dx = grad @ weight.data.T
        dw = input.data.T @ grad
        if bias is None:
            return dx, dw
        return dx, dw, grad.sum(axis=0)

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _apply("fully_connected", inputs, out, _backward)


# ======== ELEMENTWISE ========

def activation(input, kind="relu"):
    """Elementwise ``relu`` or ``sigmoid``"""
    if kind == "relu":
        out = _np.maximum(input.data, 0)

        def _backward(grad):
            return (grad * (input.data > 0),)

    elif kind == "sigmoid":
        out = _special.expit(input.data)

        def _backward(grad):
            return (grad * out * (1 - out),)

    else:
        raise ConfigurationError("unknown activation `%s`" % kind)

    return _apply(kind, (input,), out, _backward)


def relu(input):
    """Shorthand for activation(input, 'relu')"""
    return activation(input, "relu")


def sigmoid(input):
    """Shorthand for activation(input, 'sigmoid')"""
    return activation(input, "sigmoid")


def add(a, b):
    """Broadcasting elementwise sum"""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def _backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _apply("add", (a, b), out, _backward)


def multiply(a, b):
    """Broadcasting elementwise product"""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def _backward(grad):
        return (_unbroadcast(grad * b.data, a.shape),
                _unbroadcast(grad * a.data, b.shape))

    return _apply("multiply", (a, b), out, _backward)


def reshape(input, shape):
    out = input.data.reshape(shape)

    def _backward(grad):
        return (grad.reshape(input.shape),)

    return _apply("reshape", (input,), out, _backward)


def transpose(input, axes):
    out = input.data.transpose(axes)
    inverse = _np.argsort(axes)

    def _backward(grad):
        return (grad.transpose(inverse),)

    return _apply("transpose", (input,), out, _backward)


def reduce_sum(input):
    """Sum of every entry, as a scalar tensor"""
    out = _np.asarray(input.data.sum(), dtype=input.data.dtype)

    def _backward(grad):
        return (_np.full(input.shape, grad, dtype=input.data.dtype),)

    return _apply("reduce_sum", (input,), out, _backward)


# ======== ATTENTION ========

def _softmax_op(kind, input, axes):
    # scipy subtracts the per-slice max before exponentiating
    with _np.errstate(invalid="ignore"):
        out = _special.softmax(input.data, axis=axes)
    # slices holding +inf put all their mass on those cells
    hot = _np.isposinf(input.data)
    pinned = hot.any(axis=axes, keepdims=True)
    if pinned.any():
        share = hot / _np.maximum(hot.sum(axis=axes, keepdims=True), 1)
        out = _np.where(pinned, share, out).astype(input.data.dtype)

    def _backward(grad):
        g = out * (grad - (grad * out).sum(axis=axes, keepdims=True))
        return (_np.where(pinned, 0, g).astype(g.dtype),)

    return _apply(kind, (input,), out, _backward)


def spatial_softmax(scores):
    """Softmax over the whole H x W grid of every sample and channel"""
    if scores.ndim != 4:
        raise ConfigurationError("spatial_softmax expects N x 1 x H x W")
    return _softmax_op("spatial_softmax", scores, (2, 3))


def softmax(logits, axis=1):
    """Softmax along ``axis`` (class axis by default)"""
    return _softmax_op("softmax", logits, axis)


def attend(feature, alpha):
    """Gates every channel of ``feature`` by the N x 1 x H x W map ``alpha``"""
    if feature.ndim != 4 or alpha.ndim != 4 or alpha.shape[1] != 1 \
            or alpha.shape[0] != feature.shape[0] \
            or alpha.shape[2:] != feature.shape[2:]:
        raise ConfigurationError(
            "attend shape mismatch: feature %s, alpha %s" % (
                feature.shape, alpha.shape))
    out = feature.data * alpha.data

    def _backward(grad):
        return (grad * alpha.data,
                (grad * feature.data).sum(axis=1, keepdims=True))

    return _apply("attend", (feature, alpha), out, _backward)


def spatial_sum(feature):
    """N x C x H x W -> N x C"""
    if feature.ndim != 4:
        raise ConfigurationError("spatial_sum expects a 4-D input")
    out = feature.data.sum(axis=(2, 3))

    def _backward(grad):
        return (_np.broadcast_to(grad[:, :, None, None], feature.shape),)

    return _apply("spatial_sum", (feature,), out, _backward)


# ======== LOSSES ========

def _check_labels(labels, n, k):
    labels = _np.asarray(labels)
    if labels.shape != (n,):
        raise ConfigurationError(
            "expected %d labels, got shape %s" % (n, labels.shape))
    if not _np.issubdtype(labels.dtype, _np.integer):
        raise DataError("labels must be integer class indices")
    labels = labels.astype(_np.int64)
    if ((labels < 0) | (labels >= k)).any():
        raise DataError("labels must lie in [0, %d)" % k)
    return labels


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]"""
    if logits.ndim != 2:
        raise ConfigurationError("softmax_cross_entropy expects N x K logits")
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    rows = _np.arange(n)

    logp = _special.log_softmax(logits.data, axis=1)
    loss = _np.asarray(-logp[rows, labels].mean(), dtype=logits.data.dtype)

    def _backward(grad):
        dlogits = _np.exp(logp)
        dlogits[rows, labels] -= 1
        return (dlogits * (grad / n),)

    return _apply("softmax_cross_entropy", (logits,), loss, _backward)


def nll_of_probability(prob, labels, eps=1e-12):
    """
    Mean over the batch of -log(prob[label] + eps) for rows that are
    already probability distributions.
    """
    if prob.ndim != 2:
        raise ConfigurationError("nll_of_probability expects N x K rows")
    n, k = prob.shape
    labels = _check_labels(labels, n, k)
    p = prob.data
    if not _np.isfinite(p).all() or (p < 0).any() \
            or (_np.abs(p.sum(axis=1) - 1) > 1e-4).any():
        raise NumericError(
            "nll_of_probability needs non-negative rows summing to 1")
    rows = _np.arange(n)

    picked = p[rows, labels].astype(_np.float64) + eps
    loss = _np.asarray(-_np.log(picked).mean(), dtype=p.dtype)

    def _backward(grad):
        dprob = _np.zeros_like(p)
        dprob[rows, labels] = -grad / (picked * n)
        return (dprob,)

    return _apply("nll_of_probability", (prob,), loss, _backward)


# ======== GRADIENTS ========

def backward(tape, loss):
    """
    Populates ``grad`` of every tensor reachable from the scalar ``loss``.
    Gradients accumulate into existing buffers; clear them with
    ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise UsageError(
            "backward needs a scalar loss, got shape %s" % (loss.shape,))
    if loss.tape_id is None or loss.tape_id[0] != id(tape):
        raise UsageError("loss was not produced on this tape")

    loss.grad = _np.ones_like(loss.data)
    for entry in reversed(tape.entries[:loss.tape_id[1] + 1]):
        out_grad = entry.output.grad
        if out_grad is None:
            continue
        for tensor, grad in zip(entry.inputs, entry.backward(out_grad)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = _np.array(grad, dtype=tensor.data.dtype)
            else:
                tensor.grad = tensor.grad + grad


def numeric_gradient(f, x, h=1e-3):
    """
    Central finite differences of the scalar function ``f`` at ``x``,
    evaluated in float64. Test oracle for ``backward``.
    """
    if h <= 0:
        raise UsageError("numeric_gradient needs h > 0")

    def _value(result):
        if isinstance(result, Tensor):
            return float(result.data.reshape(-1)[0])
        return float(result)

    base = _np.array(x.data, dtype=_np.float64)
    flat = base.reshape(-1)
    grad = _np.zeros(flat.size, dtype=_np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        upper = _value(f(Tensor(base.copy(), dtype=_np.float64)))
        flat[i] = orig - h
        lower = _value(f(Tensor(base.copy(), dtype=_np.float64)))
        flat[i] = orig
        grad[i] = (upper - lower) / (2 * h)
    return Tensor(grad.reshape(base.shape), dtype=_np.float64)
