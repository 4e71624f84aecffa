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

import numpy as _np
from pandas import DataFrame as _df

from .. import stats as _stats
from ..exceptions import UsageError
from . import core as _core


def _layer_maps(result, index=0):
    """Per-layer H' x W' maps of one sample from a ForwardResult or list"""
    maps = getattr(result, "attention_maps", result)
    out = []
    for alpha in maps:
        data = _np.asarray(getattr(alpha, "data", alpha))
        if data.ndim == 4:
            data = data[index, 0]
        elif data.ndim == 3:
            data = data[index]
        out.append(data)
    return out


def render_attention_overlay(sample, result, layer, accumulated=False,
                             index=0):
    """
    Input image faded by one attention map, min-max rescaled and spread
    over its receptive tiles. With ``accumulated`` the multiplier is the
    product of every map up to ``layer``.

    Args:
        * sample (Sample): source image (H x W x 3 uint8)
        * result: ForwardResult (or list of maps) for that sample
        * layer (int): position in the attention map list
        * index (int): sample position within a batched result
    Returns:
        * ndarray: H x W x 3 uint8
    """
    maps = _layer_maps(result, index)
    if not 0 <= layer < len(maps):
        raise UsageError("layer %d out of range (%d attention maps)" % (
            layer, len(maps)))
    size = sample.image.shape[0]
    selected = range(layer + 1) if accumulated else (layer,)
    multiplier = _np.ones((size, size))
    for i in selected:
        multiplier = multiplier * _core.upsample(
            _core.rescale_map(maps[i]), size)
    return _core.fade(sample.image, multiplier)


def attention_overlays(sample, result, index=0):
    """
    Raw input plus one overlay per attention layer, and accumulated
    overlays for every deeper layer.

    Returns:
        * list of (name, pixels)
    """
    maps = _layer_maps(result, index)
    panels = [("input", sample.image)]
    for layer in range(len(maps)):
        panels.append(("layer%d" % (layer + 1), render_attention_overlay(
            sample, maps, layer)))
    for layer in range(1, len(maps)):
        panels.append(("layer%d-accumulated" % (layer + 1),
                       render_attention_overlay(sample, maps, layer,
                                                accumulated=True)))
    return panels


def attention_panel(sample, result, title=None, index=0,
                    figsize=None, savefig=None, show=True):
    panels = attention_overlays(sample, result, index)
    return _core.plot_image_grid(
        [pixels for _, pixels in panels], [name for name, _ in panels],
        title=title or "Query %d" % sample.query, figsize=figsize,
        savefig=savefig, show=show)


def pr_curves(reports, grayscale=False, figsize=(8, 6),
              savefig=None, show=True):
    """Precision-recall curves of several MetricsReport objects"""
    curves = {report.kind: report.pr_curve for report in reports}
    return _core.plot_pr_curves(curves, grayscale=grayscale,
                                figsize=figsize, savefig=savefig, show=show)


def scale_accuracy(reports, grayscale=False, figsize=(10, 5),
                   savefig=None, show=True):
    """Grouped bars of per-bucket accuracy, one group per scale bucket"""
    table = _df({report.kind: [report.bucket_accuracy.get(b, _np.nan)
                               for b in _stats.SCALE_BUCKETS]
                 for report in reports}, index=list(_stats.SCALE_BUCKETS))
    return _core.plot_bucket_bars(table, grayscale=grayscale,
                                  figsize=figsize, savefig=savefig, show=show)


def training_history(history, grayscale=False, figsize=(10, 6),
                     savefig=None, show=True):
    """Train loss and validation accuracy per epoch"""
    return _core.plot_history(history, grayscale=grayscale, figsize=figsize,
                              savefig=savefig, show=show)
