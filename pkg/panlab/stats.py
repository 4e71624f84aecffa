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
import pandas as _pd

from .exceptions import ConfigurationError, NumericError, UsageError

SCALE_BUCKETS = ("0.5-1.0", "1.0-1.5", "1.5-2.0", "2.0-2.5", "2.5-3.0")
DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 20))


def _values(x):
    # Tensor, ForwardResult probabilities or plain arrays
    data = getattr(x, "data", x)
    return _np.asarray(data)


# ======== ACCURACY ========

def predictions(probabilities):
    """Arg-max class per row; ties go to the lower index"""
    return _np.argmax(_values(probabilities), axis=1)


def accuracy(probabilities, labels):
    """Fraction of rows whose arg-max equals the label"""
    labels = _np.asarray(labels)
    predicted = predictions(probabilities)
    if predicted.shape != labels.shape:
        raise ConfigurationError("%d predictions for %d labels" % (
            len(predicted), len(labels)))
    if not len(labels):
        return float("nan")
    return float((predicted == labels).mean())


def scale_bucket(scales):
    """Bucket index 0-4 of each scale; the last bucket is closed at 3.0"""
    scales = _np.asarray(scales, dtype=_np.float64)
    return _np.clip(_np.floor((scales - 0.5) / 0.5), 0,
                    len(SCALE_BUCKETS) - 1).astype(_np.int64)


def scale_bucket_accuracy(probabilities, labels, scales):
    """
    Accuracy per target-scale bucket

    Returns:
        * pandas Series indexed by bucket label; empty buckets are absent
    """
    correct = predictions(probabilities) == _np.asarray(labels)
    buckets = scale_bucket(scales)
    frame = _pd.DataFrame({"bucket": buckets, "correct": correct})
    result = frame.groupby("bucket")["correct"].mean()
    result.index = [SCALE_BUCKETS[i] for i in result.index]
    result.name = "accuracy"
    return result.astype(float)


def bucket_gap(bucket_accuracy):
    """Best minus worst populated bucket accuracy"""
    if not len(bucket_accuracy):
        return float("nan")
    return float(bucket_accuracy.max() - bucket_accuracy.min())


# ======== ATTENTION ========

def pool_mask(mask, resolution):
    """
    In-mask fraction per attention cell: the mask is average-pooled from
    H x W (or N x H x W) down to ``resolution`` x ``resolution``.
    """
    mask = _np.asarray(mask)
    single = mask.ndim == 2
    if single:
        mask = mask[None]
    n, h, w = mask.shape
    if h != w or h % resolution:
        raise ConfigurationError(
            "a %dx%d mask cannot be pooled to %dx%d" % (
                h, w, resolution, resolution))
    factor = h // resolution
    fraction = (mask > 0).reshape(
        n, resolution, factor, resolution, factor).mean(axis=(2, 4))
    return fraction[0] if single else fraction


def _squeeze_map(alpha):
    alpha = _values(alpha).astype(_np.float64)
    while alpha.ndim > 2 and alpha.shape[0] == 1:
        alpha = alpha[0]
    return alpha


def tpr(alpha, mask):
    """
    Share of the attention mass that falls inside the target mask

    Args:
        * alpha: final attention map (H' x W' or 1 x H' x W'), sums to 1
        * mask: H x W uint8 mask
    """
    alpha = _squeeze_map(alpha)
    total = alpha.sum()
    if not _np.isfinite(total) or abs(total - 1) > 1e-4 or (alpha < 0).any():
        raise NumericError("attention map must be a distribution "
                           "(sums to %.6f)" % total)
    fraction = pool_mask(mask, alpha.shape[-1])
    return float((alpha * fraction).sum() / total)


def mean_tpr(maps, masks):
    """Dataset TPR: mean of per-sample TPR"""
    maps = _values(maps)
    if len(maps) != len(masks):
        raise ConfigurationError("%d maps for %d masks" % (
            len(maps), len(masks)))
    if not len(maps):
        return float("nan")
    return float(_np.mean([tpr(a, m) for a, m in zip(maps, masks)]))


def uniform_tpr(masks, resolution):
    """TPR of the uniform map: mean pooled-mask fraction over samples"""
    fraction = pool_mask(masks, resolution)
    if fraction.ndim == 2:
        fraction = fraction[None]
    return float(fraction.astype(_np.float64).mean(axis=(1, 2)).mean())


# ======== SEGMENTATION ========

def pr_curve(maps, masks, thresholds=DEFAULT_THRESHOLDS):
    """
    Precision/recall of attention maps used as segmentations.

    A map is spread over its receptive tiles (nearest-neighbour upsampling
    to the mask size) and binarized at ``threshold * max(alpha)`` per
    sample; counts are pooled over every pixel of the split. A threshold
    with no predicted pixel has precision 1 and recall 0.

    Returns:
        * pandas DataFrame: threshold, precision, recall, f1, predicted
    """
    thresholds = [float(x) for x in thresholds]
    if list(thresholds) != sorted(thresholds):
        raise UsageError("thresholds must be sorted ascending")
    maps = _values(maps).astype(_np.float64)
    if maps.ndim == 4:
        maps = maps[:, 0]
    masks = _np.asarray(masks)
    if len(maps) != len(masks):
        raise ConfigurationError("%d maps for %d masks" % (
            len(maps), len(masks)))

    resolution = maps.shape[-1]
    factor = masks.shape[-1] // resolution
    # mask pixels per tile; each predicted cell claims its whole tile
    tile_hits = pool_mask(masks, resolution) * factor * factor
    positives = float((masks > 0).sum())
    peak = maps.max(axis=(1, 2), keepdims=True)

    rows = []
    for tau in thresholds:
        chosen = maps >= tau * peak
        predicted = float(chosen.sum()) * factor * factor
        hits = float(tile_hits[chosen].sum())
        if predicted == 0:
            precision, recall = 1., 0.
        else:
            precision = hits / predicted
            recall = hits / positives if positives else float("nan")
        f1 = 2 * precision * recall / (precision + recall) \
            if precision + recall > 0 else 0.
        rows.append({"threshold": tau, "precision": precision,
                     "recall": recall, "f1": f1,
                     "predicted": int(predicted)})
    return _pd.DataFrame(rows, columns=["threshold", "precision", "recall",
                                        "f1", "predicted"])


def average_precision(curve):
    """Step integral of precision over recall (thresholds high to low)"""
    ordered = curve.sort_values("threshold", ascending=False)
    recall = _np.concatenate([[0.], ordered["recall"].to_numpy()])
    precision = ordered["precision"].to_numpy()
    return float((_np.diff(recall) * precision).sum())


def best_f1(curve):
    """Row of the PR table with the highest F1"""
    return curve.loc[curve["f1"].idxmax()]
