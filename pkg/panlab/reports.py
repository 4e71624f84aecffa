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
import os as _os
from concurrent.futures import ThreadPoolExecutor as _ThreadPoolExecutor
from dataclasses import dataclass as _dataclass, field as _field

import numpy as _np
import pandas as _pd
from tabulate import tabulate as _tabulate

from . import (
    __version__, stats as _stats, utils as _utils,
    training as _training, dataset as _dataset
)
from .exceptions import DataError

_log = _logging.getLogger(__name__)


@_dataclass
class MetricsReport:
    model_id: str
    dataset_id: str
    kind: str
    samples: int
    accuracy: float
    bucket_accuracy: dict
    tpr: float
    uniform_tpr: float
    pr_curve: _pd.DataFrame = _field(repr=False)
    average_precision: float = None

    def to_dict(self):
        return {
            "version": __version__,
            "model_id": self.model_id,
            "dataset_id": self.dataset_id,
            "kind": self.kind,
            "samples": self.samples,
            "accuracy": self.accuracy,
            "bucket_accuracy": dict(self.bucket_accuracy),
            "tpr": self.tpr,
            "uniform_tpr": self.uniform_tpr,
            "average_precision": self.average_precision,
            "pr_curve": [[float(row.threshold), float(row.precision),
                          float(row.recall)]
                         for row in self.pr_curve.itertuples()],
        }

    def summary(self):
        """One-column metrics table (percentages)"""
        rows = {
            "Samples": self.samples,
            "Accuracy %": self.accuracy * 100,
            "TPR %": self.tpr * 100,
            "Uniform TPR %": self.uniform_tpr * 100,
            "Average Precision": self.average_precision,
        }
        for bucket in _stats.SCALE_BUCKETS:
            value = self.bucket_accuracy.get(bucket)
            rows["Scale %s %%" % bucket] = "-" if value is None \
                else value * 100
        return _pd.DataFrame({self.kind: _pd.Series(rows, dtype=object)})


def _file_id(source, fallback):
    if isinstance(source, (str, _os.PathLike)):
        return _utils.file_digest(source)
    return fallback


def _predict_parallel(ckpt, data, batch_size, workers):
    if workers <= 1 or len(data) <= batch_size:
        return _training.predict(ckpt.params, ckpt.config, data, batch_size,
                                 keep_maps=True)
    chunks = [c for c in _np.array_split(_np.arange(len(data)), workers)
              if len(c)]
    with _ThreadPoolExecutor(max_workers=workers) as executor:
        parts = list(executor.map(
            lambda c: _training.predict(ckpt.params, ckpt.config,
                                        data.subset(c), batch_size,
                                        keep_maps=True), chunks))
    probabilities = _np.concatenate([p for p, _ in parts])
    maps = [_np.concatenate([m[i] for _, m in parts])
            for i in range(len(parts[0][1]))]
    return probabilities, maps


def evaluate(checkpoint, archive, thresholds=_stats.DEFAULT_THRESHOLDS,
             batch_size=64, workers=1, keep_maps=False):
    """
    Runs a checkpoint over an archive and assembles a MetricsReport

    Args:
        * checkpoint: Checkpoint or PANCKPT1 path
        * archive: SampleArrays, list of Sample or MREF-REC path
    Returns:
        * MetricsReport (and the per-layer maps when ``keep_maps``)
    """
    ckpt = checkpoint if isinstance(checkpoint, _training.Checkpoint) \
        else _training.load_checkpoint(checkpoint)
    if isinstance(archive, (str, _os.PathLike)):
        data = _dataset.read_archive_arrays(archive)
    elif isinstance(archive, _dataset.SampleArrays):
        data = archive
    else:
        data = _dataset.stack_samples(archive)
    if not len(data):
        raise DataError("cannot evaluate an empty archive")
    resolution = _training.check_canvas(ckpt.config, data.canvas)

    probabilities, maps = _predict_parallel(ckpt, data, batch_size, workers)
    final = maps[-1]
    curve = _stats.pr_curve(final, data.masks, thresholds)
    buckets = _stats.scale_bucket_accuracy(
        probabilities, data.color_labels, data.scales)

    report = MetricsReport(
        model_id=_file_id(checkpoint, ckpt.config.kind),
        dataset_id=_file_id(archive, "in-memory"),
        kind=ckpt.config.kind,
        samples=len(data),
        accuracy=_stats.accuracy(probabilities, data.color_labels),
        bucket_accuracy={k: float(v) for k, v in buckets.items()},
        tpr=_stats.mean_tpr(final, data.masks),
        uniform_tpr=_stats.uniform_tpr(data.masks, resolution),
        pr_curve=curve,
        average_precision=_stats.average_precision(curve))
    _log.info("%s: accuracy %.4f, TPR %.4f on %d samples", report.kind,
              report.accuracy, report.tpr, report.samples)
    if keep_maps:
        return report, maps
    return report


# ======== OUTPUT ========

def to_json(report, path=None):
    """Serializes a report; byte-identical for identical reports"""
    text = _json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if path is not None:
        _write_text(path, text)
    return text


def _write_text(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise DataError("cannot write %s: %s" % (path, e)) from e


def to_csv(report, prefix):
    """
    Writes ``<prefix>.buckets.csv`` (one row per bucket) and
    ``<prefix>.pr.csv`` (one row per threshold). Returns both paths.
    """
    buckets = _pd.DataFrame(
        [{"bucket": b, "accuracy": report.bucket_accuracy.get(b)}
         for b in _stats.SCALE_BUCKETS])
    paths = (prefix + ".buckets.csv", prefix + ".pr.csv")
    try:
        buckets.to_csv(paths[0], index=False, float_format="%.6f")
        report.pr_curve.to_csv(paths[1], index=False, float_format="%.6f")
    except OSError as e:
        raise DataError("cannot write %s: %s" % (prefix, e)) from e
    return paths


def metrics(report, display=True):
    """Prints (or returns) the metrics table of a report"""
    table = report.summary()
    if display:
        print(_tabulate(table, headers="keys", tablefmt="simple",
                        floatfmt=".2f"))
        return None
    return table


def compare(reports, display=True):
    """
    One row per model: accuracy, TPR, average precision and accuracy
    per scale bucket, all in percent.
    """
    rows = []
    for report in reports:
        row = {"Model": report.kind,
               "Accuracy": report.accuracy * 100,
               "TPR": report.tpr * 100,
               "Uniform TPR": report.uniform_tpr * 100,
               "AP": report.average_precision * 100}
        for bucket in _stats.SCALE_BUCKETS:
            value = report.bucket_accuracy.get(bucket)
            row[bucket] = _np.nan if value is None else value * 100
        rows.append(row)
    table = _pd.DataFrame(rows).set_index("Model")
    if display:
        print(_tabulate(table.fillna("-"), headers="keys", tablefmt="simple",
                        floatfmt=".2f"))
        return None
    return table


def pr_table(report, display=True):
    table = report.pr_curve.set_index("threshold")
    if display:
        print(_tabulate(table, headers="keys", tablefmt="simple",
                        floatfmt=".3f"))
        return None
    return table
