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

import matplotlib.pyplot as _plt
from matplotlib.ticker import FuncFormatter as _FuncFormatter

import numpy as _np
import seaborn as _sns

from ..exceptions import ConfigurationError


_sns.set(font_scale=1.1, rc={
    'figure.figsize': (10, 6),
    'axes.facecolor': 'white',
    'figure.facecolor': 'white',
    'grid.color': '#dddddd',
    'grid.linewidth': 0.5,
    "lines.linewidth": 1.5,
    'text.color': '#333333',
    'xtick.color': '#666666',
    'ytick.color': '#666666'
})

_FLATUI_COLORS = ["#348dc1", "#af4b64", "#4fa487", "#fedd78",
                  "#9b59b6", "#808080"]
_GRAYSCALE_COLORS = ['#222222', 'gray', 'silver'] * 3


def _get_colors(grayscale):
    if grayscale:
        return _GRAYSCALE_COLORS, .5
    return _FLATUI_COLORS, .8


def _strip_spines(ax):
    for side in ('top', 'right', 'bottom', 'left'):
        ax.spines[side].set_visible(False)


def _finish(fig, savefig, show):
    try:
        fig.tight_layout(w_pad=0, h_pad=0)
    except Exception:
        pass

    if savefig:
        if isinstance(savefig, dict):
            fig.savefig(**savefig)
        else:
            fig.savefig(savefig)

    if show:
        _plt.show(block=False)

    _plt.close(fig)

    if not show:
        return fig

    return None


# ======== OVERLAYS ========

def rescale_map(alpha):
    """(x - min) / (max - min); a constant map becomes all ones"""
    alpha = _np.asarray(alpha, dtype=_np.float64)
    low, high = alpha.min(), alpha.max()
    if high == low:
        return _np.ones_like(alpha)
    return (alpha - low) / (high - low)


def upsample(alpha, size):
    """Nearest-neighbour upsampling: each cell fills its receptive tile"""
    h, w = alpha.shape
    if size % h or size % w:
        raise ConfigurationError("cannot spread a %dx%d map over %d pixels" % (
            h, w, size))
    return _np.repeat(_np.repeat(alpha, size // h, axis=0), size // w, axis=1)


def fade(image, multiplier):
    """Image scaled pixel-wise by a [0, 1] multiplier, as uint8"""
    faded = image.astype(_np.float64) * multiplier[:, :, None]
    return _np.clip(_np.rint(faded), 0, 255).astype(_np.uint8)


# ======== CHARTS ========

def plot_image_grid(images, titles, title="", fontname='Arial',
                    figsize=None, savefig=None, show=True):

    count = len(images)
    figsize = figsize or (2.6 * count, 3.)
    fig, axes = _plt.subplots(1, count, figsize=figsize, squeeze=False)

    if title:
        fig.suptitle(title, y=.99, fontweight="bold", fontname=fontname,
                     fontsize=14, color="black")

    for ax, image, label in zip(axes[0], images, titles):
        ax.imshow(image, interpolation="nearest")
        ax.set_title(label, fontsize=11, color='gray')
        ax.set_xticks([])
        ax.set_yticks([])
        ax.grid(False)

    fig.set_facecolor('white')
    return _finish(fig, savefig, show)


def plot_pr_curves(curves, title="Segmentation Precision-Recall",
                   fontname='Arial', grayscale=False, figsize=(8, 6),
                   savefig=None, show=True):

    colors, alpha = _get_colors(grayscale)

    fig, ax = _plt.subplots(figsize=figsize)
    _strip_spines(ax)

    fig.suptitle(title, y=.99, fontweight="bold", fontname=fontname,
                 fontsize=14, color="black")

    for i, (label, curve) in enumerate(curves.items()):
        ordered = curve.sort_values("threshold")
        ax.plot(ordered["recall"], ordered["precision"], marker="o",
                markersize=3, color=colors[i % len(colors)], alpha=alpha,
                label=label)

    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Recall", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")
    ax.set_ylabel("Precision", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")
    ax.legend(fontsize=11)

    fig.set_facecolor('white')
    ax.set_facecolor('white')
    return _finish(fig, savefig, show)


def plot_bucket_bars(table, title="Accuracy by Target Scale",
                     fontname='Arial', grayscale=False, figsize=(10, 5),
                     savefig=None, show=True):
    """``table``: rows = scale buckets, columns = models, values in [0, 1]"""

    colors, _ = _get_colors(grayscale)

    fig, ax = _plt.subplots(figsize=figsize)
    _strip_spines(ax)

    fig.suptitle(title, y=.99, fontweight="bold", fontname=fontname,
                 fontsize=14, color="black")

    long = table.rename_axis("bucket").reset_index().melt(
        id_vars="bucket", var_name="model", value_name="accuracy")
    _sns.barplot(data=long, x="bucket", y="accuracy", hue="model", ax=ax,
                 palette=colors[:len(table.columns)])

    ax.yaxis.set_major_formatter(_FuncFormatter(
        lambda x, loc: "{:,}%".format(int(x * 100))))
    ax.set_xlabel("Target scale", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")
    ax.set_ylabel("Accuracy", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")

    fig.set_facecolor('white')
    ax.set_facecolor('white')
    return _finish(fig, savefig, show)


def plot_history(history, title="Training History", fontname='Arial',
                 grayscale=False, figsize=(10, 6), savefig=None, show=True):

    colors, alpha = _get_colors(grayscale)

    fig, ax = _plt.subplots(figsize=figsize)
    _strip_spines(ax)

    fig.suptitle(title, y=.99, fontweight="bold", fontname=fontname,
                 fontsize=14, color="black")

    ax.plot(history.index, history["train_loss"], color=colors[0],
            alpha=alpha, label="Train loss")
    ax.set_xlabel("Epoch", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")
    ax.set_ylabel("Loss", fontname=fontname, fontweight='bold',
                  fontsize=12, color="black")

    val = history["val_acc"].dropna()
    if len(val):
        twin = ax.twinx()
        twin.plot(val.index, val, color=colors[1], alpha=alpha, marker="o",
                  markersize=3, label="Val accuracy")
        twin.set_ylim(0, 1.02)
        twin.yaxis.set_major_formatter(_FuncFormatter(
            lambda x, loc: "{:,}%".format(int(x * 100))))
        twin.grid(False)
        _strip_spines(twin)
        handles = ax.get_legend_handles_labels()
        extra = twin.get_legend_handles_labels()
        ax.legend(handles[0] + extra[0], handles[1] + extra[1], fontsize=11)

    fig.set_facecolor('white')
    ax.set_facecolor('white')
    return _finish(fig, savefig, show)
