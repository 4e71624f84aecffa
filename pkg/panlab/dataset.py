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
Synthetic reference datasets built from MNIST glyphs.

Every image holds several distinct digits in distinct colors; a sample
asks for the color of one of them (the query) and carries the visible
pixels of that digit as a segmentation mask. Variants differ by
background: black (MREF), MNIST patch clutter (MDIST) or crops of
natural images (MBG).
"""

import gzip as _gzip
import logging as _logging
import os as _os
import struct as _struct
import zlib as _zlib
from concurrent.futures import ThreadPoolExecutor as _ThreadPoolExecutor
from dataclasses import dataclass as _dataclass, field as _field
from math import ceil as _ceil
from warnings import warn

import numpy as _np
import pandas as _pd
from scipy.ndimage import zoom as _zoom

from . import stats as _stats, utils as _utils
from .exceptions import (
    ConfigurationError, DataError, FormatError, GenerationError, UsageError
)
from .layers import make_query as _make_query
from .tensor import Tensor as _Tensor

_log = _logging.getLogger(__name__)

VARIANTS = ("MREF", "MDIST", "MBG")
SPLITS = ("train", "val", "test")

COLOR_NAMES = ("green", "yellow", "white", "red", "blue")
PALETTE = _np.array([
    [0, 255, 0],
    [255, 255, 0],
    [255, 255, 255],
    [255, 0, 0],
    [0, 0, 255],
], dtype=_np.float32)

GLYPH_SIZE = 28
NUM_CLASSES = 10
SCALE_RANGE = (0.5, 3.0)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

ARCHIVE_MAGIC = b"MREF0001"
ARCHIVE_VERSION = 1
_ARCHIVE_HEADER = _struct.Struct("<8sHHI")
_RECORD_TAIL = _struct.Struct("<BBf")

# resampling budget per sample before generation gives up
_MAX_RESAMPLES = 100


# ======== TYPES ========

@_dataclass(eq=False)
class Sample:
    image: _np.ndarray          # H x W x 3 uint8
    mask: _np.ndarray           # H x W uint8, 255 on visible target pixels
    query: int
    color_label: int
    scale: float

    @property
    def color_name(self):
        return COLOR_NAMES[self.color_label]


@_dataclass
class GenConfig:
    variant: str = "MREF"
    train_count: int = 30000
    val_count: int = 10000
    test_count: int = 10000
    min_digits: int = 5
    max_digits: int = 9
    canvas: int = 96
    color_noise: float = 15.0
    seed: int = 0
    background_dir: str = None
    max_attempts: int = 50
    scale_min: float = 0.5
    scale_max: float = 3.0
    max_overlap: float = 0.2
    distractor_patches: int = 150
    distractor_intensity: float = 0.7
    patch_size: int = 5
    shrink_rounds: int = 20

    def __post_init__(self):
        self.variant = str(self.variant).upper()
        self.validate()

    @classmethod
    def mini(cls, variant="MREF", **kwargs):
        """Desk-scale preset: 4000/1000/1000 images, 3-5 digits"""
        values = dict(train_count=4000, val_count=1000, test_count=1000,
                      min_digits=3, max_digits=5, scale_max=2.0, seed=7)
        values.update(kwargs)
        return cls(variant=variant, **values)

    @classmethod
    def full(cls, variant="MREF", **kwargs):
        """Full-size preset: 30000/10000/10000 images, 5-9 digits"""
        return cls(variant=variant, **kwargs)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                "variant must be one of %s" % ", ".join(VARIANTS))
        for split in SPLITS:
            if self.count(split) <= 0:
                raise ConfigurationError("%s_count must be > 0" % split)
        if not 1 <= self.min_digits <= self.max_digits <= NUM_CLASSES:
            raise ConfigurationError(
                "digits per image must satisfy 1 <= min <= max <= 10")
        if self.color_noise < 0:
            raise ConfigurationError("color_noise must be >= 0")
        if not SCALE_RANGE[0] <= self.scale_min <= self.scale_max \
                <= SCALE_RANGE[1]:
            raise ConfigurationError("scales must lie in [0.5, 3.0]")
        if self.canvas < round(GLYPH_SIZE * self.scale_max):
            raise ConfigurationError(
                "canvas %d cannot hold a glyph at scale %.2f" % (
                    self.canvas, self.scale_max))
        if self.max_attempts < 1 or self.shrink_rounds < 0:
            raise ConfigurationError("placement budgets must be positive")
        if not 0 <= self.max_overlap <= 1:
            raise ConfigurationError("max_overlap must lie in [0, 1]")
        if not 1 <= self.patch_size <= GLYPH_SIZE \
                or self.distractor_patches < 0:
            raise ConfigurationError("invalid distractor settings")
        if self.variant == "MBG" and not self.background_dir:
            raise ConfigurationError("MBG needs a background_dir")

    def count(self, split):
        return getattr(self, "%s_count" % split)


@_dataclass
class GlyphPool:
    glyphs: _np.ndarray         # n x 28 x 28 uint8
    labels: _np.ndarray         # n uint8
    by_class: list = _field(init=False, repr=False)

    def __post_init__(self):
        self.by_class = [_np.flatnonzero(self.labels == digit)
                         for digit in range(NUM_CLASSES)]
        missing = [d for d, idx in enumerate(self.by_class) if not len(idx)]
        if missing:
            raise DataError(
                "glyph pool lacks digit classes %s" % missing)

    def __len__(self):
        return len(self.labels)

    def draw(self, rng, digit):
        candidates = self.by_class[digit]
        return self.glyphs[candidates[rng.integers(len(candidates))]]


@_dataclass
class SampleArrays:
    """Stacked samples; ``batch`` converts a slice to model inputs"""
    images: _np.ndarray
    masks: _np.ndarray
    queries: _np.ndarray
    color_labels: _np.ndarray
    scales: _np.ndarray

    def __len__(self):
        return len(self.queries)

    @property
    def canvas(self):
        return self.images.shape[1]

    def batch(self, indices):
        return to_batch(self, indices)

    def subset(self, indices):
        return SampleArrays(self.images[indices], self.masks[indices],
                            self.queries[indices], self.color_labels[indices],
                            self.scales[indices])


# ======== MNIST ========

def _read_bytes(path):
    try:
        if str(path).endswith(".gz"):
            with _gzip.open(path, "rb") as f:
                return f.read()
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DataError("cannot read %s: %s" % (path, e)) from e


def _parse_idx(raw, magic, dims, path):
    if len(raw) < 4:
        raise FormatError("truncated IDX header", len(raw), path)
    found, = _struct.unpack_from(">I", raw)
    if found != magic:
        raise FormatError("bad IDX magic 0x%08x (expected 0x%08x)" % (
            found, magic), 0, path)
    ndim = magic & 0xff
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX header", len(raw), path)
    shape = _struct.unpack_from(">%dI" % ndim, raw, 4)
    if tuple(shape[1:]) != tuple(dims):
        raise FormatError("unexpected IDX dimensions %s" % (shape,), 8, path)
    expected = header + int(_np.prod(shape))
    if len(raw) < expected:
        raise FormatError("truncated IDX payload (%d of %d bytes)" % (
            len(raw), expected), len(raw), path)
    if len(raw) > expected:
        raise FormatError("trailing bytes after IDX payload", expected, path)
    return _np.frombuffer(raw, dtype=_np.uint8, offset=header).reshape(shape)


def load_mnist_idx(images_path, labels_path):
    """
    Parses an MNIST image/label IDX pair (optionally gzipped)

    Returns:
        * (glyphs n x 28 x 28 uint8, labels n uint8)
    """
    glyphs = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC,
                        (GLYPH_SIZE, GLYPH_SIZE), images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC,
                        (), labels_path)
    if len(glyphs) != len(labels):
        raise FormatError("image count %d does not match label count %d" % (
            len(glyphs), len(labels)), 4, labels_path)
    if len(labels) and labels.max() >= NUM_CLASSES:
        raise FormatError("label outside [0, 9]", 8, labels_path)
    return glyphs.copy(), labels.copy()


def _find_idx(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                 stem.replace("-idx", ".idx") + ".gz"):
        path = _os.path.join(directory, name)
        if _os.path.exists(path):
            return path
    raise DataError("%s not found in %s" % (stem, directory))


def load_mnist_dir(directory, split="train"):
    """Glyph pool from the standard file names (``train`` or ``t10k``)"""
    prefix = "train" if split == "train" else "t10k"
    glyphs, labels = load_mnist_idx(
        _find_idx(directory, "%s-images-idx3-ubyte" % prefix),
        _find_idx(directory, "%s-labels-idx1-ubyte" % prefix))
    return GlyphPool(glyphs, labels)


# ======== RENDERING ========

def glyph_extent(scale):
    """Side in pixels of a glyph drawn at ``scale``"""
    return max(1, int(round(GLYPH_SIZE * scale)))


def scale_glyph(glyph, scale):
    """Bilinear rescale of a 28x28 glyph to ``glyph_extent(scale)``"""
    size = glyph_extent(scale)
    scaled = _zoom(glyph.astype(_np.float32), size / float(GLYPH_SIZE),
                   order=1)
    return _np.clip(scaled, 0, 255)


def _overlap(a, b):
    """Intersection over the smaller of two square boxes (y, x, side)"""
    dy = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    dx = min(a[1] + a[2], b[1] + b[2]) - max(a[1], b[1])
    if dy <= 0 or dx <= 0:
        return 0.
    return dy * dx / float(min(a[2], b[2]) ** 2)


def _place(rng, scale, boxes, config):
    for _ in range(config.shrink_rounds + 1):
        size = glyph_extent(scale)
        for _ in range(config.max_attempts):
            y, x = rng.integers(0, config.canvas - size + 1, size=2)
            box = (int(y), int(x), size)
            if all(_overlap(box, other) <= config.max_overlap
                   for other in boxes):
                return box, scale
        # shrink and retry
        scale = float(_np.float32(rng.uniform(
            config.scale_min, max(config.scale_min, min(1.5, scale)))))
    raise GenerationError("no placement found for a digit at scale %.2f" % (
        scale))


def _draw_colors(rng, k):
    rounds = [rng.permutation(len(PALETTE)) for _ in range(_ceil(k / 5.))]
    return _np.concatenate(rounds)[:k]


def distractor_patches(rng, config, pool):
    """(y, x, patch) triples of MNIST crops for an MDIST canvas"""
    ps = config.patch_size
    patches = []
    for _ in range(config.distractor_patches):
        glyph = pool.glyphs[rng.integers(len(pool))]
        cy, cx = rng.integers(0, GLYPH_SIZE - ps + 1, size=2)
        y, x = rng.integers(0, config.canvas - ps + 1, size=2)
        patch = glyph[cy:cy + ps, cx:cx + ps].astype(_np.float32)
        patches.append((int(y), int(x), patch * config.distractor_intensity))
    return patches


def _natural_crop(rng, image, canvas):
    h, w = image.shape[:2]
    side = max(1, int(round(min(h, w) * rng.uniform(0.5, 1.0))))
    y = int(rng.integers(0, h - side + 1))
    x = int(rng.integers(0, w - side + 1))
    crop = image[y:y + side, x:x + side].astype(_np.float32)
    crop = _zoom(crop, (canvas / float(side), canvas / float(side), 1),
                 order=1)
    return _np.clip(_np.rint(crop[:canvas, :canvas]), 0, 255).astype(_np.uint8)


def make_background(rng, variant, config, pool=None, backgrounds=None):
    """
    Canvas background for ``variant``

    Returns:
        * ndarray: canvas x canvas x 3 uint8
    """
    canvas = config.canvas
    if variant == "MREF":
        return _np.zeros((canvas, canvas, 3), dtype=_np.uint8)

    if variant == "MDIST":
        gray = _np.zeros((canvas, canvas), dtype=_np.float32)
        ps = config.patch_size
        for y, x, patch in distractor_patches(rng, config, pool):
            region = gray[y:y + ps, x:x + ps]
            _np.maximum(region, patch, out=region)
        gray = _np.clip(_np.rint(gray), 0, 255).astype(_np.uint8)
        return _np.repeat(gray[:, :, None], 3, axis=2)

    if variant == "MBG":
        if not backgrounds:
            raise GenerationError("MBG needs at least one background image")
        image = backgrounds[int(rng.integers(len(backgrounds)))]
        return _natural_crop(rng, image, canvas)

    raise ConfigurationError("unknown variant `%s`" % variant)


def load_backgrounds(directory):
    """Reads every PPM/PNG image under ``directory``, skipping bad ones"""
    try:
        names = sorted(_os.listdir(directory))
    except OSError as e:
        raise GenerationError("cannot list %s: %s" % (directory, e)) from e

    images = []
    for name in names:
        if not name.lower().endswith((".ppm", ".pnm", ".png")):
            continue
        path = _os.path.join(directory, name)
        try:
            images.append(_utils.read_image(path))
        except (DataError, OSError, ValueError) as e:
            warn("Skipping unreadable background %s (%s)" % (path, e))
    if not images:
        raise GenerationError("no readable background image in %s" % directory)
    _log.info("loaded %d background images from %s", len(images), directory)
    return images


def render_sample(rng, pool, config, backgrounds=None):
    """
    Draws one sample: k distinct digits with their colors, scales and
    positions, composited over the variant background by glyph alpha.
    The mask keeps only query pixels still on top after compositing.

    The query digit is placed first on the empty canvas, so its recorded
    scale is always the uniform draw. The others are placed largest
    first and only they may be shrunk.
    """
    background = make_background(rng, config.variant, config, pool,
                                 backgrounds)
    canvas = background.astype(_np.float32)
    owner = _np.full(canvas.shape[:2], -1, dtype=_np.int16)

    k = int(rng.integers(config.min_digits, config.max_digits + 1))
    digits = rng.choice(NUM_CLASSES, size=k, replace=False)
    colors = _draw_colors(rng, k)
    glyphs = [pool.draw(rng, int(digit)) for digit in digits]
    scales = [float(s) for s in rng.uniform(
        config.scale_min, config.scale_max, size=k).astype(_np.float32)]
    target = int(rng.integers(k))

    others = sorted((d for d in range(k) if d != target),
                    key=lambda d: -scales[d])
    boxes = [None] * k
    for d in [target] + others:
        boxes[d], scales[d] = _place(
            rng, scales[d], [b for b in boxes if b is not None], config)

    for d in range(k):
        color = PALETTE[colors[d]] + rng.normal(0, config.color_noise, 3) \
            if config.color_noise > 0 else PALETTE[colors[d]]
        color = _np.clip(color, 0, 255).astype(_np.float32)

        alpha = scale_glyph(glyphs[d], scales[d]) / 255.
        y, x, size = boxes[d]
        region = canvas[y:y + size, x:x + size]
        region[:] = region * (1 - alpha[..., None]) + color * alpha[..., None]
        owner[y:y + size, x:x + size][alpha > 0.5] = d

    mask = _np.where(owner == target, 255, 0).astype(_np.uint8)
    if not mask.any():
        raise GenerationError("query digit is fully occluded")

    return Sample(image=_np.clip(_np.rint(canvas), 0, 255).astype(_np.uint8),
                  mask=mask,
                  query=int(digits[target]),
                  color_label=int(colors[target]),
                  scale=scales[target])


def split_seed(seed, split):
    """Seed of a split: seed XOR crc32(split name)"""
    return (int(seed) ^ _zlib.crc32(split.encode("utf-8"))) & 0xffffffff


def generate_sample(config, pool, seed, index, backgrounds=None):
    """Sample ``index`` of a split; its RNG stream depends on (seed, index)"""
    rng = _np.random.default_rng([seed, index])
    for attempt in range(_MAX_RESAMPLES):
        try:
            return render_sample(rng, pool, config, backgrounds), attempt
        except GenerationError:
            continue
    raise GenerationError("sample %d failed %d times" % (
        index, _MAX_RESAMPLES))


def generate_split(config, split, pool, path=None, backgrounds=None,
                   threads=1):
    """
    Generates every sample of ``split`` (and writes the archive when
    ``path`` is given). Same config => bitwise-identical output.
    """
    if split not in SPLITS:
        raise UsageError("split must be one of %s" % ", ".join(SPLITS))
    seed = split_seed(config.seed, split)
    count = config.count(split)

    def _one(index):
        return generate_sample(config, pool, seed, index, backgrounds)

    if threads > 1:
        with _ThreadPoolExecutor(max_workers=threads) as pool_exec:
            results = list(pool_exec.map(_one, range(count)))
    else:
        results = [_one(i) for i in range(count)]

    samples = [sample for sample, _ in results]
    resampled = sum(1 for _, retries in results if retries)
    if resampled:
        warn("%d of %d %s samples were resampled after placement "
             "failures" % (resampled, count, split))
    _log.info("generated %d %s %s samples", count, config.variant, split)

    if path is not None:
        write_archive(path, samples)
    return samples


# ======== ARCHIVE ========

def record_size(canvas):
    return canvas * canvas * 3 + canvas * canvas + _RECORD_TAIL.size


def write_archive(path, samples):
    """Writes samples in the MREF-REC v1 format"""
    if not samples:
        raise UsageError("cannot write an empty archive")
    canvas = samples[0].image.shape[0]
    try:
        with open(path, "wb") as f:
            f.write(_ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION,
                                         canvas, len(samples)))
            for sample in samples:
                if sample.image.shape != (canvas, canvas, 3) \
                        or sample.mask.shape != (canvas, canvas):
                    raise UsageError("samples must share one canvas size")
                f.write(_np.ascontiguousarray(sample.image, _np.uint8).tobytes())
                f.write(_np.ascontiguousarray(sample.mask, _np.uint8).tobytes())
                f.write(_RECORD_TAIL.pack(sample.query, sample.color_label,
                                          sample.scale))
    except OSError as e:
        raise DataError("cannot write %s: %s" % (path, e)) from e


def _record_dtype(canvas):
    return _np.dtype([
        ("image", _np.uint8, (canvas, canvas, 3)),
        ("mask", _np.uint8, (canvas, canvas)),
        ("query", _np.uint8),
        ("color", _np.uint8),
        ("scale", "<f4"),
    ])


def read_archive_arrays(path):
    """Reads an MREF-REC v1 archive straight into ``SampleArrays``"""
    raw = _read_bytes(path)
    if len(raw) < _ARCHIVE_HEADER.size:
        raise FormatError("truncated archive header", len(raw), path)
    magic, version, canvas, count = _ARCHIVE_HEADER.unpack_from(raw)
    if magic != ARCHIVE_MAGIC:
        raise FormatError("bad archive magic %r" % magic, 0, path)
    if version != ARCHIVE_VERSION:
        raise FormatError("unsupported archive version %d" % version, 8, path)
    if canvas < 1:
        raise FormatError("invalid canvas size", 10, path)

    expected = _ARCHIVE_HEADER.size + count * record_size(canvas)
    if len(raw) < expected:
        record = (len(raw) - _ARCHIVE_HEADER.size) // record_size(canvas)
        raise FormatError("truncated archive in record %d" % record,
                          len(raw), path)
    if len(raw) > expected:
        raise FormatError("trailing bytes after %d records" % count,
                          expected, path)

    records = _np.frombuffer(raw, dtype=_record_dtype(canvas), count=count,
                             offset=_ARCHIVE_HEADER.size)
    return SampleArrays(images=records["image"].copy(),
                        masks=records["mask"].copy(),
                        queries=records["query"].astype(_np.int64),
                        color_labels=records["color"].astype(_np.int64),
                        scales=records["scale"].astype(_np.float32))


def read_archive(path):
    """Reads an MREF-REC v1 archive into a list of samples"""
    arrays = read_archive_arrays(path)
    return [Sample(image=arrays.images[i], mask=arrays.masks[i],
                   query=int(arrays.queries[i]),
                   color_label=int(arrays.color_labels[i]),
                   scale=float(arrays.scales[i]))
            for i in range(len(arrays))]


def stack_samples(samples):
    return SampleArrays(
        images=_np.stack([s.image for s in samples]),
        masks=_np.stack([s.mask for s in samples]),
        queries=_np.array([s.query for s in samples], dtype=_np.int64),
        color_labels=_np.array([s.color_label for s in samples],
                               dtype=_np.int64),
        scales=_np.array([s.scale for s in samples], dtype=_np.float32))


def to_batch(arrays, indices):
    """
    Model inputs for a slice of stacked samples

    Returns:
        * (image Tensor N x 3 x H x W in [0, 1], one-hot queries N x 10,
           color labels N)
    """
    images = arrays.images[indices].transpose(0, 3, 1, 2)
    image = _Tensor(images.astype(_np.float32) / 255.)
    return (image, _make_query(arrays.queries[indices]),
            arrays.color_labels[indices])


# ======== CHECKS / SUMMARIES ========

def validate(samples):
    """Returns a list of problems (empty when every record is valid)"""
    problems = []
    for i, s in enumerate(samples):
        canvas = s.image.shape[0]
        if s.image.shape != (canvas, canvas, 3) or s.image.dtype != _np.uint8:
            problems.append("record %d: bad image array" % i)
            continue
        if s.mask.shape != (canvas, canvas):
            problems.append("record %d: bad mask shape" % i)
            continue
        if not _np.isin(s.mask, (0, 255)).all():
            problems.append("record %d: mask values other than 0/255" % i)
        if not s.mask.any():
            problems.append("record %d: empty mask" % i)
        elif (s.image[s.mask > 0].max(axis=1) == 0).any():
            problems.append("record %d: mask covers black pixels" % i)
        if not 0 <= s.query < NUM_CLASSES:
            problems.append("record %d: query %d out of range" % (i, s.query))
        if not 0 <= s.color_label < len(PALETTE):
            problems.append("record %d: color %d out of range" % (
                i, s.color_label))
        if not SCALE_RANGE[0] <= s.scale <= SCALE_RANGE[1]:
            problems.append("record %d: scale %.3f out of range" % (
                i, s.scale))
    return problems


def nearest_color(rgb):
    """Palette index closest to an RGB triple"""
    return int(_np.argmin(((PALETTE - _np.asarray(rgb)) ** 2).sum(axis=1)))


def describe(samples):
    """
    Archive summary: query/color balance, scale buckets, mask area

    Returns:
        * dict of pandas Series: summary, queries, colors, scales
    """
    arrays = samples if isinstance(samples, SampleArrays) \
        else stack_samples(samples)
    area = (arrays.masks > 0).mean(axis=(1, 2))
    buckets = _stats.scale_bucket(arrays.scales)
    return {
        "summary": _pd.Series({
            "samples": len(arrays),
            "canvas": arrays.canvas,
            "mean mask area %": area.mean() * 100,
            "min scale": float(arrays.scales.min()),
            "max scale": float(arrays.scales.max()),
        }),
        "queries": _pd.Series(arrays.queries).value_counts().reindex(
            range(NUM_CLASSES), fill_value=0).rename("count"),
        "colors": _pd.Series(arrays.color_labels).value_counts().reindex(
            range(len(PALETTE)), fill_value=0).rename(
                dict(enumerate(COLOR_NAMES))).rename("count"),
        "scales": _pd.Series(buckets).value_counts().reindex(
            range(len(_stats.SCALE_BUCKETS)), fill_value=0).rename(
                dict(enumerate(_stats.SCALE_BUCKETS))).rename("count"),
    }
