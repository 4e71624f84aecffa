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

import dataclasses as _dataclasses
import hashlib as _hashlib
import os as _os
import re as _regex

import numpy as _np

from .exceptions import ConfigurationError, DataError, FormatError

THREADS_ENV = "PAN_LAB_THREADS"

_PPM_TOKEN = _regex.compile(rb"(?:\s|#[^\n]*\n)*([^\s#]+)")
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


# ======== IMAGES ========

def _is_png(path):
    return str(path).lower().endswith(".png")


def write_image(path, pixels):
    """Writes H x W x 3 uint8 pixels as binary PPM (P6), or PNG by suffix"""
    pixels = _np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ConfigurationError("write_image expects H x W x 3 pixels")
    pixels = _np.ascontiguousarray(_np.clip(pixels, 0, 255).astype(_np.uint8))
    try:
        if _is_png(path):
            import matplotlib.image as _mpimg
            _mpimg.imsave(path, pixels)
            return
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (pixels.shape[1], pixels.shape[0]))
            f.write(pixels.tobytes())
    except OSError as e:
        raise DataError("cannot write image %s: %s" % (path, e)) from e


def _parse_ppm(raw, path):
    tokens, pos = [], 0
    for _ in range(4):
        match = _PPM_TOKEN.match(raw, pos)
        if match is None:
            raise FormatError("truncated PPM header", pos, path)
        tokens.append(match.group(1))
        pos = match.end()
    if tokens[0] != b"P6":
        raise FormatError("not a binary PPM (P6) image", 0, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError("bad PPM header value", 2, path) from e
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise FormatError("unsupported PPM geometry or depth", 2, path)
    # exactly one whitespace byte separates the header from the pixels
    pos += 1
    expected = pos + width * height * 3
    if len(raw) < expected:
        raise FormatError("truncated PPM pixel data", len(raw), path)
    pixels = _np.frombuffer(raw, dtype=_np.uint8, count=width * height * 3,
                            offset=pos).reshape(height, width, 3)
    if maxval != 255:
        pixels = _np.rint(pixels * (255. / maxval)).astype(_np.uint8)
    return pixels.copy()


def read_image(path):
    """Reads a PPM (P6) or PNG image as H x W x 3 uint8"""
    if _is_png(path):
        import matplotlib.image as _mpimg
        try:
            image = _mpimg.imread(path)
        except (OSError, SyntaxError) as e:
            raise DataError("cannot read image %s: %s" % (path, e)) from e
        if image.dtype != _np.uint8:
            image = _np.rint(_np.clip(image, 0, 1) * 255).astype(_np.uint8)
        if image.ndim == 2:
            image = _np.repeat(image[:, :, None], 3, axis=2)
        return _np.ascontiguousarray(image[:, :, :3])
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError("cannot read image %s: %s" % (path, e)) from e
    return _parse_ppm(raw, path)


def file_digest(path, length=16):
    """Short sha256 of a file, used as model/dataset id"""
    digest = _hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for block in iter(lambda: f.read(1 << 20), b""):
                digest.update(block)
    except OSError as e:
        raise DataError("cannot read %s: %s" % (path, e)) from e
    return digest.hexdigest()[:length]


# ======== CONFIG FILES ========

def read_config(path):
    """
    Parses a flat ``key = value`` file. Blank lines and ``#`` comments are
    ignored; repeated keys and lines without ``=`` are errors.
    """
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError("cannot read config %s: %s" % (path, e)) from e

    values = {}
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError("%s:%d: expected `key = value`" % (
                path, number))
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError("%s:%d: empty key" % (path, number))
        if key in values:
            raise ConfigurationError("%s:%d: duplicate key `%s`" % (
                path, number, key))
        values[key] = value
    return values


def _coerce(key, raw, field):
    if raw.lower() in ("none", "") and field.default is None:
        return None
    kind = field.type
    try:
        if kind is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError as e:
        raise ConfigurationError("`%s`: cannot parse `%s` as %s" % (
            key, raw, kind.__name__)) from e
    raise ConfigurationError("`%s` cannot be set from a config file" % key)


def coerce_config(values, *classes, extra=()):
    """
    Routes config keys to the dataclass that declares them and converts
    each value by field type. Unknown keys are an error.

    Returns:
        * one kwargs dict per class, then a dict of ``extra`` keys
    """
    owners = {}
    for cls in classes:
        for field in _dataclasses.fields(cls):
            owners.setdefault(field.name, (cls, field))
    unknown = sorted(k for k in values if k not in owners and k not in extra)
    if unknown:
        raise ConfigurationError("unknown config key(s): %s" % ", ".join(
            unknown))

    routed = {cls: {} for cls in classes}
    extras = {}
    for key, raw in values.items():
        if key in extra:
            extras[key] = raw
            continue
        cls, field = owners[key]
        routed[cls][key] = _coerce(key, raw, field)
    return [routed[cls] for cls in classes] + [extras]


# ======== RUNTIME ========

def resolve_threads(threads=None):
    """``threads`` if given, else $PAN_LAB_THREADS, else 1"""
    if threads is None:
        threads = _os.environ.get(THREADS_ENV) or 1
    try:
        threads = int(threads)
    except (TypeError, ValueError) as e:
        raise ConfigurationError("thread count must be an integer") from e
    if threads < 1:
        raise ConfigurationError("thread count must be >= 1")
    return threads
