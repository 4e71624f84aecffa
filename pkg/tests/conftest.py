import gzip
import os
import struct

import numpy as np
import pytest

from panlab import dataset, models

DIGITS = 10


def make_glyphs(per_class=3, seed=0):
    """Blocky stand-in glyphs: a solid body with a class-specific notch"""
    rng = np.random.default_rng(seed)
    glyphs, labels = [], []
    for digit in range(DIGITS):
        for _ in range(per_class):
            glyph = np.zeros((28, 28), dtype=np.uint8)
            top, left = rng.integers(3, 6, size=2)
            glyph[top:top + 20, left:left + 16] = 255
            row = top + 2 * (digit % 5) + 2
            col = left + (0 if digit < 5 else 8)
            glyph[row:row + 3, col:col + 6] = 0
            glyphs.append(glyph)
            labels.append(digit)
    return np.stack(glyphs), np.array(labels, dtype=np.uint8)


def write_idx(path, array, magic, compress=False):
    payload = struct.pack(">I", magic)
    payload += struct.pack(">%dI" % array.ndim, *array.shape)
    payload += np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


@pytest.fixture(scope="session")
def glyph_pool():
    return dataset.GlyphPool(*make_glyphs())


@pytest.fixture
def mnist_dir(tmp_path):
    glyphs, labels = make_glyphs()
    for prefix in ("train", "t10k"):
        write_idx(os.path.join(tmp_path, "%s-images-idx3-ubyte" % prefix),
                  glyphs, dataset.IDX_IMAGES_MAGIC)
        write_idx(os.path.join(tmp_path, "%s-labels-idx1-ubyte" % prefix),
                  labels, dataset.IDX_LABELS_MAGIC)
    return str(tmp_path)


def small_gen_config(**kwargs):
    values = dict(variant="MREF", train_count=24, val_count=8, test_count=8,
                  min_digits=2, max_digits=3, canvas=48, scale_min=0.5,
                  scale_max=1.0, seed=3)
    values.update(kwargs)
    return dataset.GenConfig(**values)


@pytest.fixture
def gen_config():
    return small_gen_config()


@pytest.fixture(scope="session")
def small_samples(glyph_pool):
    return dataset.generate_split(small_gen_config(), "train", glyph_pool)


@pytest.fixture(scope="session")
def small_arrays(small_samples):
    return dataset.stack_samples(small_samples)


def small_model_config(kind="PAN", **kwargs):
    values = dict(channels=6, hidden_dim=5)
    values.update(kwargs)
    return models.ModelConfig.for_kind(kind, **values)
