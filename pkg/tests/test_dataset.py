import os

import numpy as np
import pytest
from scipy.stats import chisquare

from panlab import dataset, utils
from panlab.exceptions import (
    ConfigurationError, DataError, FormatError, GenerationError, UsageError
)

from conftest import make_glyphs, small_gen_config, write_idx


# ======== MNIST IDX ========

@pytest.mark.parametrize("compress", [False, True])
def test_idx_pair_roundtrip(tmp_path, compress):
    glyphs, labels = make_glyphs(per_class=2)
    suffix = ".gz" if compress else ""
    images = write_idx(str(tmp_path / ("img" + suffix)), glyphs,
                       dataset.IDX_IMAGES_MAGIC, compress)
    names = write_idx(str(tmp_path / ("lbl" + suffix)), labels,
                      dataset.IDX_LABELS_MAGIC, compress)
    got_glyphs, got_labels = dataset.load_mnist_idx(images, names)
    assert np.array_equal(got_glyphs, glyphs)
    assert np.array_equal(got_labels, labels)


def test_idx_bad_magic_reports_offset_zero(tmp_path):
    glyphs, labels = make_glyphs(per_class=1)
    images = write_idx(str(tmp_path / "img"), glyphs, 0x0803 + 0x100)
    names = write_idx(str(tmp_path / "lbl"), labels, dataset.IDX_LABELS_MAGIC)
    with pytest.raises(FormatError) as err:
        dataset.load_mnist_idx(images, names)
    assert err.value.offset == 0
    assert err.value.exit_code == 2


def test_idx_truncated_payload(tmp_path):
    glyphs, labels = make_glyphs(per_class=1)
    images = write_idx(str(tmp_path / "img"), glyphs,
                       dataset.IDX_IMAGES_MAGIC)
    names = write_idx(str(tmp_path / "lbl"), labels, dataset.IDX_LABELS_MAGIC)
    with open(images, "rb+") as f:
        f.truncate(os.path.getsize(images) - 10)
    with pytest.raises(FormatError):
        dataset.load_mnist_idx(images, names)


def test_idx_count_mismatch(tmp_path):
    glyphs, labels = make_glyphs(per_class=1)
    images = write_idx(str(tmp_path / "img"), glyphs,
                       dataset.IDX_IMAGES_MAGIC)
    names = write_idx(str(tmp_path / "lbl"), labels[:-1],
                      dataset.IDX_LABELS_MAGIC)
    with pytest.raises(FormatError):
        dataset.load_mnist_idx(images, names)


def test_mnist_dir_finds_standard_names(mnist_dir):
    pool = dataset.load_mnist_dir(mnist_dir, "train")
    assert len(pool) == 30
    assert all(len(idx) == 3 for idx in pool.by_class)
    with pytest.raises(DataError):
        dataset.load_mnist_dir(os.path.join(mnist_dir, "missing"))


def test_glyph_pool_needs_every_class():
    glyphs, labels = make_glyphs(per_class=1)
    with pytest.raises(DataError):
        dataset.GlyphPool(glyphs[labels != 4], labels[labels != 4])


# ======== CONFIG ========

def test_presets():
    mini = dataset.GenConfig.mini("mdist")
    assert mini.variant == "MDIST"
    assert (mini.train_count, mini.val_count, mini.test_count) == \
        (4000, 1000, 1000)
    assert (mini.min_digits, mini.max_digits, mini.scale_max) == (3, 5, 2.)
    full = dataset.GenConfig.full()
    assert (full.train_count, full.min_digits, full.max_digits) == \
        (30000, 5, 9)
    assert full.canvas == 96 and full.color_noise == 15


@pytest.mark.parametrize("kwargs", [
    dict(variant="MNIST"),
    dict(min_digits=4, max_digits=3),
    dict(max_digits=11),
    dict(scale_min=0.2),
    dict(scale_max=3.5),
    dict(canvas=40, scale_max=2.0),
    dict(val_count=0),
    dict(variant="MBG"),
    dict(color_noise=-1),
])
def test_invalid_gen_configs(kwargs):
    with pytest.raises(ConfigurationError):
        small_gen_config(**kwargs)


def test_split_seeds_differ():
    seeds = {dataset.split_seed(0, s) for s in dataset.SPLITS}
    assert len(seeds) == 3
    assert dataset.split_seed(5, "train") != dataset.split_seed(6, "train")


# ======== RENDERING ========

def test_samples_satisfy_record_invariants(small_samples):
    assert len(small_samples) == 24
    assert dataset.validate(small_samples) == []
    for s in small_samples:
        assert s.image.shape == (48, 48, 3) and s.image.dtype == np.uint8
        assert set(np.unique(s.mask)) <= {0, 255} and s.mask.any()
        assert 0.5 <= s.scale <= 1.0


def test_noise_free_target_color_matches_label(glyph_pool):
    config = small_gen_config(color_noise=0, seed=11)
    for index in range(10):
        sample, _ = dataset.generate_sample(config, glyph_pool, 99, index)
        values, counts = np.unique(sample.image[sample.mask > 0], axis=0,
                                   return_counts=True)
        assert dataset.nearest_color(values[counts.argmax()]) \
            == sample.color_label
        assert sample.color_name == dataset.COLOR_NAMES[sample.color_label]


def test_colors_are_distinct_up_to_palette_size():
    rng = np.random.default_rng(0)
    for k in range(1, 6):
        assert len(set(dataset._draw_colors(rng, k))) == k
    colors = dataset._draw_colors(rng, 9)
    assert sorted(colors[:5]) == list(range(5))


def test_scaled_glyph_extent():
    glyph = np.full((28, 28), 255, dtype=np.uint8)
    assert dataset.scale_glyph(glyph, 0.5).shape == (14, 14)
    assert dataset.scale_glyph(glyph, 3.0).shape == (84, 84)
    assert dataset.glyph_extent(1.25) == 35


def test_overlap_fraction():
    assert dataset._overlap((0, 0, 10), (20, 20, 10)) == 0
    assert dataset._overlap((0, 0, 10), (5, 0, 10)) == pytest.approx(0.5)
    assert dataset._overlap((0, 0, 20), (0, 0, 10)) == 1


def test_generation_is_deterministic(glyph_pool):
    config = small_gen_config(train_count=6)
    a = dataset.generate_split(config, "train", glyph_pool)
    b = dataset.generate_split(config, "train", glyph_pool, threads=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.mask, y.mask)
        assert (x.query, x.color_label, x.scale) == \
            (y.query, y.color_label, y.scale)


def test_splits_use_different_streams(glyph_pool):
    config = small_gen_config(train_count=4, val_count=4)
    train = dataset.generate_split(config, "train", glyph_pool)
    val = dataset.generate_split(config, "val", glyph_pool)
    assert not np.array_equal(train[0].image, val[0].image)
    with pytest.raises(UsageError):
        dataset.generate_split(config, "dev", glyph_pool)


def test_mdist_background_has_patch_clutter(glyph_pool):
    config = small_gen_config(variant="MDIST", distractor_patches=40)
    rng = np.random.default_rng(0)
    patches = dataset.distractor_patches(rng, config, glyph_pool)
    assert len(patches) == 40
    assert all(p.shape == (5, 5) for _, _, p in patches)
    background = dataset.make_background(
        np.random.default_rng(1), "MDIST", config, glyph_pool)
    assert background.shape == (48, 48, 3)
    assert background.max() <= 179
    assert (background[..., 0] == background[..., 2]).all()


def test_mbg_skips_unreadable_backgrounds(tmp_path, glyph_pool):
    rng = np.random.default_rng(0)
    utils.write_image(str(tmp_path / "a.ppm"),
                      rng.integers(0, 256, (60, 80, 3), dtype=np.uint8))
    (tmp_path / "broken.ppm").write_bytes(b"P6\n10")
    with pytest.warns(UserWarning, match="broken.ppm"):
        backgrounds = dataset.load_backgrounds(str(tmp_path))
    assert len(backgrounds) == 1

    config = small_gen_config(variant="MBG", background_dir=str(tmp_path),
                              train_count=3)
    samples = dataset.generate_split(config, "train", glyph_pool,
                                     backgrounds=backgrounds)
    assert dataset.validate(samples) == []
    assert all(s.image.shape == (48, 48, 3) for s in samples)


# ======== ARCHIVE ========

def test_archive_roundtrip(tmp_path, small_samples):
    path = str(tmp_path / "set.rec")
    dataset.write_archive(path, small_samples)
    assert os.path.getsize(path) == 16 + 24 * dataset.record_size(48)
    assert dataset.record_size(96) == 37870

    restored = dataset.read_archive(path)
    for a, b in zip(small_samples, restored):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)
        assert (a.query, a.color_label) == (b.query, b.color_label)
        assert np.float32(a.scale) == np.float32(b.scale)


def test_archive_written_twice_is_identical(tmp_path, small_samples):
    first, second = str(tmp_path / "a.rec"), str(tmp_path / "b.rec")
    dataset.write_archive(first, small_samples)
    dataset.write_archive(second, small_samples)
    assert utils.file_digest(first) == utils.file_digest(second)


@pytest.mark.parametrize("corrupt", ["magic", "version", "truncate",
                                     "trailing"])
def test_archive_corruption_is_a_format_error(tmp_path, small_samples,
                                              corrupt):
    path = str(tmp_path / "set.rec")
    dataset.write_archive(path, small_samples[:3])
    raw = bytearray(open(path, "rb").read())
    if corrupt == "magic":
        raw[0:8] = b"XXXX0001"
    elif corrupt == "version":
        raw[8] = 9
    elif corrupt == "truncate":
        raw = raw[:-7]
    else:
        raw += b"\x00"
    with open(path, "wb") as f:
        f.write(bytes(raw))
    with pytest.raises(FormatError) as err:
        dataset.read_archive_arrays(path)
    if corrupt == "magic":
        assert err.value.offset == 0


def test_empty_archive_is_refused(tmp_path):
    with pytest.raises(UsageError):
        dataset.write_archive(str(tmp_path / "x.rec"), [])


def test_batch_conversion(small_arrays):
    image, query, labels = small_arrays.batch(np.arange(4))
    assert image.shape == (4, 3, 48, 48)
    assert 0 <= image.data.min() and image.data.max() <= 1
    assert np.array_equal(query.argmax(axis=1), small_arrays.queries[:4])
    assert np.array_equal(labels, small_arrays.color_labels[:4])
    assert len(small_arrays.subset([1, 2])) == 2


# ======== CHECKS ========

def test_validate_flags_broken_records(small_samples):
    broken = dataset.Sample(image=small_samples[0].image,
                            mask=np.zeros((48, 48), dtype=np.uint8),
                            query=12, color_label=1, scale=4.0)
    problems = dataset.validate([broken])
    assert any("empty mask" in p for p in problems)
    assert any("query" in p for p in problems)
    assert any("scale" in p for p in problems)


def test_describe_counts(small_samples):
    summary = dataset.describe(small_samples)
    assert summary["summary"]["samples"] == 24
    assert summary["queries"].sum() == 24
    assert list(summary["colors"].index) == list(dataset.COLOR_NAMES)
    assert summary["scales"].sum() == 24
    assert summary["scales"]["0.5-1.0"] >= 1



# ======== SAMPLING STATISTICS ========

def test_idx_labels_above_nine_are_refused(tmp_path):
    glyphs, labels = make_glyphs(per_class=1)
    labels = labels.copy()
    labels[3] = 10
    images = write_idx(str(tmp_path / "img"), glyphs,
                       dataset.IDX_IMAGES_MAGIC)
    names = write_idx(str(tmp_path / "lbl"), labels, dataset.IDX_LABELS_MAGIC)
    with pytest.raises(FormatError, match="label"):
        dataset.load_mnist_idx(images, names)


def test_query_scales_stay_uniform(glyph_pool):
    config = small_gen_config(canvas=96, min_digits=3, max_digits=3,
                              scale_max=3.0, train_count=1500, seed=21)
    samples = dataset.generate_split(config, "train", glyph_pool, threads=4)
    scales = np.array([s.scale for s in samples])
    assert ((0.5 <= scales) & (scales <= 3.0)).all()
    counts, _ = np.histogram(scales, bins=5, range=(0.5, 3.0))
    assert chisquare(counts).pvalue > 0.01


def _visible_area(glyph, scale):
    return int((dataset.scale_glyph(glyph, scale) / 255. > 0.5).sum())


def test_single_digit_mask_is_the_whole_glyph(glyph_pool):
    config = small_gen_config(min_digits=1, max_digits=1, seed=13)
    for index in range(12):
        sample, _ = dataset.generate_sample(config, glyph_pool, 5, index)
        candidates = {_visible_area(glyph_pool.glyphs[i], sample.scale)
                      for i in glyph_pool.by_class[sample.query]}
        assert (sample.mask > 0).sum() in candidates


def test_mask_area_matches_an_independent_simulation(glyph_pool):
    config = small_gen_config(min_digits=1, max_digits=1, train_count=400,
                              seed=17)
    samples = dataset.generate_split(config, "train", glyph_pool, threads=4)
    observed = np.mean([(s.mask > 0).mean() for s in samples])

    rng = np.random.default_rng(0)
    areas = [_visible_area(glyph_pool.glyphs[rng.integers(len(glyph_pool))],
                           float(np.float32(rng.uniform(0.5, 1.0))))
             for _ in range(2000)]
    expected = np.mean(areas) / 48. ** 2
    assert observed == pytest.approx(expected, rel=0.1)


def test_occlusion_only_removes_query_pixels(glyph_pool):
    config = small_gen_config(min_digits=3, max_digits=3, seed=19)
    for index in range(12):
        sample, _ = dataset.generate_sample(config, glyph_pool, 7, index)
        largest = max(_visible_area(glyph_pool.glyphs[i], sample.scale)
                      for i in glyph_pool.by_class[sample.query])
        assert 0 < (sample.mask > 0).sum() <= largest


def test_noisy_target_color_is_recoverable(glyph_pool):
    config = small_gen_config(color_noise=15, seed=23)
    for index in range(20):
        sample, _ = dataset.generate_sample(config, glyph_pool, 3, index)
        mean = sample.image[sample.mask > 0].astype(float).mean(axis=0)
        assert dataset.nearest_color(mean) == sample.color_label


def test_crowded_canvas_raises_after_shrinking():
    config = small_gen_config(scale_max=0.5, max_overlap=0, max_attempts=5,
                              shrink_rounds=2)
    rng = np.random.default_rng(0)
    # nine 16 px boxes tile the whole 48 px canvas
    boxes = [(y, x, 16) for y in (0, 16, 32) for x in (0, 16, 32)]
    with pytest.raises(GenerationError):
        dataset._place(rng, 0.5, boxes, config)


def test_placement_failures_are_resampled_with_a_warning(glyph_pool,
                                                         monkeypatch):
    render = dataset.render_sample
    calls = []

    def flaky(rng, pool, config, backgrounds=None):
        calls.append(1)
        if len(calls) == 1:
            raise GenerationError("no placement found")
        return render(rng, pool, config, backgrounds)

    monkeypatch.setattr(dataset, "render_sample", flaky)
    config = small_gen_config(train_count=3)
    with pytest.warns(UserWarning, match="1 of 3 train samples"):
        samples = dataset.generate_split(config, "train", glyph_pool)
    assert len(samples) == 3 and dataset.validate(samples) == []

    def broken(rng, pool, config, backgrounds=None):
        raise GenerationError("no placement found")

    monkeypatch.setattr(dataset, "render_sample", broken)
    with pytest.raises(GenerationError):
        dataset.generate_sample(config, glyph_pool, 0, 0)
