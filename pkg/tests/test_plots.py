import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from panlab import models, plots, reports, training  # noqa: E402
from panlab import tensor as t  # noqa: E402
from panlab._plotting import core  # noqa: E402
from panlab.dataset import Sample  # noqa: E402
from panlab.exceptions import UsageError  # noqa: E402

from conftest import small_model_config  # noqa: E402


def _sample(canvas=96):
    rng = np.random.default_rng(0)
    image = rng.integers(1, 256, (canvas, canvas, 3), dtype=np.uint8)
    return Sample(image=image, mask=np.zeros((canvas, canvas), np.uint8),
                  query=3, color_label=0, scale=1.)


def test_rescale_and_upsample():
    np.testing.assert_array_equal(core.rescale_map(np.full((2, 2), .3)), 1)
    scaled = core.rescale_map(np.array([[1., 3.], [2., 5.]]))
    assert scaled.min() == 0 and scaled.max() == 1
    big = core.upsample(np.array([[1., 2.], [3., 4.]]), 4)
    assert big.shape == (4, 4) and (big[:2, 2:] == 2).all()


def test_uniform_map_overlay_is_the_input():
    sample = _sample()
    overlay = plots.render_attention_overlay(
        sample, [np.full((6, 6), 1 / 36.)], 0)
    assert overlay.shape == (96, 96, 3)
    assert np.array_equal(overlay, sample.image)


def test_one_hot_map_shows_a_single_tile():
    sample = _sample()
    alpha = np.zeros((6, 6))
    alpha[2, 4] = 1
    overlay = plots.render_attention_overlay(sample, [alpha], 0)
    visible = overlay.max(axis=2) > 0
    rows, cols = np.nonzero(visible)
    assert visible.sum() == 16 * 16
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == \
        (32, 47, 64, 79)


def test_accumulated_overlay_multiplies_earlier_maps():
    sample = _sample()
    first = np.zeros((2, 2))
    first[0, 0] = 1
    second = np.full((3, 3), 0.)
    second[2, 2] = 1
    maps = [first, second]
    # disjoint supports leave nothing visible
    acc = plots.render_attention_overlay(sample, maps, 1, accumulated=True)
    assert acc.max() == 0
    with pytest.raises(UsageError):
        plots.render_attention_overlay(sample, maps, 2)


def test_overlays_of_a_forward_pass():
    config = models.ModelConfig.for_kind("PAN", channels=4, hidden_dim=4)
    params = models.init_model(config, 0)
    sample = _sample()
    image = t.Tensor(sample.image.transpose(2, 0, 1)[None] / 255.)
    result = models.pan_forward(params, config, image, [sample.query])
    names = [name for name, _ in plots.attention_overlays(sample, result)]
    assert names == ["input", "layer1", "layer2", "layer3", "layer4",
                     "layer2-accumulated", "layer3-accumulated",
                     "layer4-accumulated"]
    for _, pixels in plots.attention_overlays(sample, result):
        assert pixels.shape == (96, 96, 3) and pixels.dtype == np.uint8


def test_charts_render_to_files(tmp_path, small_arrays):
    config = small_model_config("SAN", num_blocks=2)
    params = models.init_model(config, 0)
    ckpt = training.Checkpoint(config=config, params=params,
                               adam=training.AdamState.zeros(params))
    report = reports.evaluate(ckpt, small_arrays)
    history = training.history_frame([
        {"epoch": 1, "train_loss": 1.6, "val_acc": 0.2},
        {"epoch": 2, "train_loss": 1.4, "val_acc": 0.3}])

    targets = {
        "pr.png": lambda p: plots.pr_curves([report], savefig=p, show=False),
        "buckets.png": lambda p: plots.scale_accuracy(
            [report], savefig=p, show=False),
        "history.png": lambda p: plots.training_history(
            history, savefig=p, show=False),
        "panel.png": lambda p: plots.attention_panel(
            _sample(48), [np.full((12, 12), 1 / 144.)], savefig=p,
            show=False),
    }
    for name, draw in targets.items():
        path = str(tmp_path / name)
        draw(path)
        assert (tmp_path / name).stat().st_size > 0
