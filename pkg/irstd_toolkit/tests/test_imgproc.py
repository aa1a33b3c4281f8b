import numpy as np
import pytest
from pydantic import ValidationError

from irstd_toolkit.errors import InvalidArgumentError
from irstd_toolkit.imgproc import (
    BorderMode,
    PatchConfig,
    Reducer,
    adaptive_threshold,
    as_gray_image,
    box_mean,
    fold_tensor,
    patch_tensor,
    patchify,
    shift,
    threshold_level,
    unpatchify,
    white_tophat,
)


def _box_mean_loops(image, n, border):
    height, width = image.shape
    half = n // 2
    out = np.zeros_like(image)
    for y in range(height):
        for x in range(width):
            total = 0.0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    yy = border.resolve(np.array([y + dy]), height)[0]
                    xx = border.resolve(np.array([x + dx]), width)[0]
                    total += image[yy, xx]
            out[y, x] = total / (n * n)
    return out


def test_as_gray_image_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        as_gray_image(np.zeros((2, 2, 3)))
    with pytest.raises(InvalidArgumentError):
        as_gray_image(np.array([[0.0, np.nan]]))


@pytest.mark.parametrize("border", [BorderMode.REPLICATE, BorderMode.CYCLIC])
@pytest.mark.parametrize("n", [1, 3, 5])
def test_box_mean_matches_window_loops(rng, border, n):
    image = rng.random((9, 7))
    np.testing.assert_allclose(box_mean(image, n, border), _box_mean_loops(image, n, border), atol=1e-12)


def test_box_mean_of_constant_is_constant():
    np.testing.assert_allclose(box_mean(np.full((8, 8), 0.3), 5), 0.3)


@pytest.mark.parametrize("n", [3, 7, 11])
def test_cyclic_box_mean_keeps_global_mean(rng, n):
    image = rng.random((24, 31))
    assert box_mean(image, n, BorderMode.CYCLIC).mean() == pytest.approx(image.mean(), abs=1e-12)


@pytest.mark.parametrize("border", list(BorderMode))
def test_box_mean_and_shift_commute_with_offset(rng, border):
    image = rng.random((16, 20))
    np.testing.assert_allclose(box_mean(image + 0.25, 5, border), box_mean(image, 5, border) + 0.25, atol=1e-12)
    for dy, dx in [(3, -2), (-5, 7), (0, 19)]:
        np.testing.assert_allclose(shift(image + 0.25, dy, dx, border), shift(image, dy, dx, border) + 0.25, atol=1e-15)


def test_box_mean_rejects_even_size():
    with pytest.raises(InvalidArgumentError):
        box_mean(np.zeros((8, 8)), 4)


def test_shift_replicate_and_cyclic():
    image = np.arange(12, dtype=float).reshape(3, 4)
    replicated = shift(image, 1, 0, BorderMode.REPLICATE)
    np.testing.assert_array_equal(replicated[:2], image[1:])
    np.testing.assert_array_equal(replicated[2], image[2])
    cyclic = shift(image, 0, -1, BorderMode.CYCLIC)
    np.testing.assert_array_equal(cyclic, np.roll(image, 1, axis=1))


def test_shift_larger_than_image_is_rejected():
    with pytest.raises(InvalidArgumentError):
        shift(np.zeros((3, 4)), 3, 0)


def test_white_tophat_keeps_small_bright_structures():
    image = np.zeros((21, 21))
    image[10, 10] = 1.0
    image[:, :3] = 0.5
    result = white_tophat(image, se_size=5)
    assert result[10, 10] == pytest.approx(1.0)
    assert result.min() >= 0.0
    np.testing.assert_allclose(result[:, :3], 0.0)


def test_white_tophat_of_flat_image_is_zero():
    np.testing.assert_array_equal(white_tophat(np.full((16, 16), 0.4)), 0.0)


def test_patch_config_anchors_include_far_border():
    config = PatchConfig(patch_size=50, stride=10)
    assert config.anchors(100) == [0, 10, 20, 30, 40, 50]
    assert config.anchors(105) == [0, 10, 20, 30, 40, 50, 55]
    assert PatchConfig(patch_size=50, stride=10, boundary_anchor=False).anchors(105)[-1] == 50


def test_patch_config_rejects_stride_above_patch():
    with pytest.raises(ValidationError):
        PatchConfig(patch_size=5, stride=6)


def test_patchify_layout(rng):
    image = rng.random((100, 100))
    patches = patchify(image, PatchConfig())
    assert patches.shape == (2500, 36)
    np.testing.assert_array_equal(patches.data[:, 0], image[:50, :50].ravel())
    np.testing.assert_array_equal(patches.data[:, 1], image[:50, 10:60].ravel())


def test_patchify_256_gives_484_patches():
    assert patchify(np.zeros((256, 256)), PatchConfig()).shape == (2500, 484)


@pytest.mark.parametrize("reducer", list(Reducer))
def test_unpatchify_restores_image(rng, reducer):
    image = rng.random((73, 61))
    config = PatchConfig(patch_size=20, stride=7)
    np.testing.assert_allclose(unpatchify(patchify(image, config), reducer), image, atol=1e-12)


def test_unpatchify_restores_image_over_random_geometry(rng):
    for _ in range(25):
        height, width = (int(v) for v in rng.integers(8, 60, size=2))
        patch_size = int(rng.integers(1, min(height, width) + 1))
        config = PatchConfig(patch_size=patch_size, stride=int(rng.integers(1, patch_size + 1)))
        image = rng.random((height, width))
        for reducer in Reducer:
            np.testing.assert_allclose(unpatchify(patchify(image, config), reducer), image, atol=1e-12)


def test_unpatchify_median_resists_one_outlier_patch():
    image = np.ones((30, 30))
    patches = patchify(image, PatchConfig(patch_size=10, stride=5))
    patches.data[:, 0] = 100.0
    folded_median = unpatchify(patches, Reducer.MEDIAN)
    folded_mean = unpatchify(patches, Reducer.MEAN)
    # pixel (7, 7) is covered by four windows, one of them corrupted
    assert folded_median[7, 7] == pytest.approx(1.0)
    assert folded_mean[7, 7] > 1.0


def test_patch_tensor_layout_and_fold(rng):
    image = rng.random((64, 80))
    config = PatchConfig(patch_size=30, stride=10)
    tensor = patch_tensor(image, config)
    assert tensor.shape == (30, 30, len(config.anchors(64)) * len(config.anchors(80)))
    np.testing.assert_array_equal(tensor.data[:, :, 0], image[:30, :30])
    np.testing.assert_allclose(fold_tensor(tensor), image, atol=1e-12)


def test_patch_larger_than_image_is_rejected():
    with pytest.raises(InvalidArgumentError):
        patchify(np.zeros((40, 40)), PatchConfig())


def test_threshold_level_and_strict_selection():
    saliency = np.zeros((10, 10))
    saliency[5, 5] = 1.0
    level = threshold_level(saliency, k=3)
    assert level == pytest.approx(saliency.mean() + 3 * saliency.std())
    mask = adaptive_threshold(saliency, k=3)
    assert mask.sum() == 1 and mask[5, 5]
    assert threshold_level(saliency, k=0, v_min=0.5) == 0.5
    assert not adaptive_threshold(np.full((4, 4), 0.2), k=0).any()


def test_threshold_rejects_negative_k():
    with pytest.raises(InvalidArgumentError):
        threshold_level(np.zeros((4, 4)), k=-1)


def test_adaptive_threshold_shrinks_as_k_grows(rng):
    saliency = rng.random((40, 40)) ** 4
    masks = [adaptive_threshold(saliency, k) for k in (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)]
    for looser, stricter in zip(masks, masks[1:]):
        assert not (stricter & ~looser).any()
