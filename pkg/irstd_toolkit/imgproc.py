"""
Image primitives shared by every detector.

Images are plain 2-D ``float64`` numpy arrays (``GrayImage``) with intensities
normalized to [0, 1]; masks are 2-D ``bool`` arrays (``BinaryMask``).
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

GrayImage = npt.NDArray[np.float64]
BinaryMask = npt.NDArray[np.bool_]


class BorderMode(str, Enum):
    """How indices outside the image are resolved."""

    REPLICATE = "replicate"
    CYCLIC = "cyclic"

    @property
    def ndimage_mode(self) -> str:
        return "nearest" if self is BorderMode.REPLICATE else "wrap"

    def resolve(self, indices: np.ndarray, length: int) -> np.ndarray:
        if self is BorderMode.CYCLIC:
            return np.mod(indices, length)
        return np.clip(indices, 0, length - 1)


class Reducer(str, Enum):
    """How overlapping patch entries are combined when folding back."""

    MEAN = "mean"
    MEDIAN = "median"


def as_gray_image(data) -> GrayImage:
    """
    Validate and convert array-like data to a ``GrayImage``.

    Args:
        data: Anything ``np.asarray`` accepts.

    Returns:
        GrayImage: A 2-D float64 array with only finite values.
    """
    image = np.asarray(data, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidArgumentError(f"Expected a non-empty 2-D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidArgumentError("Image contains non-finite values")
    return image


def _check_odd(value: int, name: str, minimum: int) -> None:
    if value < minimum or value % 2 == 0:
        raise InvalidArgumentError(f"{name} must be odd and >= {minimum}, got {value}")


def box_mean(image: GrayImage, n: int, border: BorderMode = BorderMode.REPLICATE) -> GrayImage:
    """Mean over the n×n window centered on every pixel."""
    image = as_gray_image(image)
    _check_odd(n, "n", minimum=1)
    return ndimage.uniform_filter(image, size=n, mode=BorderMode(border).ndimage_mode)


def shift(image: GrayImage, dy: int, dx: int, border: BorderMode = BorderMode.REPLICATE) -> GrayImage:
    """
    Whole-image shift: ``output[y, x] = image[y + dy, x + dx]``.

    Out-of-range source indices are resolved by ``border``.
    """
    image = as_gray_image(image)
    height, width = image.shape
    if abs(dy) >= height or abs(dx) >= width:
        raise InvalidArgumentError(
            f"Shift ({dy}, {dx}) must be smaller than the image dims {image.shape}"
        )
    border = BorderMode(border)
    rows = border.resolve(np.arange(height) + dy, height)
    cols = border.resolve(np.arange(width) + dx, width)
    return image[np.ix_(rows, cols)]


def white_tophat(image: GrayImage, se_size: int = 11) -> GrayImage:
    """
    White top-hat with a flat square structuring element.

    Keeps structures that are both brighter than their surroundings and
    smaller than ``se_size``; the result is never negative.
    """
    image = as_gray_image(image)
    _check_odd(se_size, "se_size", minimum=3)
    opened = ndimage.grey_opening(image, size=(se_size, se_size), mode="nearest")
    return image - np.minimum(image, opened)


class PatchConfig(BaseModel):
    """Sliding-window geometry for patch-image and patch-tensor models."""

    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(50, ge=1, description="side of the square window in pixels")
    stride: int = Field(10, ge=1, description="step between window anchors in pixels")
    boundary_anchor: bool = Field(
        True, description="add a final window flush with the far border when the stride misses it"
    )

    @model_validator(mode="after")
    def _stride_within_patch(self) -> "PatchConfig":
        if self.stride > self.patch_size:
            raise ValueError(f"stride {self.stride} exceeds patch_size {self.patch_size}")
        return self

    def check_fits(self, shape: tuple[int, int]) -> None:
        if self.patch_size > min(shape):
            raise InvalidArgumentError(
                f"Patch size {self.patch_size} is larger than the image {shape}"
            )

    def anchors(self, length: int) -> list[int]:
        """Window start offsets along one axis of the given length."""
        last = length - self.patch_size
        positions = list(range(0, last + 1, self.stride))
        if self.boundary_anchor and positions[-1] != last:
            positions.append(last)
        return positions


@dataclass(frozen=True)
class PatchMatrix:
    """Patch-image: one row-major vectorized window per column."""

    data: np.ndarray
    config: PatchConfig
    source_shape: tuple[int, int]
    anchors: list[tuple[int, int]]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PatchTensor:
    """Patch-tensor: windows stacked along the third axis (I × J × P)."""

    data: np.ndarray
    config: PatchConfig
    source_shape: tuple[int, int]
    anchors: list[tuple[int, int]]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _extract_windows(image: GrayImage, config: PatchConfig) -> tuple[np.ndarray, list[tuple[int, int]]]:
    image = as_gray_image(image)
    config.check_fits(image.shape)
    size = config.patch_size
    ys = config.anchors(image.shape[0])
    xs = config.anchors(image.shape[1])
    view = sliding_window_view(image, (size, size))
    windows = view[np.ix_(ys, xs)].reshape(-1, size, size)
    anchors = [(y, x) for y in ys for x in xs]
    return windows, anchors


def _fold_windows(
    windows: np.ndarray,
    anchors: list[tuple[int, int]],
    shape: tuple[int, int],
    reducer: Reducer,
) -> GrayImage:
    size = windows.shape[1]
    if len(anchors) != windows.shape[0] or windows.shape[1:] != (size, size):
        raise InvalidArgumentError(
            f"{windows.shape[0]} windows do not match {len(anchors)} anchors"
        )
    for y, x in anchors:
        if y < 0 or x < 0 or y + size > shape[0] or x + size > shape[1]:
            raise InvalidArgumentError(f"Anchor ({y}, {x}) lies outside the source image {shape}")

    count = np.zeros(shape, dtype=np.int64)
    for y, x in anchors:
        count[y:y + size, x:x + size] += 1
    covered = count > 0
    result = np.zeros(shape, dtype=np.float64)

    if Reducer(reducer) is Reducer.MEAN:
        total = np.zeros(shape, dtype=np.float64)
        for (y, x), window in zip(anchors, windows):
            total[y:y + size, x:x + size] += window
        result[covered] = total[covered] / count[covered]
        return result

    stack = np.full((int(count.max()), *shape), np.nan)
    level = np.zeros(shape, dtype=np.int64)
    rows, cols = np.mgrid[0:size, 0:size]
    for (y, x), window in zip(anchors, windows):
        depth = level[y:y + size, x:x + size]
        stack[depth, rows + y, cols + x] = window
        level[y:y + size, x:x + size] += 1
    result[covered] = np.nanmedian(stack[:, covered], axis=0)
    return result


def patchify(image: GrayImage, config: PatchConfig) -> PatchMatrix:
    """Rearrange an image into its patch-image (patch_size² × P)."""
    windows, anchors = _extract_windows(image, config)
    data = np.ascontiguousarray(windows.reshape(len(anchors), -1).T)
    return PatchMatrix(data=data, config=config, source_shape=image.shape, anchors=anchors)


def unpatchify(patches: PatchMatrix, reducer: Reducer = Reducer.MEAN) -> GrayImage:
    """
    Fold a patch-image back to an image.

    Each pixel is the reducer over all patch entries covering it; pixels no
    window covers are 0.
    """
    size = patches.config.patch_size
    if patches.data.shape != (size * size, len(patches.anchors)):
        raise InvalidArgumentError(
            f"Patch matrix of shape {patches.data.shape} does not match its metadata"
        )
    windows = patches.data.T.reshape(-1, size, size)
    return _fold_windows(windows, patches.anchors, patches.source_shape, reducer)


def patch_tensor(image: GrayImage, config: PatchConfig) -> PatchTensor:
    """Stack the sliding windows of an image into an I × J × P tensor."""
    windows, anchors = _extract_windows(image, config)
    data = np.ascontiguousarray(np.moveaxis(windows, 0, 2))
    return PatchTensor(data=data, config=config, source_shape=image.shape, anchors=anchors)


def fold_tensor(tensor: PatchTensor, reducer: Reducer = Reducer.MEAN) -> GrayImage:
    """Inverse of ``patch_tensor`` with overlaps combined by ``reducer``."""
    size = tensor.config.patch_size
    if tensor.data.shape != (size, size, len(tensor.anchors)):
        raise InvalidArgumentError(
            f"Patch tensor of shape {tensor.data.shape} does not match its metadata"
        )
    windows = np.moveaxis(tensor.data, 2, 0)
    return _fold_windows(windows, tensor.anchors, tensor.source_shape, reducer)


def threshold_level(saliency: GrayImage, k: float, v_min: float = 0.0) -> float:
    """The segmentation level ``max(v_min, mean + k * std)`` of a map."""
    if k < 0:
        raise InvalidArgumentError(f"Threshold factor k must be >= 0, got {k}")
    saliency = as_gray_image(saliency)
    return max(float(v_min), float(saliency.mean() + k * saliency.std()))


def adaptive_threshold(saliency: GrayImage, k: float, v_min: float = 0.0) -> BinaryMask:
    """Select pixels strictly above ``threshold_level(saliency, k, v_min)``."""
    level = threshold_level(saliency, k, v_min)
    return np.asarray(saliency) > level
