"""
Model-driven detectors: image -> saliency map -> mask.

Defaults follow the reference hyper-parameter table of the non-learning
methods (patch 50×50, stride 10, threshold factor k = 10 for the low-rank
models; MPCM scales N = 1, 3, ..., 9).
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import thread_count
from .detector_protocol import Detector
from .errors import InvalidArgumentError
from .imgproc import (
    BinaryMask,
    BorderMode,
    GrayImage,
    PatchConfig,
    Reducer,
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
from .lowrank import EnergyCriterion, RpcaConfig, TensorRpcaConfig, rpca_ialm, tensor_rpca

logger = logging.getLogger(__name__)

# Neighbour cell offsets ordered so that entries i and i + 4 are opposite.
_DIRECTIONS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass
class Detection:
    """Result of one detector run on one image."""

    method: str
    saliency: GrayImage
    mask: BinaryMask
    threshold: float
    timing: dict[str, float] = field(default_factory=dict)
    diagnostics: dict | None = None

    @property
    def total_ms(self) -> float:
        return sum(self.timing.values())

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True)) if self.diagnostics else True

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "shape": list(self.saliency.shape),
            "threshold": self.threshold,
            "mask_pixels": int(self.mask.sum()),
            "timing_ms": dict(self.timing),
            "total_ms": self.total_ms,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }


class _StageTimer:
    def __init__(self):
        self.timing: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter_ns()
        try:
            yield
        finally:
            self.timing[name] = (time.perf_counter_ns() - start) / 1e6


def ipi_lambda(L: float, shape: tuple[int, int]) -> float:
    """Patch-image sparsity weight ``L / sqrt(min(m, n))``."""
    return L / math.sqrt(min(shape))


def ript_lambda(L: float, shape: tuple[int, int, int]) -> float:
    """Patch-tensor sparsity weight ``L / sqrt(min(I, J, P))``."""
    return L / math.sqrt(min(shape))


class MpcmConfig(BaseModel):
    """
    Multiscale patch-contrast settings.

    Attributes:
        scales: Odd cell sizes; the saliency is the pixelwise max over them.
        border: How the shifted neighbour cells read past the image edge.
        clamp_negative: Zero negative contrast before the scale max.
        k: Threshold factor on the saliency std.
        v_min: Floor below which no pixel is a target.
    """

    model_config = ConfigDict(frozen=True)

    scales: tuple[int, ...] = Field((1, 3, 5, 7, 9), description="odd cell sizes N")
    border: BorderMode = BorderMode.REPLICATE
    clamp_negative: bool = True
    k: float = Field(3.0, ge=0, description="threshold factor")
    v_min: float = 0.0

    @field_validator("scales")
    @classmethod
    def _odd_scales(cls, scales: tuple[int, ...]) -> tuple[int, ...]:
        if not scales or any(n < 1 or n % 2 == 0 for n in scales):
            raise ValueError(f"MPCM scales must be a nonempty list of odd sizes >= 1, got {scales}")
        return scales


class TophatConfig(BaseModel):
    """White top-hat baseline settings."""

    model_config = ConfigDict(frozen=True)

    se_size: int = Field(11, ge=3, description="side of the flat square structuring element")
    k: float = Field(3.0, ge=0)
    v_min: float = 0.0

    @field_validator("se_size")
    @classmethod
    def _odd_size(cls, size: int) -> int:
        if size % 2 == 0:
            raise ValueError(f"se_size must be odd, got {size}")
        return size


class IpiConfig(BaseModel):
    """
    Patch-image detector settings.

    Attributes:
        patch: Window size and stride of the patch-image.
        L: Numerator of the sparsity weight.
        k: Threshold factor on the folded target std.
        v_min: Floor below which no pixel is a target.
        reducer: How overlapping patches fold back into a pixel.
        solver: Matrix decomposition settings; the sparsity weight comes from ``L``.
    """

    model_config = ConfigDict(frozen=True)

    patch: PatchConfig = Field(default_factory=PatchConfig)
    L: float = Field(4.5, gt=0, description="numerator of lambda = L / sqrt(min(m, n))")
    k: float = Field(10.0, ge=0)
    v_min: float = 0.0
    reducer: Reducer = Reducer.MEAN
    solver: RpcaConfig = Field(default_factory=RpcaConfig)


class NippsConfig(IpiConfig):
    """
    Patch-image settings with partial-sum shrinkage and a nonnegative target.

    The partial-sum rank is read from the squared spectrum, so the noise
    floor of a patch-image does not count toward the kept components.
    """

    L: float = Field(2.0, gt=0)
    solver: RpcaConfig = Field(
        default_factory=lambda: RpcaConfig(
            energy_ratio=0.11, nonneg_target=True, energy_criterion=EnergyCriterion.SQUARED
        )
    )


class RiptConfig(BaseModel):
    """Patch-tensor detector settings; ``solver.lam`` is replaced by the value derived from ``L``."""

    model_config = ConfigDict(frozen=True)

    patch: PatchConfig = Field(default_factory=PatchConfig)
    L: float = Field(0.001, gt=0, description="numerator of lambda = L / sqrt(min(I, J, P))")
    k: float = Field(10.0, ge=0)
    v_min: float = 0.0
    reducer: Reducer = Reducer.MEAN
    solver: TensorRpcaConfig = Field(default_factory=TensorRpcaConfig)


def _check_scales(scales: tuple[int, ...], shape: tuple[int, int]) -> None:
    for n in scales:
        if n < 1 or n % 2 == 0:
            raise InvalidArgumentError(f"MPCM scale must be odd and >= 1, got {n}")
        if n >= min(shape):
            raise InvalidArgumentError(f"MPCM scale {n} does not fit an image of shape {shape}")


def _patch_contrast(center: GrayImage, neighbours: list[GrayImage]) -> GrayImage:
    differences = [center - m for m in neighbours]
    return np.min([differences[i] * differences[i + 4] for i in range(4)], axis=0)


def _cell_means_direct(image: GrayImage, n: int, dy: int, dx: int, border: BorderMode) -> GrayImage:
    height, width = image.shape
    half = n // 2
    center_rows = border.resolve(np.arange(height) + n * dy, height)
    center_cols = border.resolve(np.arange(width) + n * dx, width)
    total = np.zeros_like(image)
    for oy in range(-half, half + 1):
        rows = border.resolve(center_rows + oy, height)
        for ox in range(-half, half + 1):
            cols = border.resolve(center_cols + ox, width)
            total += image[np.ix_(rows, cols)]
    return total / (n * n)


def mpcm_naive(image: GrayImage, config: MpcmConfig | None = None) -> GrayImage:
    """
    Multiscale patch contrast with every cell mean summed directly.

    Each of the nine cell means per scale is its own window summation; a
    neighbour cell's center is resolved by the border rule before its window
    is summed, which matches shifting the center-mean map.
    """
    config = config or MpcmConfig()
    image = as_gray_image(image)
    _check_scales(config.scales, image.shape)
    border = BorderMode(config.border)
    response = None
    for n in config.scales:
        center = _cell_means_direct(image, n, 0, 0, border)
        neighbours = [_cell_means_direct(image, n, dy, dx, border) for dy, dx in _DIRECTIONS]
        contrast = _patch_contrast(center, neighbours)
        response = contrast if response is None else np.maximum(response, contrast)
    return np.maximum(response, 0.0) if config.clamp_negative else response


def mpcm_shifted(image: GrayImage, config: MpcmConfig | None = None) -> GrayImage:
    """
    Multiscale patch contrast from whole-map shifts.

    One box mean per scale; the eight neighbour means are the center-mean
    map shifted by N cells in each direction.
    """
    config = config or MpcmConfig()
    image = as_gray_image(image)
    _check_scales(config.scales, image.shape)
    border = BorderMode(config.border)
    response = None
    for n in config.scales:
        center = box_mean(image, n, border)
        neighbours = [shift(center, n * dy, n * dx, border) for dy, dx in _DIRECTIONS]
        contrast = _patch_contrast(center, neighbours)
        response = contrast if response is None else np.maximum(response, contrast)
    return np.maximum(response, 0.0) if config.clamp_negative else response


def _segment(timer: _StageTimer, saliency: GrayImage, k: float, v_min: float) -> tuple[BinaryMask, float]:
    with timer.stage("threshold"):
        level = threshold_level(saliency, k, v_min)
        mask = saliency > level
    return mask, level


class TophatDetector:
    name = "tophat"

    def __init__(self, config: TophatConfig | None = None):
        self.config = config or TophatConfig()

    def saliency(self, image: GrayImage) -> GrayImage:
        return white_tophat(image, self.config.se_size)

    def detect(self, image: GrayImage) -> Detection:
        timer = _StageTimer()
        with timer.stage("filter"):
            saliency = self.saliency(image)
        mask, level = _segment(timer, saliency, self.config.k, self.config.v_min)
        return Detection(self.name, saliency, mask, level, timer.timing)


class MpcmDetector:
    def __init__(self, config: MpcmConfig | None = None, naive: bool = False):
        self.config = config or MpcmConfig()
        self.naive = naive
        self.name = "mpcm-naive" if naive else "mpcm"

    def saliency(self, image: GrayImage) -> GrayImage:
        return mpcm_naive(image, self.config) if self.naive else mpcm_shifted(image, self.config)

    def detect(self, image: GrayImage) -> Detection:
        timer = _StageTimer()
        with timer.stage("contrast"):
            saliency = self.saliency(image)
        mask, level = _segment(timer, saliency, self.config.k, self.config.v_min)
        return Detection(self.name, saliency, mask, level, timer.timing)


class IpiDetector:
    """Patch-image model solved by IALM."""

    name = "ipi"

    def __init__(self, config: IpiConfig | None = None):
        self.config = config or IpiConfig()

    def saliency(self, image: GrayImage) -> GrayImage:
        return self.detect(image).saliency

    def detect(self, image: GrayImage) -> Detection:
        image = as_gray_image(image)
        config = self.config
        timer = _StageTimer()
        with timer.stage("patchify"):
            patches = patchify(image, config.patch)
        lam = ipi_lambda(config.L, patches.shape)
        with timer.stage("solve"):
            result = rpca_ialm(patches.data, config.solver.model_copy(update={"lam": lam}))
        with timer.stage("fold"):
            folded = unpatchify(
                type(patches)(result.target, patches.config, patches.source_shape, patches.anchors),
                config.reducer,
            )
            saliency = np.maximum(folded, 0.0)
        mask, level = _segment(timer, saliency, config.k, config.v_min)
        diagnostics = result.diagnostics() | {"lambda": lam}
        return Detection(self.name, saliency, mask, level, timer.timing, diagnostics)


class NippsDetector(IpiDetector):
    """Patch-image model with the partial-sum operator and a nonnegative target."""

    name = "nipps"

    def __init__(self, config: NippsConfig | None = None):
        super().__init__(config or NippsConfig())


class RiptDetector:
    """Reweighted patch-tensor model."""

    name = "ript"

    def __init__(self, config: RiptConfig | None = None):
        self.config = config or RiptConfig()

    def saliency(self, image: GrayImage) -> GrayImage:
        return self.detect(image).saliency

    def detect(self, image: GrayImage) -> Detection:
        image = as_gray_image(image)
        config = self.config
        timer = _StageTimer()
        with timer.stage("patchify"):
            tensor = patch_tensor(image, config.patch)
        lam = ript_lambda(config.L, tensor.shape)
        with timer.stage("solve"):
            result = tensor_rpca(tensor.data, config.solver.model_copy(update={"lam": lam}))
        with timer.stage("fold"):
            folded = fold_tensor(
                type(tensor)(result.target, tensor.config, tensor.source_shape, tensor.anchors),
                config.reducer,
            )
            saliency = np.maximum(folded, 0.0)
        mask, level = _segment(timer, saliency, config.k, config.v_min)
        diagnostics = result.diagnostics() | {"lambda": lam}
        return Detection(self.name, saliency, mask, level, timer.timing, diagnostics)


def detect_tophat(image: GrayImage, se_size: int = 11, k: float = 3.0, v_min: float = 0.0) -> Detection:
    """
    White top-hat baseline on one image.

    Args:
        image: Gray image in [0, 1].
        se_size: Odd side of the square structuring element.
        k: Threshold factor on the saliency std.
        v_min: Threshold floor.

    Returns:
        Detection: Saliency, mask, threshold level and stage timings.
    """
    return TophatDetector(TophatConfig(se_size=se_size, k=k, v_min=v_min)).detect(image)


def detect_mpcm(image: GrayImage, config: MpcmConfig | None = None) -> Detection:
    """Multiscale patch-contrast detection of one image with ``config`` or the defaults."""
    return MpcmDetector(config).detect(image)


def detect_ipi(image: GrayImage, config: IpiConfig | None = None) -> Detection:
    """
    Patch-image low-rank + sparse detection of one image.

    Args:
        image: Gray image in [0, 1].
        config: Detector settings, or None for the defaults.

    Returns:
        Detection: Folded target saliency, mask and solver diagnostics.
    """
    return IpiDetector(config).detect(image)


def detect_nipps(image: GrayImage, config: NippsConfig | None = None) -> Detection:
    """Same as ``detect_ipi`` with partial-sum shrinkage and a nonnegative target."""
    return NippsDetector(config).detect(image)


def detect_ript(image: GrayImage, config: RiptConfig | None = None) -> Detection:
    """
    Reweighted patch-tensor detection of one image.

    Args:
        image: Gray image in [0, 1].
        config: Detector settings, or None for the defaults.

    Returns:
        Detection: Folded target saliency, mask and tensor solver diagnostics,
        including the early-stop iteration.
    """
    return RiptDetector(config).detect(image)


METHODS: dict[str, tuple[type, type[BaseModel]]] = {
    "tophat": (TophatDetector, TophatConfig),
    "mpcm": (MpcmDetector, MpcmConfig),
    "mpcm-naive": (MpcmDetector, MpcmConfig),
    "ipi": (IpiDetector, IpiConfig),
    "nipps": (NippsDetector, NippsConfig),
    "ript": (RiptDetector, RiptConfig),
}


def build_detector(method: str, config: BaseModel | dict | None = None) -> Detector:
    """
    Instantiate a detector by its CLI method name.

    Args:
        method: One of ``METHODS``.
        config: A config model, a dict validated against the method's config
            model, or None for the defaults.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"Unknown method {method!r}; expected one of {sorted(METHODS)}")
    detector_cls, config_cls = METHODS[method]
    if config is None:
        config = config_cls()
    elif isinstance(config, dict):
        config = config_cls.model_validate(config)
    if method == "mpcm-naive":
        return MpcmDetector(config, naive=True)
    return detector_cls(config)


def detect_batch(detector: Detector, images: list[GrayImage], workers: int | None = None) -> list[Detection]:
    """Run a detector over many images in a thread pool, keeping input order."""
    workers = workers or thread_count()
    if workers == 1 or len(images) <= 1:
        return [detector.detect(image) for image in images]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(detector.detect, images))
