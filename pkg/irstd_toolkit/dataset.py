"""
Annotated corpora: loading, statistics and a seeded synthetic generator.

A corpus directory holds ``images/`` and ``masks/`` with identical file stems
plus a ``splits.json`` manifest ``{"train": [...], "val": [...], "test": [...]}``.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from .config import thread_count
from .errors import CorpusLoadError, GenerationError, InvalidArgumentError
from .image_io import find_image, list_stems, read_image, read_mask, write_image16, write_mask
from .imgproc import BinaryMask, GrayImage, as_gray_image
from .metrics import EIGHT_CONNECTED

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = {"train": 0.5, "val": 0.2, "test": 0.3}
SPLIT_TOLERANCE = 0.05
MANIFEST_NAME = "splits.json"


@dataclass
class AnnotatedSample:
    """
    One image with its per-target instance masks.

    The other annotation forms (semantic mask, boxes, centroids, image label)
    are derived from the instance masks on access.
    """

    image: GrayImage
    instance_masks: list[BinaryMask] = field(default_factory=list)
    stem: str = ""
    split: str | None = None

    def __post_init__(self):
        self.image = as_gray_image(self.image)
        occupied = np.zeros(self.image.shape, dtype=bool)
        for index, mask in enumerate(self.instance_masks):
            if mask.shape != self.image.shape:
                raise InvalidArgumentError(
                    f"Instance mask {index} has shape {mask.shape}, image has {self.image.shape}"
                )
            if not mask.any():
                raise InvalidArgumentError(f"Instance mask {index} is empty")
            if (occupied & mask).any():
                raise InvalidArgumentError(f"Instance mask {index} overlaps an earlier instance")
            occupied |= mask

    @classmethod
    def from_semantic_mask(
        cls, image: GrayImage, mask: BinaryMask, stem: str = "", split: str | None = None
    ) -> "AnnotatedSample":
        """Split a semantic mask into instances by 8-connected components."""
        mask = np.asarray(mask).astype(bool)
        labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
        instances = [labels == index for index in range(1, count + 1)]
        return cls(image, instances, stem, split)

    @property
    def semantic_mask(self) -> BinaryMask:
        union = np.zeros(self.image.shape, dtype=bool)
        for mask in self.instance_masks:
            union |= mask
        return union

    @property
    def bboxes(self) -> list[tuple[int, int, int, int]]:
        """Tight boxes ``(y0, x0, y1, x1)`` with exclusive ends."""
        boxes = []
        for mask in self.instance_masks:
            ys, xs = np.nonzero(mask)
            boxes.append((int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1))
        return boxes

    @property
    def centroids(self) -> list[tuple[float, float]]:
        centroids = []
        for mask in self.instance_masks:
            ys, xs = np.nonzero(mask)
            centroids.append((float(ys.mean()), float(xs.mean())))
        return centroids

    @property
    def label(self) -> bool:
        """Image-level label: whether any target is present."""
        return len(self.instance_masks) > 0

    @property
    def target_count(self) -> int:
        return len(self.instance_masks)


def assign_splits(stems: list[str], fractions: dict[str, float] = SPLIT_FRACTIONS) -> dict[str, list[str]]:
    """Deal stems into consecutive train/val/test blocks of the given proportions."""
    n = len(stems)
    n_train = round(fractions["train"] * n)
    n_val = round(fractions["val"] * n)
    return {
        "train": stems[:n_train],
        "val": stems[n_train:n_train + n_val],
        "test": stems[n_train + n_val:],
    }


class CorpusLoader:
    """
    Loads an ``images/`` + ``masks/`` corpus described by a split manifest.

    Usage:
        loader = CorpusLoader("data/sirst")
        samples = loader.load_all()
    """

    def __init__(self, root: str | Path, manifest: str | Path | None = MANIFEST_NAME):
        """
        Args:
            root: Corpus directory.
            manifest: Manifest path relative to ``root`` (or absolute); None
                loads every stem under ``images/`` without split labels.
        """
        self.root = Path(root)
        self.image_dir = self.root / "images"
        self.mask_dir = self.root / "masks"
        self.manifest_path = None if manifest is None else self.root / manifest
        if not self.image_dir.is_dir():
            raise CorpusLoadError(self.image_dir, "images directory not found")
        if not self.mask_dir.is_dir():
            raise CorpusLoadError(self.mask_dir, "masks directory not found")

    def get_manifest(self) -> dict[str, list[str]]:
        """The split manifest, or every image stem under a single ``None`` split."""
        if self.manifest_path is None:
            return {None: list_stems(self.image_dir)}
        try:
            raw = json.loads(self.manifest_path.read_text())
        except FileNotFoundError as e:
            raise CorpusLoadError(self.manifest_path, "manifest not found") from e
        except (OSError, json.JSONDecodeError) as e:
            raise CorpusLoadError(self.manifest_path, f"unreadable manifest ({e})") from e
        if not isinstance(raw, dict) or not all(
            isinstance(v, list) and all(isinstance(s, str) for s in v) for v in raw.values()
        ):
            raise CorpusLoadError(self.manifest_path, "manifest must map split names to lists of stems")
        unknown = set(raw) - set(SPLITS)
        if unknown:
            raise CorpusLoadError(self.manifest_path, f"unknown splits {sorted(unknown)}")
        return {split: raw[split] for split in SPLITS if split in raw}

    def check_proportions(self, manifest: dict[str, list[str]]) -> None:
        """Declared splits must be within ±5% of the 50/20/30 split."""
        total = sum(len(stems) for stems in manifest.values())
        if total == 0:
            raise CorpusLoadError(self.manifest_path, "manifest lists no samples")
        for split, stems in manifest.items():
            share = len(stems) / total
            if abs(share - SPLIT_FRACTIONS[split]) > SPLIT_TOLERANCE + 1e-12:
                raise CorpusLoadError(
                    self.manifest_path,
                    f"split {split} holds {share:.1%} of samples, expected {SPLIT_FRACTIONS[split]:.0%} ± 5%",
                )

    def load_sample(self, stem: str, split: str | None = None) -> AnnotatedSample:
        image_path = find_image(self.image_dir, stem)
        if image_path is None:
            raise CorpusLoadError(self.image_dir / stem, "image not found")
        mask_path = find_image(self.mask_dir, stem)
        if mask_path is None:
            raise CorpusLoadError(self.mask_dir / stem, "mask not found")
        image = read_image(image_path)
        mask = read_mask(mask_path)
        if image.shape != mask.shape:
            raise CorpusLoadError(mask_path, f"mask shape {mask.shape} differs from image shape {image.shape}")
        return AnnotatedSample.from_semantic_mask(image, mask, stem, split)

    def load_all(self, validate_splits: bool = True, workers: int | None = None) -> list[AnnotatedSample]:
        """
        Load every sample the manifest lists, in manifest order.

        Any failing sample aborts the whole load.

        Returns:
            list[AnnotatedSample]: Samples with ``split`` set from the manifest.
        """
        manifest = self.get_manifest()
        if validate_splits and self.manifest_path is not None:
            self.check_proportions(manifest)
        jobs = [(stem, split) for split, stems in manifest.items() for stem in stems]
        workers = workers or thread_count()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda job: self.load_sample(*job), jobs))
        logger.info(f"Loaded {len(samples)} samples from {self.root}")
        return samples


def load_corpus(
    root: str | Path,
    manifest: str | Path | None = MANIFEST_NAME,
    validate_splits: bool = True,
) -> list[AnnotatedSample]:
    return CorpusLoader(root, manifest).load_all(validate_splits)


def group_by_split(samples: list[AnnotatedSample]) -> dict[str | None, list[AnnotatedSample]]:
    groups: dict[str | None, list[AnnotatedSample]] = {}
    for sample in samples:
        groups.setdefault(sample.split, []).append(sample)
    return groups


def brightness_rank(image: GrayImage, mask: BinaryMask) -> float:
    """Percentile rank (0-100) of the target's peak among all pixels, counting strictly dimmer pixels."""
    peak = image[mask].max()
    return 100.0 * float((image < peak).sum()) / image.size


@dataclass
class CorpusStatistics:
    """Per-target table plus the histograms of counts, sizes and brightness."""

    targets: pd.DataFrame
    image_counts: dict[str, int]
    size_bins: list[float]
    brightness_bins: list[float]

    @property
    def count_histogram(self) -> dict[int, int]:
        values, frequency = np.unique(list(self.image_counts.values()), return_counts=True)
        return {int(v): int(f) for v, f in zip(values, frequency)}

    def _histogram(self, column: str, bins: list[float]) -> dict:
        counts, edges = np.histogram(self.targets[column].to_numpy(), bins=bins)
        return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}

    def to_dict(self) -> dict:
        return {
            "images": len(self.image_counts),
            "targets": len(self.targets),
            "count_histogram": {str(k): v for k, v in self.count_histogram.items()},
            "size_ratio_histogram": self._histogram("size_ratio_percent", self.size_bins),
            "brightness_histogram": self._histogram("brightness_rank", self.brightness_bins),
            "per_target": self.targets.to_dict(orient="records"),
        }


DEFAULT_SIZE_BINS = [0.0, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 100.0]
DEFAULT_BRIGHTNESS_BINS = [float(b) for b in range(0, 101, 10)]


def statistics(
    samples: list[AnnotatedSample],
    size_bins: list[float] | None = None,
    brightness_bins: list[float] | None = None,
) -> CorpusStatistics:
    """
    Target-count, size-ratio and brightness statistics of a corpus.

    Size ratio is target pixels over image pixels (reported in percent);
    brightness is ``brightness_rank`` of each target's peak.
    """
    if not samples:
        raise InvalidArgumentError("Statistics of an empty corpus are undefined")
    rows = []
    image_counts = {}
    for index, sample in enumerate(samples):
        stem = sample.stem or str(index)
        image_counts[stem] = sample.target_count
        for target, mask in enumerate(sample.instance_masks):
            pixels = int(mask.sum())
            rows.append({
                "stem": stem,
                "target": target,
                "pixels": pixels,
                "size_ratio": pixels / sample.image.size,
                "size_ratio_percent": 100.0 * pixels / sample.image.size,
                "brightness_rank": brightness_rank(sample.image, mask),
            })
    columns = ["stem", "target", "pixels", "size_ratio", "size_ratio_percent", "brightness_rank"]
    return CorpusStatistics(
        targets=pd.DataFrame(rows, columns=columns),
        image_counts=image_counts,
        size_bins=size_bins or DEFAULT_SIZE_BINS,
        brightness_bins=brightness_bins or DEFAULT_BRIGHTNESS_BINS,
    )


# Largest spot sigma whose half-amplitude footprint fits in 9×9 pixels.
MAX_TARGET_SIGMA = 3.8


class SynthConfig(BaseModel):
    """Settings of the synthetic scene generator."""

    model_config = ConfigDict(frozen=True)

    height: int = Field(256, ge=16)
    width: int = Field(256, ge=16)
    count: int = Field(10, ge=0, description="number of images to generate")
    count_probabilities: dict[int, float] = Field(
        default_factory=lambda: {1: 0.9, 2: 0.06, 3: 0.04},
        description="probability of each per-image target count",
    )
    sigma_range: tuple[float, float] = Field((1.0, 2.0), description="Gaussian spot sigma in pixels")
    amplitude_range: tuple[float, float] = Field((0.5, 0.9))
    background_level: tuple[float, float] = Field((0.1, 0.2), description="range of the mean background")
    ramp_amplitude: float = Field(0.15, ge=0, description="peak deviation of the polynomial ramp")
    clutter_blobs: int = Field(3, ge=0)
    clutter_sigma: tuple[float, float] = Field((8.0, 20.0))
    clutter_amplitude: tuple[float, float] = Field((0.05, 0.1))
    noise_std: float = Field(0.02, ge=0)
    min_gap: int = Field(2, ge=1, description="minimum pixel gap between target footprints")
    max_attempts: int = Field(200, ge=1, description="placement attempts per target")
    seed: int = 0

    @field_validator("count_probabilities")
    @classmethod
    def _distribution(cls, probabilities: dict[int, float]) -> dict[int, float]:
        if not probabilities or any(k < 0 or p < 0 for k, p in probabilities.items()):
            raise ValueError("Target count probabilities must be nonnegative with counts >= 0")
        if not math.isclose(sum(probabilities.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"Target count probabilities must sum to 1, got {sum(probabilities.values())}")
        return probabilities

    @model_validator(mode="after")
    def _ranges(self) -> "SynthConfig":
        for name in ("sigma_range", "amplitude_range", "background_level", "clutter_sigma", "clutter_amplitude"):
            low, high = getattr(self, name)
            if low > high or low < 0:
                raise ValueError(f"{name} must be an increasing nonnegative pair, got {(low, high)}")
        if self.sigma_range[0] <= 0 or self.sigma_range[1] > MAX_TARGET_SIGMA:
            raise ValueError(f"sigma_range must lie in (0, {MAX_TARGET_SIGMA}] to keep targets within 9×9")
        return self


@dataclass(frozen=True)
class _Spot:
    cy: int
    cx: int
    sigma: float
    amplitude: float

    def render(self, shape: tuple[int, int]) -> tuple[np.ndarray, BinaryMask]:
        """Gaussian truncated at half amplitude and its footprint."""
        ys, xs = np.ogrid[:shape[0], :shape[1]]
        distance2 = (ys - self.cy) ** 2 + (xs - self.cx) ** 2
        profile = self.amplitude * np.exp(-distance2 / (2.0 * self.sigma ** 2))
        footprint = profile > 0.5 * self.amplitude
        return np.where(footprint, profile, 0.0), footprint


def _background(config: SynthConfig, rng: np.random.Generator) -> GrayImage:
    height, width = config.height, config.width
    v, u = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width), indexing="ij")
    terms = np.stack([u, v, u * u, u * v, v * v])
    coefficients = rng.uniform(-1.0, 1.0, size=len(terms))
    ramp = np.tensordot(coefficients, terms, axes=1) / max(np.abs(coefficients).sum(), 1e-12)
    background = rng.uniform(*config.background_level) + config.ramp_amplitude * ramp

    ys, xs = np.ogrid[:height, :width]
    for _ in range(config.clutter_blobs):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sigma = rng.uniform(*config.clutter_sigma)
        amplitude = rng.uniform(*config.clutter_amplitude)
        background = background + amplitude * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma ** 2))
    if config.noise_std > 0:
        background = background + rng.normal(0.0, config.noise_std, size=(height, width))
    return background


def _place_spots(config: SynthConfig, n_targets: int, rng: np.random.Generator, index: int) -> list[_Spot]:
    shape = (config.height, config.width)
    blocked = np.zeros(shape, dtype=bool)
    spots = []
    for target in range(n_targets):
        for _ in range(config.max_attempts):
            sigma = rng.uniform(*config.sigma_range)
            amplitude = rng.uniform(*config.amplitude_range)
            margin = int(math.ceil(sigma * math.sqrt(2.0 * math.log(2.0)))) + 1
            if 2 * margin >= min(shape):
                raise GenerationError(f"Image {shape} is too small for a target of sigma {sigma:.2f}")
            cy = int(rng.integers(margin, shape[0] - margin))
            cx = int(rng.integers(margin, shape[1] - margin))
            spot = _Spot(cy, cx, sigma, amplitude)
            _, footprint = spot.render(shape)
            if not (blocked & footprint).any():
                blocked |= ndimage.binary_dilation(footprint, EIGHT_CONNECTED, iterations=config.min_gap)
                spots.append(spot)
                break
        else:
            raise GenerationError(
                f"Could not place target {target + 1} of {n_targets} in image {index} "
                f"after {config.max_attempts} attempts"
            )
    return spots


def _draw_target_count(config: SynthConfig, rng: np.random.Generator) -> int:
    counts = sorted(config.count_probabilities)
    return int(rng.choice(counts, p=[config.count_probabilities[c] for c in counts]))


def target_counts(config: SynthConfig) -> list[int]:
    """Planted per-image target counts without rendering the scenes."""
    return [
        _draw_target_count(config, np.random.default_rng([config.seed, index]))
        for index in range(config.count)
    ]


def synth_sample(config: SynthConfig, index: int) -> AnnotatedSample:
    """Render image ``index`` of the seeded sequence; independent of any other index."""
    rng = np.random.default_rng([config.seed, index])
    n_targets = _draw_target_count(config, rng)
    image = _background(config, rng)
    instance_masks = []
    for spot in _place_spots(config, n_targets, rng, index):
        contribution, footprint = spot.render(image.shape)
        image = image + contribution
        instance_masks.append(footprint)
    image = np.clip(image, 0.0, 1.0)
    return AnnotatedSample(image, instance_masks, stem=f"synth_{index:04d}")


def synth_generate(config: SynthConfig | None = None, workers: int | None = None) -> list[AnnotatedSample]:
    """
    Generate ``config.count`` annotated scenes.

    Each scene draws from its own ``(seed, index)`` stream, so the output is
    the same whether scenes are rendered serially or in parallel. Split
    labels follow the 50/20/30 train/val/test proportions.
    """
    config = config or SynthConfig()
    workers = workers or thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = list(pool.map(lambda i: synth_sample(config, i), range(config.count)))
    splits = assign_splits([s.stem for s in samples])
    for split, stems in splits.items():
        for sample in samples:
            if sample.stem in stems:
                sample.split = split
    logger.info(f"Generated {len(samples)} synthetic scenes (seed {config.seed})")
    return samples


def write_corpus(samples: list[AnnotatedSample], root: str | Path) -> Path:
    """
    Write samples in corpus layout: 16-bit images, {0, 255} masks and ``splits.json``.

    Returns:
        Path: The manifest path.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    manifest: dict[str, list[str]] = {split: [] for split in SPLITS}
    for sample in samples:
        if not sample.stem:
            raise InvalidArgumentError("Samples need a stem to be written")
        write_image16(root / "images" / f"{sample.stem}.png", sample.image)
        write_mask(root / "masks" / f"{sample.stem}.png", sample.semantic_mask)
        if sample.split is not None:
            manifest[sample.split].append(sample.stem)
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


@dataclass
class LowRankSparseInstance:
    """Ground-truth split ``data = background + target``."""

    data: np.ndarray
    background: np.ndarray
    target: np.ndarray


def _sparse_spikes(shape: tuple[int, ...], fraction: float, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= fraction <= 1:
        raise InvalidArgumentError(f"Sparse fraction must lie in [0, 1], got {fraction}")
    target = np.zeros(shape)
    size = int(np.prod(shape))
    support = rng.choice(size, size=int(round(fraction * size)), replace=False)
    target.flat[support] = magnitude * rng.choice([-1.0, 1.0], size=support.size)
    return target


def lowrank_sparse_instance(
    m: int = 2500,
    n: int = 484,
    rank: int = 2,
    fraction: float = 0.01,
    magnitude: float = 5.0,
    seed: int = 0,
) -> LowRankSparseInstance:
    """Rank-``rank`` Gaussian factor product plus ``±magnitude`` spikes on a random support."""
    if rank < 1 or rank > min(m, n):
        raise InvalidArgumentError(f"Rank {rank} outside [1, {min(m, n)}]")
    rng = np.random.default_rng(seed)
    background = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    target = _sparse_spikes((m, n), fraction, magnitude, rng)
    return LowRankSparseInstance(background + target, background, target)


def lowrank_sparse_tensor_instance(
    shape: tuple[int, int, int] = (30, 30, 40),
    rank: int = 2,
    fraction: float = 0.01,
    magnitude: float = 5.0,
    seed: int = 0,
    spikes_per_slice: int | None = None,
) -> LowRankSparseInstance:
    """
    Sum of ``rank`` outer products plus ``±magnitude`` spikes.

    Spikes cover a random ``fraction`` of all entries, or exactly
    ``spikes_per_slice`` entries of every slice along the last axis when that
    is given.
    """
    if rank < 1:
        raise InvalidArgumentError(f"Rank must be >= 1, got {rank}")
    rng = np.random.default_rng(seed)
    factors = [rng.standard_normal((size, rank)) for size in shape]
    background = np.einsum("ir,jr,kr->ijk", *factors)
    if spikes_per_slice is None:
        target = _sparse_spikes(shape, fraction, magnitude, rng)
    else:
        plane = shape[0] * shape[1]
        if not 0 <= spikes_per_slice <= plane:
            raise InvalidArgumentError(f"Need 0 <= spikes_per_slice <= {plane}, got {spikes_per_slice}")
        target = np.zeros(shape)
        for k in range(shape[2]):
            cells = rng.choice(plane, size=spikes_per_slice, replace=False)
            rows, cols = np.unravel_index(cells, shape[:2])
            target[rows, cols, k] = magnitude * rng.choice([-1.0, 1.0], size=spikes_per_slice)
    return LowRankSparseInstance(background + target, background, target)
