"""Reading and writing single-channel PNG / PGM images."""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorpusLoadError, InvalidArgumentError
from .imgproc import BinaryMask, GrayImage, as_gray_image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm")

_SIXTEEN_BIT_MODES = ("I;16", "I;16B", "I;16L", "I")


def read_image(path: str | Path) -> GrayImage:
    """
    Load a single-channel image normalized to [0, 1].

    8-bit data is divided by 255 and 16-bit data by 65535. Palette images
    are converted to their gray levels first.

    Args:
        path: PNG or binary PGM (P5) file.

    Returns:
        GrayImage: float64 intensities.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "P":
                # palette indices are not intensities
                img = img.convert("L")
            mode = img.mode
            data = np.array(img)
    except FileNotFoundError as e:
        raise CorpusLoadError(path, "file not found") from e
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise CorpusLoadError(path, f"cannot decode image ({e})") from e

    if data.ndim != 2:
        raise CorpusLoadError(path, f"expected a single-channel image, got mode {mode}")
    if mode in _SIXTEEN_BIT_MODES:
        return data.astype(np.float64) / 65535.0
    if mode == "L":
        return data.astype(np.float64) / 255.0
    if mode == "1":
        return data.astype(np.float64)
    raise CorpusLoadError(path, f"unsupported image mode {mode}")


def read_mask(path: str | Path) -> BinaryMask:
    """Load a mask; any nonzero pixel is foreground."""
    return read_image(path) > 0


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    """Write a mask as an 8-bit image with values {0, 255}."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidArgumentError(f"Expected a 2-D mask, got shape {mask.shape}")
    Image.fromarray(mask.astype(np.uint8) * 255).save(path)


def write_image8(path: str | Path, image: GrayImage) -> None:
    """Write [0, 1] intensities as an 8-bit image (values are clipped)."""
    image = as_gray_image(image)
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def write_image16(path: str | Path, image: GrayImage) -> None:
    """Write [0, 1] intensities as a 16-bit PNG (values are clipped)."""
    image = as_gray_image(image)
    data = np.rint(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


def write_saliency(path: str | Path, saliency: GrayImage) -> dict:
    """
    Write a saliency map as a linearly rescaled 16-bit PNG.

    The rescale is recorded in a JSON sidecar next to the PNG so the original
    values can be recovered as ``low + pixel / 65535 * (high - low)``.

    Returns:
        dict: The sidecar contents.
    """
    path = Path(path)
    saliency = as_gray_image(saliency)
    low, high = float(saliency.min()), float(saliency.max())
    span = high - low
    scaled = (saliency - low) / span if span > 0 else np.zeros_like(saliency)
    write_image16(path, scaled)
    sidecar = {"low": low, "high": high, "bit_depth": 16}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return sidecar


def find_image(directory: Path, stem: str) -> Path | None:
    """First ``<stem><suffix>`` present in ``directory`` among supported suffixes."""
    for suffix in IMAGE_SUFFIXES:
        candidate = directory / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    return None


def list_stems(directory: str | Path) -> list[str]:
    """Sorted stems of supported image files in a directory."""
    directory = Path(directory)
    return sorted(p.stem for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
