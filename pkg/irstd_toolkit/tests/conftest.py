import numpy as np
import pytest


def ramp(size: int = 256) -> np.ndarray:
    """Noise-free smooth background rising left to right and top to bottom."""
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    return 0.2 + 0.3 * xs + 0.1 * ys


def spot_scene(size: int = 256, center=(128, 128), sigma: float = 1.0, amplitude: float = 0.8):
    """Ramp plus one Gaussian spot truncated at half amplitude; returns (image, ground truth)."""
    ys, xs = np.mgrid[0:size, 0:size]
    profile = amplitude * np.exp(-((ys - center[0]) ** 2 + (xs - center[1]) ** 2) / (2 * sigma ** 2))
    footprint = profile > amplitude / 2
    return ramp(size) + np.where(footprint, profile, 0.0), footprint


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spot_instance():
    return spot_scene()
