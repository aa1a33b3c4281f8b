from typing import TYPE_CHECKING, Protocol, runtime_checkable

from .imgproc import GrayImage

if TYPE_CHECKING:
    from .detectors import Detection


@runtime_checkable
class Detector(Protocol):
    """
    Protocol defining the interface for single-frame detectors.

    Every detector maps an image to a saliency map and thresholds it into a
    mask, so batch evaluation and the CLI can treat all methods alike.
    """

    name: str

    def saliency(self, image: GrayImage) -> GrayImage:
        """
        Compute the saliency map of an image.

        Args:
            image (GrayImage): Normalized input image

        Returns:
            GrayImage: Nonnegative map with the input's shape; larger means
            more target-like
        """
        ...

    def detect(self, image: GrayImage) -> "Detection":
        """
        Compute saliency, threshold it and record per-stage timing.

        Args:
            image (GrayImage): Normalized input image

        Returns:
            Detection: Saliency, mask, timing and solver diagnostics
        """
        ...
