"""Shape plans for the ResNet-20 style backbone of the FPN and U-Net hosts."""

import logging
from dataclasses import dataclass, field
from enum import Enum

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

STAGE_CHANNELS = (16, 32, 64)


class DownsamplingScheme(str, Enum):
    """``adjusted`` keeps full resolution in Stage-1; ``regular`` is the usual ResNet stem."""

    ADJUSTED = "adjusted"
    REGULAR = "regular"


@dataclass(frozen=True)
class StagePlan:
    name: str
    height: int
    width: int
    channels: int
    blocks: int = 0


@dataclass(frozen=True)
class FusionPoint:
    """Where the decoder fuses an upsampled high-level feature with a lateral one."""

    name: str
    low_level: str
    high_level: str
    height: int
    width: int
    channels: int


@dataclass
class BackbonePlan:
    b: int
    scheme: DownsamplingScheme
    stages: list[StagePlan] = field(default_factory=list)
    fusion_points: list[FusionPoint] = field(default_factory=list)

    @property
    def weight_layer_count(self) -> int:
        """Conv-1 plus two 3×3 convolutions per residual block."""
        return 1 + sum(2 * stage.blocks for stage in self.stages)

    def sizes(self) -> tuple[int, ...]:
        return tuple(stage.height for stage in self.stages)

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "scheme": self.scheme.value,
            "weight_layer_count": self.weight_layer_count,
            "stages": [vars(stage) for stage in self.stages],
            "fusion_points": [vars(point) for point in self.fusion_points],
        }


def backbone_plan(
    b: int,
    input_size: tuple[int, int] = (480, 480),
    scheme: DownsamplingScheme | str = DownsamplingScheme.ADJUSTED,
) -> BackbonePlan:
    """
    Plan stage resolutions and channel widths for ``b`` residual blocks per stage.

    In the adjusted scheme the only down-sampling happens at the first
    convolution of Stage-2 and Stage-3, each by a factor 2. The regular
    scheme also down-samples in the stem convolution and by a pooling layer
    before Stage-1, so its feature maps end up four times smaller.

    Args:
        b: Residual blocks per stage; ``b = 3`` is ResNet-20.
        input_size: Input height and width.
        scheme: Down-sampling scheme.

    Returns:
        BackbonePlan: Conv-1 and Stage-1..3 plus the two decoder fusion points.
    """
    if b < 1:
        raise InvalidArgumentError(f"Blocks per stage must be >= 1, got {b}")
    scheme = DownsamplingScheme(scheme)
    height, width = input_size
    stem_factor, stage1_factor = (1, 1) if scheme is DownsamplingScheme.ADJUSTED else (2, 4)
    total = stage1_factor * 4
    if height < total or width < total or height % total or width % total:
        raise InvalidArgumentError(
            f"Input {input_size} is not divisible by the {scheme.value} scheme's total stride {total}"
        )

    c1, c2, c3 = STAGE_CHANNELS
    h1, w1 = height // stage1_factor, width // stage1_factor
    stages = [
        StagePlan("Conv-1", height // stem_factor, width // stem_factor, c1),
        StagePlan("Stage-1", h1, w1, c1, b),
        StagePlan("Stage-2", h1 // 2, w1 // 2, c2, b),
        StagePlan("Stage-3", h1 // 4, w1 // 4, c3, b),
    ]
    fusion_points = [
        FusionPoint("UpStage-2", "Stage-2", "Stage-3", h1 // 2, w1 // 2, c2),
        FusionPoint("UpStage-1", "Stage-1", "UpStage-2", h1, w1, c1),
    ]
    plan = BackbonePlan(b, scheme, stages, fusion_points)
    logger.debug(f"Backbone plan b={b} ({scheme.value}): sizes {plan.sizes()}")
    return plan
