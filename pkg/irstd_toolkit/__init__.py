"""
IRSTD Toolkit

Single-frame infrared small-target detection: local-contrast and low-rank
detectors, nIoU / ROC evaluation, corpus tools, and a numpy implementation of
the asymmetric contextual modulation fusion block.
"""

__version__ = "0.1.0"
__author__ = "IRSTD Toolkit"

from .acm_nn import FusionBlock, ModulationVariant, fuse, init_fusion_params, param_count, soft_iou_loss
from .backbone import backbone_plan
from .dataset import AnnotatedSample, CorpusLoader, SynthConfig, load_corpus, statistics, synth_generate
from .detector_protocol import Detector
from .detectors import (
    Detection,
    build_detector,
    detect_batch,
    detect_ipi,
    detect_nipps,
    detect_ript,
    detect_tophat,
    mpcm_naive,
    mpcm_shifted,
)
from .metrics import iou, niou, roc_sweep, sample_counts

__all__ = [
    "AnnotatedSample",
    "CorpusLoader",
    "Detection",
    "Detector",
    "FusionBlock",
    "ModulationVariant",
    "SynthConfig",
    "backbone_plan",
    "build_detector",
    "detect_batch",
    "detect_ipi",
    "detect_nipps",
    "detect_ript",
    "detect_tophat",
    "fuse",
    "init_fusion_params",
    "iou",
    "load_corpus",
    "mpcm_naive",
    "mpcm_shifted",
    "niou",
    "param_count",
    "roc_sweep",
    "sample_counts",
    "soft_iou_loss",
    "statistics",
    "synth_generate",
]
