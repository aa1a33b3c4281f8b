"""Finite-difference checks of the hand-written backward passes."""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .acm_nn import BnMode, FusionBlock, ModulationVariant, init_fusion_params, soft_iou_loss
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-6
DEFAULT_THRESHOLD = 1e-4


@dataclass
class TensorCheck:
    """Agreement between analytic and numerical gradients of one tensor."""

    name: str
    max_error: float
    checked: int
    skipped_kinks: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_error": self.max_error,
            "checked": self.checked,
            "skipped_kinks": self.skipped_kinks,
        }


@dataclass
class GradcheckReport:
    subject: str
    threshold: float
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((t.max_error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return all(t.max_error <= self.threshold for t in self.tensors)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "threshold": self.threshold,
            "max_error": self.max_error,
            "passed": self.passed,
            "tensors": [t.to_dict() for t in self.tensors],
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    ``max |a - n|`` scaled by the largest magnitude in either gradient.

    This is a tensor-level error, not an elementwise one: an entry far
    smaller than the largest gradient entry may differ by a large factor
    and still contribute little.
    """
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def numerical_grad(
    f: Callable[[], float],
    x: np.ndarray,
    step: float = DEFAULT_STEP,
    switch_state: Callable[[], object] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Central differences of a scalar function with respect to ``x``.

    ``x`` is perturbed in place and restored after each element.

    Args:
        f: Evaluates the scalar loss from the current contents of ``x``.
        x: The array to differentiate against.
        step: Finite difference step.
        switch_state: Called right after each evaluation of ``f``; returns a
            snapshot of the non-differentiable switches (ReLU masks). An
            element whose two evaluations produced different snapshots
            crossed a kink and is excluded.

    Returns:
        tuple: ``(gradient, valid)`` where ``valid`` flags elements that did
        not cross a kink.
    """
    if step <= 0:
        raise InvalidArgumentError(f"Finite difference step must be positive, got {step}")
    grad = np.zeros_like(x, dtype=np.float64)
    valid = np.ones(x.shape, dtype=bool)
    for index in np.ndindex(*x.shape):
        original = x[index]
        x[index] = original + step
        f_plus = f()
        switches_plus = switch_state() if switch_state else None
        x[index] = original - step
        f_minus = f()
        switches_minus = switch_state() if switch_state else None
        x[index] = original
        grad[index] = (f_plus - f_minus) / (2.0 * step)
        if switch_state and not _same_switches(switches_plus, switches_minus):
            valid[index] = False
    return grad, valid


def _same_switches(first: dict, second: dict) -> bool:
    return all(np.array_equal(first[key], second[key]) for key in first)


def check_fusion_gradients(
    variant: ModulationVariant | str,
    batch: int = 2,
    channels: int = 8,
    height: int = 5,
    width: int = 5,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    mode: BnMode = BnMode.TRAIN,
) -> GradcheckReport:
    """
    Compare ``FusionBlock.backward`` with central differences.

    The scalar under test is ``sum(G * Z)`` for a fixed random upstream
    tensor ``G``, so the analytic gradients are ``backward(G)``. Inputs and
    parameters are drawn from U(-0.1, 0.1) except ``X`` and ``Y`` which are
    standard normal.

    Returns:
        GradcheckReport: One entry for X, Y and every parameter tensor.
    """
    variant = ModulationVariant(variant)
    rng = np.random.default_rng(seed)
    params = init_fusion_params(variant, channels, rng, scheme="uniform")
    x = rng.standard_normal((batch, channels, height, width))
    y = rng.standard_normal((batch, channels, height, width))
    upstream = rng.standard_normal((batch, channels, height, width))

    block = FusionBlock(params, mode)
    block.forward(x, y)
    analytic = block.backward(upstream)
    targets = {"x": (x, analytic.x), "y": (y, analytic.y)}
    for name, tensor in params.named_tensors().items():
        targets[name] = (tensor, analytic.params[name])

    replay = FusionBlock(params, mode)

    def loss() -> float:
        return float((upstream * replay.forward(x, y)).sum())

    report = GradcheckReport(subject=variant.value, threshold=threshold)
    for name, (tensor, expected) in targets.items():
        numeric, valid = numerical_grad(loss, tensor, step, switch_state=replay.relu_masks)
        skipped = int((~valid).sum())
        error = relative_error(expected[valid], numeric[valid])
        report.tensors.append(TensorCheck(name, error, int(valid.sum()), skipped))
        logger.debug(f"{variant.value} {name}: error {error:.2e}, skipped {skipped}")

    level = logging.INFO if report.passed else logging.WARNING
    logger.log(level, f"Gradient check {variant.value}: max error {report.max_error:.2e}")
    return report


def check_soft_iou_gradient(
    shape: tuple[int, ...] = (2, 1, 6, 6),
    seed: int = 0,
    step: float = DEFAULT_STEP,
    threshold: float = 1e-6,
) -> GradcheckReport:
    """Compare the closed-form Soft-IoU gradient with central differences."""
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.05, 0.95, size=shape)
    gt = (rng.random(shape) < 0.3).astype(np.float64)
    _, analytic = soft_iou_loss(pred, gt)
    numeric, _ = numerical_grad(lambda: soft_iou_loss(pred, gt)[0], pred, step)
    report = GradcheckReport(subject="soft-iou", threshold=threshold)
    report.tensors.append(TensorCheck("pred", relative_error(analytic, numeric), pred.size))
    return report


def run_gradchecks(
    variants: list[ModulationVariant] | None = None,
    seed: int = 0,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[GradcheckReport]:
    """Fusion-block checks for the given variants (all by default) plus the Soft-IoU check."""
    variants = variants or list(ModulationVariant)
    reports = [check_fusion_gradients(v, seed=seed, threshold=threshold) for v in variants]
    reports.append(check_soft_iou_gradient(seed=seed))
    return reports
