"""
Asymmetric contextual modulation in plain numpy.

The fusion block combines a low-level feature ``X`` and a high-level feature
``Y`` (both ``N × C × H × W``) with two attention gates:

- the global channel attention module (GCAM) squeezes ``Y`` by global average
  pooling and produces one gate per channel;
- the point-wise channel attention module (PCAM) mixes channels with 1×1
  convolutions and produces one gate per pixel and channel.

``ACM`` fuses ``Z = G(Y) ⊗ X + L(X) ⊗ Y``; the ablation variants swap the
gate types with the same C² weight count. Every layer has a hand-written
backward pass, so the block is trainable without an autodiff framework.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, ValidationError
from scipy.special import expit

from .errors import InvalidArgumentError, StateError

logger = logging.getLogger(__name__)

Tensor4 = npt.NDArray[np.float64]

BN_EPS = 1e-5
GCAM_REDUCTION = 4
PCAM_REDUCTION = 4
SOFT_IOU_EPS = 1e-6


class BnMode(str, Enum):
    TRAIN = "train"
    INFERENCE = "inference"


class ModulationVariant(str, Enum):
    """Fusion variants with the same C² attention weight count."""

    TOP_DOWN_LOCAL = "top-down-local"
    BI_LOCAL = "bi-local"
    BI_GLOBAL = "bi-global"
    ACM = "acm"


class AttentionKind(str, Enum):
    GLOBAL = "gcam"
    POINTWISE = "pcam"


# Attention modules each variant carries, by slot name.
_LAYOUT: dict[ModulationVariant, dict[str, AttentionKind]] = {
    ModulationVariant.ACM: {"top_down": AttentionKind.GLOBAL, "bottom_up": AttentionKind.POINTWISE},
    ModulationVariant.BI_GLOBAL: {"top_down": AttentionKind.GLOBAL, "bottom_up": AttentionKind.GLOBAL},
    ModulationVariant.BI_LOCAL: {"top_down": AttentionKind.POINTWISE, "bottom_up": AttentionKind.POINTWISE},
    ModulationVariant.TOP_DOWN_LOCAL: {"top_down": AttentionKind.POINTWISE, "top_down_2": AttentionKind.POINTWISE},
}


def as_tensor4(data) -> Tensor4:
    """Validate and convert array-like data to an ``N × C × H × W`` float64 tensor."""
    tensor = np.asarray(data, dtype=np.float64)
    if tensor.ndim != 4 or min(tensor.shape) < 1:
        raise InvalidArgumentError(f"Expected a non-empty N×C×H×W tensor, got shape {tensor.shape}")
    if not np.all(np.isfinite(tensor)):
        raise InvalidArgumentError("Tensor contains non-finite values")
    return tensor


@dataclass
class BatchNormParams:
    """Per-feature affine parameters and the statistics used in inference mode."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def identity(cls, features: int) -> "BatchNormParams":
        return cls(np.ones(features), np.zeros(features), np.zeros(features), np.ones(features))

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def check(self, features: int, name: str) -> None:
        for attr in ("gamma", "beta", "running_mean", "running_var"):
            value = getattr(self, attr)
            if value.shape != (features,):
                raise InvalidArgumentError(f"{name}.{attr} has shape {value.shape}, expected ({features},)")
            if not np.all(np.isfinite(value)):
                raise InvalidArgumentError(f"{name}.{attr} contains non-finite values")
        if np.any(self.running_var < 0):
            raise InvalidArgumentError(f"{name}.running_var must be nonnegative")


@dataclass
class GcamParams:
    """
    Global channel attention: ``sigmoid(BN(W2 relu(BN(W1 y))))`` on the pooled vector.

    ``w1`` is ``C/r × C`` and ``w2`` is ``C × C/r``.
    """

    w1: np.ndarray
    w2: np.ndarray
    bn1: BatchNormParams
    bn2: BatchNormParams
    r: int = GCAM_REDUCTION

    kind = AttentionKind.GLOBAL

    def __post_init__(self):
        _check_pair(self.w1, self.w2, self.r, "gcam")
        self.bn1.check(self.w1.shape[0], "gcam.bn1")
        self.bn2.check(self.w2.shape[0], "gcam.bn2")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.w1, self.w2

    def named_tensors(self) -> dict[str, np.ndarray]:
        return _named(self.w1, self.w2, self.bn1, self.bn2, ("w1", "w2"))


@dataclass
class PcamParams:
    """Point-wise channel attention with ``C/4 × C`` and ``C × C/4`` 1×1 convolutions."""

    pw1: np.ndarray
    pw2: np.ndarray
    bn1: BatchNormParams
    bn2: BatchNormParams

    kind = AttentionKind.POINTWISE

    def __post_init__(self):
        _check_pair(self.pw1, self.pw2, PCAM_REDUCTION, "pcam")
        self.bn1.check(self.pw1.shape[0], "pcam.bn1")
        self.bn2.check(self.pw2.shape[0], "pcam.bn2")

    @property
    def channels(self) -> int:
        return self.pw1.shape[1]

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pw1, self.pw2

    def named_tensors(self) -> dict[str, np.ndarray]:
        return _named(self.pw1, self.pw2, self.bn1, self.bn2, ("pw1", "pw2"))


AttentionParams = GcamParams | PcamParams


def _check_pair(first: np.ndarray, second: np.ndarray, r: int, name: str) -> None:
    if first.ndim != 2 or second.ndim != 2:
        raise InvalidArgumentError(f"{name} weights must be matrices")
    hidden, channels = first.shape
    if r < 1 or channels % r != 0:
        raise InvalidArgumentError(f"{name}: {channels} channels are not divisible by r={r}")
    if hidden != channels // r or second.shape != (channels, hidden):
        raise InvalidArgumentError(
            f"{name} weight shapes {first.shape} and {second.shape} do not match C={channels}, r={r}"
        )
    if not (np.all(np.isfinite(first)) and np.all(np.isfinite(second))):
        raise InvalidArgumentError(f"{name} weights contain non-finite values")


def _named(first, second, bn1, bn2, names) -> dict[str, np.ndarray]:
    return {
        names[0]: first,
        names[1]: second,
        "bn1.gamma": bn1.gamma,
        "bn1.beta": bn1.beta,
        "bn2.gamma": bn2.gamma,
        "bn2.beta": bn2.beta,
    }


@dataclass
class FusionParams:
    """Attention parameters of one fusion block, keyed by slot name."""

    variant: ModulationVariant
    attentions: dict[str, AttentionParams]

    def __post_init__(self):
        self.variant = ModulationVariant(self.variant)
        layout = _LAYOUT[self.variant]
        if set(self.attentions) != set(layout):
            raise InvalidArgumentError(
                f"{self.variant.value} needs attention slots {sorted(layout)}, got {sorted(self.attentions)}"
            )
        channels = {params.channels for params in self.attentions.values()}
        if len(channels) != 1:
            raise InvalidArgumentError(f"Attention modules disagree on channel count: {sorted(channels)}")
        for slot, kind in layout.items():
            if self.attentions[slot].kind is not kind:
                raise InvalidArgumentError(f"Slot {slot} of {self.variant.value} expects {kind.value}")

    @property
    def channels(self) -> int:
        return next(iter(self.attentions.values())).channels

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Trainable tensors as ``slot.name`` -> array (the live arrays, not copies)."""
        return {
            f"{slot}.{name}": tensor
            for slot, params in self.attentions.items()
            for name, tensor in params.named_tensors().items()
        }

    def param_count(self) -> int:
        """Entries of the attention weight matrices (no BN affine, no biases)."""
        return sum(w.size for params in self.attentions.values() for w in params.weights())


def _hidden(kind: AttentionKind, channels: int) -> int:
    r = GCAM_REDUCTION if kind is AttentionKind.GLOBAL else PCAM_REDUCTION
    if channels < r or channels % r != 0:
        raise InvalidArgumentError(f"Channel count {channels} is not divisible by {r}")
    return channels // r


def param_count(variant: ModulationVariant | str, channels: int) -> int:
    """
    Attention weight entries of a variant with ``channels`` channels.

    Every variant comes to exactly ``channels ** 2``.
    """
    layout = _LAYOUT[ModulationVariant(variant)]
    return sum(2 * channels * _hidden(kind, channels) for kind in layout.values())


def _attention_params(kind: AttentionKind, channels: int, rng: np.random.Generator, scheme: str) -> AttentionParams:
    hidden = _hidden(kind, channels)
    if scheme == "he":
        w1 = rng.normal(0.0, np.sqrt(2.0 / channels), size=(hidden, channels))
        w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(channels, hidden))
        bn1, bn2 = BatchNormParams.identity(hidden), BatchNormParams.identity(channels)
    elif scheme == "uniform":
        w1 = rng.uniform(-0.1, 0.1, size=(hidden, channels))
        w2 = rng.uniform(-0.1, 0.1, size=(channels, hidden))
        bn1, bn2 = BatchNormParams.identity(hidden), BatchNormParams.identity(channels)
        for bn in (bn1, bn2):
            bn.gamma = 1.0 + rng.uniform(-0.1, 0.1, size=bn.features)
            bn.beta = rng.uniform(-0.1, 0.1, size=bn.features)
    else:
        raise InvalidArgumentError(f"Unknown init scheme {scheme!r}; expected 'he' or 'uniform'")
    if kind is AttentionKind.GLOBAL:
        return GcamParams(w1, w2, bn1, bn2, GCAM_REDUCTION)
    return PcamParams(w1, w2, bn1, bn2)


def init_fusion_params(
    variant: ModulationVariant | str,
    channels: int,
    rng: np.random.Generator | int | None = None,
    scheme: str = "he",
) -> FusionParams:
    """
    Fresh parameters for a fusion block.

    Args:
        variant: Which fusion variant to build.
        channels: C; must be divisible by 4.
        rng: Generator or seed.
        scheme: ``"he"`` draws weights from N(0, 2/fan_in) with identity BN;
            ``"uniform"`` draws weights, BN shifts and BN scale offsets from
            U(-0.1, 0.1), which keeps finite-difference checks well conditioned.
    """
    variant = ModulationVariant(variant)
    rng = np.random.default_rng(rng)
    attentions = {
        slot: _attention_params(kind, channels, rng, scheme)
        for slot, kind in _LAYOUT[variant].items()
    }
    return FusionParams(variant, attentions)


# Layers. Each forward returns its output and a cache consumed by the
# matching backward.

def global_avg_pool(y: Tensor4) -> np.ndarray:
    """Channelwise spatial mean: ``N × C × H × W`` -> ``N × C``."""
    return as_tensor4(y).mean(axis=(2, 3))


def _channel_view(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape((1, -1) + (1,) * (ndim - 2))


def _bn_axes(ndim: int) -> tuple[int, ...]:
    return (0,) if ndim == 2 else (0, 2, 3)


def _bn_forward(x: np.ndarray, bn: BatchNormParams, mode: BnMode):
    axes = _bn_axes(x.ndim)
    if mode is BnMode.TRAIN:
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
    else:
        mean = _channel_view(bn.running_mean, x.ndim)
        var = _channel_view(bn.running_var, x.ndim)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean) * inv_std
    out = _channel_view(bn.gamma, x.ndim) * x_hat + _channel_view(bn.beta, x.ndim)
    return out, (x_hat, inv_std)


def _bn_backward(grad: np.ndarray, cache, bn: BatchNormParams, mode: BnMode):
    x_hat, inv_std = cache
    axes = _bn_axes(grad.ndim)
    d_gamma = (grad * x_hat).sum(axis=axes)
    d_beta = grad.sum(axis=axes)
    d_hat = grad * _channel_view(bn.gamma, grad.ndim)
    if mode is BnMode.INFERENCE:
        return d_hat * inv_std, d_gamma, d_beta
    m = x_hat.size // x_hat.shape[1]
    d_x = inv_std / m * (
        m * d_hat
        - d_hat.sum(axis=axes, keepdims=True)
        - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
    )
    return d_x, d_gamma, d_beta


def _mix(weight: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Channel mix ``W x`` for pooled (N × C) or spatial (N × C × H × W) inputs."""
    if x.ndim == 2:
        return x @ weight.T
    return np.einsum("oc,nchw->nohw", weight, x)


def _mix_backward(grad: np.ndarray, weight: np.ndarray, x: np.ndarray):
    if x.ndim == 2:
        return grad @ weight, grad.T @ x
    return np.einsum("oc,nohw->nchw", weight, grad), np.einsum("nohw,nchw->oc", grad, x)


class _AttentionGate:
    """One GCAM or PCAM applied to a tensor, with the intermediates kept for backward."""

    def __init__(self, params: AttentionParams, mode: BnMode):
        self.params = params
        self.mode = mode
        self._cache = None

    def forward(self, t: Tensor4) -> np.ndarray:
        """Gate broadcastable against ``t``: ``N × C × 1 × 1`` (GCAM) or ``t``'s shape (PCAM)."""
        if t.shape[1] != self.params.channels:
            raise InvalidArgumentError(
                f"Input has {t.shape[1]} channels, attention expects {self.params.channels}"
            )
        first, second = self.params.weights()
        x0 = t.mean(axis=(2, 3)) if self.params.kind is AttentionKind.GLOBAL else t
        a1 = _mix(first, x0)
        b1, bn1_cache = _bn_forward(a1, self.params.bn1, self.mode)
        h = np.maximum(b1, 0.0)
        a2 = _mix(second, h)
        b2, bn2_cache = _bn_forward(a2, self.params.bn2, self.mode)
        gate = expit(b2)
        self._cache = (t.shape, x0, bn1_cache, b1 > 0, h, bn2_cache, gate)
        return gate[:, :, None, None] if gate.ndim == 2 else gate

    @property
    def relu_mask(self) -> np.ndarray:
        if self._cache is None:
            raise StateError("Call forward() first")
        return self._cache[3]

    def backward(self, d_gate: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        if self._cache is None:
            raise StateError("Call forward() first")
        shape, x0, bn1_cache, active, h, bn2_cache, gate = self._cache
        first, second = self.params.weights()
        names = list(self.params.named_tensors())

        if gate.ndim == 2:
            d_gate = d_gate.reshape(gate.shape)
        d_b2 = d_gate * gate * (1.0 - gate)
        d_a2, d_gamma2, d_beta2 = _bn_backward(d_b2, bn2_cache, self.params.bn2, self.mode)
        d_h, d_second = _mix_backward(d_a2, second, h)
        d_b1 = d_h * active
        d_a1, d_gamma1, d_beta1 = _bn_backward(d_b1, bn1_cache, self.params.bn1, self.mode)
        d_x0, d_first = _mix_backward(d_a1, first, x0)

        if self.params.kind is AttentionKind.GLOBAL:
            d_t = np.broadcast_to(d_x0[:, :, None, None] / (shape[2] * shape[3]), shape).copy()
        else:
            d_t = d_x0
        grads = dict(zip(names, (d_first, d_second, d_gamma1, d_beta1, d_gamma2, d_beta2)))
        return d_t, grads


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(axis for axis, size in enumerate(shape) if size == 1 and grad.shape[axis] != 1)
    return grad.sum(axis=axes, keepdims=True) if axes else grad


def gcam_gate(y: Tensor4, params: GcamParams, mode: BnMode = BnMode.TRAIN) -> np.ndarray:
    """Per-sample, per-channel gate ``N × C`` in (0, 1) from the high-level feature."""
    return _AttentionGate(params, BnMode(mode)).forward(as_tensor4(y))[:, :, 0, 0]


def pcam_gate(x: Tensor4, params: PcamParams, mode: BnMode = BnMode.TRAIN) -> Tensor4:
    """Per-pixel gate with ``x``'s shape, values in (0, 1)."""
    return _AttentionGate(params, BnMode(mode)).forward(as_tensor4(x))


@dataclass
class FusionGrads:
    x: Tensor4
    y: Tensor4
    params: dict[str, np.ndarray] = field(default_factory=dict)


class FusionBlock:
    """
    A fusion block with recorded intermediates for a hand-written backward pass.

    Usage:
        block = FusionBlock(params)
        z = block.forward(x, y)
        grads = block.backward(dz)
    """

    def __init__(self, params: FusionParams, mode: BnMode = BnMode.TRAIN):
        self.params = params
        self.variant = params.variant
        self.mode = BnMode(mode)
        self._gates = {
            slot: _AttentionGate(attention, self.mode) for slot, attention in params.attentions.items()
        }
        self._cache = None

    def forward(self, x: Tensor4, y: Tensor4) -> Tensor4:
        x, y = as_tensor4(x), as_tensor4(y)
        if x.shape != y.shape:
            raise InvalidArgumentError(f"X {x.shape} and Y {y.shape} must have the same shape")
        if x.shape[1] != self.params.channels:
            raise InvalidArgumentError(
                f"Features have {x.shape[1]} channels, parameters expect {self.params.channels}"
            )

        if self.variant is ModulationVariant.TOP_DOWN_LOCAL:
            inner = self._gates["top_down"].forward(y)
            modulated = inner * y
            outer = self._gates["top_down_2"].forward(modulated)
            self._cache = (x, y, inner, modulated, outer)
            return outer * x + y

        top_down = self._gates["top_down"].forward(y)
        bottom_up = self._gates["bottom_up"].forward(x)
        self._cache = (x, y, top_down, bottom_up)
        return top_down * x + bottom_up * y

    @property
    def gates(self) -> dict[str, np.ndarray]:
        """Gate tensors of the last forward, keyed by attention slot."""
        if self._cache is None:
            raise StateError("Call forward() first")
        if self.variant is ModulationVariant.TOP_DOWN_LOCAL:
            return {"top_down": self._cache[2], "top_down_2": self._cache[4]}
        return {"top_down": self._cache[2], "bottom_up": self._cache[3]}

    def relu_masks(self) -> dict[str, np.ndarray]:
        """Active ReLU units of the last forward, keyed by attention slot."""
        return {slot: gate.relu_mask.copy() for slot, gate in self._gates.items()}

    def backward(self, grad_z: Tensor4, freeze_gates: bool = False) -> FusionGrads:
        """
        Reverse-mode gradients of a scalar loss given ``dL/dZ``.

        Args:
            grad_z: Upstream gradient with Z's shape.
            freeze_gates: Treat the gates as constants; parameter gradients
                are then zero and only the direct paths reach X and Y.

        Returns:
            FusionGrads: Gradients for X, Y and every tensor in
            ``params.named_tensors()`` under the same keys.
        """
        if self._cache is None:
            raise StateError("Call forward() first")
        grad_z = np.asarray(grad_z, dtype=np.float64)
        x, y = self._cache[0], self._cache[1]
        if grad_z.shape != x.shape:
            raise InvalidArgumentError(f"Upstream gradient {grad_z.shape} does not match Z {x.shape}")

        param_grads: dict[str, np.ndarray] = {}

        def through(slot: str, d_gate: np.ndarray, gate: np.ndarray) -> np.ndarray:
            if freeze_gates:
                return np.zeros_like(x)
            d_input, grads = self._gates[slot].backward(_reduce_to(d_gate, gate.shape))
            param_grads.update({f"{slot}.{name}": g for name, g in grads.items()})
            return d_input

        if self.variant is ModulationVariant.TOP_DOWN_LOCAL:
            _, _, inner, modulated, outer = self._cache
            d_x = grad_z * outer
            d_modulated = through("top_down_2", grad_z * x, outer)
            d_y = grad_z + d_modulated * inner + through("top_down", d_modulated * y, inner)
        else:
            _, _, top_down, bottom_up = self._cache
            d_x = grad_z * top_down + through("bottom_up", grad_z * y, bottom_up)
            d_y = grad_z * bottom_up + through("top_down", grad_z * x, top_down)

        if freeze_gates:
            param_grads = {name: np.zeros_like(t) for name, t in self.params.named_tensors().items()}
        return FusionGrads(d_x, d_y, param_grads)


def fuse(
    x: Tensor4,
    y: Tensor4,
    variant: ModulationVariant | str,
    params: FusionParams,
    mode: BnMode = BnMode.TRAIN,
) -> Tensor4:
    """
    Fuse a low-level feature ``x`` with a high-level feature ``y``.

    - ACM: ``G(Y) ⊗ X + L(X) ⊗ Y``
    - BiGlobal: ``G1(Y) ⊗ X + G2(X) ⊗ Y``
    - BiLocal: ``L1(Y) ⊗ X + L2(X) ⊗ Y``
    - TopDownLocal: ``L(Y) ⊗ X + Y`` with ``L(Y) = L2(L1(Y) ⊗ Y)``
    """
    variant = ModulationVariant(variant)
    if params.variant is not variant:
        raise InvalidArgumentError(f"Parameters are for {params.variant.value}, not {variant.value}")
    return FusionBlock(params, mode).forward(x, y)


def top_down_modulation(x: Tensor4, y: Tensor4, params: GcamParams, mode: BnMode = BnMode.TRAIN) -> Tensor4:
    """Low-level feature scaled by the global gate of the high-level one: ``G(Y) ⊗ X``."""
    x, y = as_tensor4(x), as_tensor4(y)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"X {x.shape} and Y {y.shape} must have the same shape")
    return gcam_gate(y, params, mode)[:, :, None, None] * x


def bottom_up_modulation(x: Tensor4, y: Tensor4, params: PcamParams, mode: BnMode = BnMode.TRAIN) -> Tensor4:
    """Modulated high-level feature ``Y' = L(X) ⊗ Y``."""
    x, y = as_tensor4(x), as_tensor4(y)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"X {x.shape} and Y {y.shape} must have the same shape")
    return pcam_gate(x, params, mode) * y


def soft_iou_loss(pred, gt) -> tuple[float, np.ndarray]:
    """
    Soft-IoU loss ``1 - I / (U + eps)`` and its gradient with respect to ``pred``.

    ``I = sum(p * g)`` and ``U = sum(p) + sum(g) - I``.

    Args:
        pred: Probabilities in [0, 1], any shape.
        gt: Binary ground truth with the same shape.

    Returns:
        tuple: ``(loss, d_loss / d_pred)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if not np.all(np.isfinite(pred)) or pred.min(initial=0.0) < 0.0 or pred.max(initial=0.0) > 1.0:
        raise InvalidArgumentError("Predictions must lie in [0, 1]")
    if not np.all((gt == 0) | (gt == 1)):
        raise InvalidArgumentError("Ground truth must be binary")

    intersection = float((pred * gt).sum())
    union = float(pred.sum() + gt.sum()) - intersection + SOFT_IOU_EPS
    loss = 1.0 - intersection / union
    grad = -(gt * union - intersection * (1.0 - gt)) / (union * union)
    return loss, grad


class _TensorRecord(BaseModel):
    shape: list[int]
    data: list[float] = Field(description="row-major values")


class _AttentionRecord(BaseModel):
    kind: AttentionKind
    r: int = Field(description="reduction ratio between C and the hidden width")
    tensors: dict[str, _TensorRecord]


class _FusionRecord(BaseModel):
    variant: ModulationVariant
    channels: int
    attentions: dict[str, _AttentionRecord]


_BN_FIELDS = ("gamma", "beta", "running_mean", "running_var")


def _record(array: np.ndarray) -> _TensorRecord:
    return _TensorRecord(shape=list(array.shape), data=array.ravel().tolist())


def params_to_json(params: FusionParams) -> str:
    """Serialize a parameter bundle (shapes plus row-major data, BN statistics included)."""
    attentions = {}
    for slot, attention in params.attentions.items():
        first, second = attention.weights()
        tensors = {"w1": _record(first), "w2": _record(second)}
        for bn_name, bn in (("bn1", attention.bn1), ("bn2", attention.bn2)):
            tensors.update({f"{bn_name}.{f}": _record(getattr(bn, f)) for f in _BN_FIELDS})
        r = attention.channels // first.shape[0]
        attentions[slot] = _AttentionRecord(kind=attention.kind, r=r, tensors=tensors)
    record = _FusionRecord(variant=params.variant, channels=params.channels, attentions=attentions)
    return record.model_dump_json(indent=2)


def params_from_json(text: str) -> FusionParams:
    """Inverse of ``params_to_json``."""
    try:
        record = _FusionRecord.model_validate_json(text)
    except (ValidationError, json.JSONDecodeError) as e:
        raise InvalidArgumentError(f"Invalid fusion parameter JSON: {e}") from e

    def array(tensors: dict[str, _TensorRecord], name: str) -> np.ndarray:
        if name not in tensors:
            raise InvalidArgumentError(f"Missing tensor {name!r}")
        item = tensors[name]
        values = np.asarray(item.data, dtype=np.float64)
        if values.size != int(np.prod(item.shape)):
            raise InvalidArgumentError(f"Tensor {name!r}: {values.size} values for shape {item.shape}")
        return values.reshape(item.shape)

    attentions: dict[str, AttentionParams] = {}
    for slot, item in record.attentions.items():
        bn1, bn2 = (
            BatchNormParams(*(array(item.tensors, f"{bn_name}.{f}") for f in _BN_FIELDS))
            for bn_name in ("bn1", "bn2")
        )
        first, second = array(item.tensors, "w1"), array(item.tensors, "w2")
        if item.kind is AttentionKind.GLOBAL:
            attentions[slot] = GcamParams(first, second, bn1, bn2, item.r)
        else:
            attentions[slot] = PcamParams(first, second, bn1, bn2)
    params = FusionParams(record.variant, attentions)
    if params.channels != record.channels:
        raise InvalidArgumentError(f"Declared {record.channels} channels, tensors have {params.channels}")
    return params
