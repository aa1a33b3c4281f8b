"""
Proximal operators and low-rank + sparse solvers.

Matrix solvers split ``D = B + T`` into a low-rank background ``B`` and a
sparse target ``T`` by minimizing ``||B||_* + lambda * ||T||_1``:

- ``rpca_ialm``: inexact augmented Lagrange multipliers (optionally with the
  partial-sum singular value operator and a nonnegative target, which is the
  NIPPS variant);
- ``rpca_apg``: accelerated proximal gradient with continuation, kept as the
  slower reference solver.

``tensor_rpca`` solves the reweighted patch-tensor model with one nuclear norm
per mode unfolding and supports early stopping on a stable target support.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg

from .errors import InvalidArgumentError, NumericError

logger = logging.getLogger(__name__)


def soft_threshold(matrix: np.ndarray, tau) -> np.ndarray:
    """
    Entrywise shrinkage ``sign(m) * max(|m| - tau, 0)``.

    ``tau`` may be a scalar or an array broadcastable to ``matrix``.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise InvalidArgumentError("Shrinkage threshold must be nonnegative")
    matrix = np.asarray(matrix, dtype=np.float64)
    return np.sign(matrix) * np.maximum(np.abs(matrix) - tau, 0.0)


def _svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return linalg.svd(matrix, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except linalg.LinAlgError:
        logger.debug("gesdd failed, retrying SVD with gesvd")
    try:
        return linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericError(f"SVD of a {matrix.shape} matrix did not converge") from e


def _compose(u: np.ndarray, singulars: np.ndarray, vt: np.ndarray) -> np.ndarray:
    keep = singulars > 0
    return (u[:, keep] * singulars[keep]) @ vt[keep]


def svt(matrix: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal operator of ``tau * ||.||_*``."""
    if tau < 0:
        raise InvalidArgumentError(f"SVT threshold must be nonnegative, got {tau}")
    u, s, vt = _svd(np.asarray(matrix, dtype=np.float64))
    return _compose(u, np.maximum(s - tau, 0.0), vt)


class EnergyCriterion(str, Enum):
    """How ``energy_rank`` measures the spectrum."""

    MASS = "mass"  # sum of singular values
    SQUARED = "squared"  # sum of squared singular values (Frobenius energy)


def energy_rank(singulars, ratio: float, criterion: EnergyCriterion = EnergyCriterion.MASS) -> int:
    """
    Smallest rank whose leading singular values carry ``1 - ratio`` of the energy.

    With ``EnergyCriterion.MASS`` the energy is the plain sum of singular
    values. A flat noise floor carries a lot of plain mass, so on noisy
    patch-images ``EnergyCriterion.SQUARED`` keeps far fewer components.

    Args:
        singulars: Nonincreasing, nonnegative singular values.
        ratio: Energy left outside the kept rank, in [0, 1).
        criterion: Plain or squared cumulative energy.

    Returns:
        int: The rank ``r0``; 0 when every singular value is 0.
    """
    singulars = np.asarray(singulars, dtype=np.float64)
    if not 0 <= ratio < 1:
        raise InvalidArgumentError(f"Energy ratio must lie in [0, 1), got {ratio}")
    if np.any(singulars < 0) or np.any(np.diff(singulars) > 0):
        raise InvalidArgumentError("Singular values must be nonnegative and sorted nonincreasing")
    energy = singulars**2 if EnergyCriterion(criterion) is EnergyCriterion.SQUARED else singulars
    total = energy.sum()
    if total == 0:
        return 0
    if ratio == 0:
        return int(np.count_nonzero(singulars))
    kept = np.cumsum(energy) / total
    return int(np.argmax(kept >= 1.0 - ratio)) + 1


def _partial_shrink(singulars: np.ndarray, tau: float, rank: int) -> np.ndarray:
    shrunk = np.maximum(singulars - tau, 0.0)
    shrunk[:rank] = singulars[:rank]
    return shrunk


def partial_svt(matrix: np.ndarray, tau: float, rank: int) -> np.ndarray:
    """SVT that leaves the leading ``rank`` singular values untouched."""
    if tau < 0:
        raise InvalidArgumentError(f"SVT threshold must be nonnegative, got {tau}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if not 0 <= rank <= min(matrix.shape):
        raise InvalidArgumentError(f"Rank {rank} outside [0, {min(matrix.shape)}]")
    u, s, vt = _svd(matrix)
    return _compose(u, _partial_shrink(s, tau, rank), vt)


class RpcaConfig(BaseModel):
    """Settings for the matrix solvers."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float | None = Field(
        None, gt=0, alias="lambda",
        description="sparsity weight; None uses 1/sqrt(max(m, n))",
    )
    mu0: float | None = Field(None, gt=0, description="initial penalty; None uses 1.25/sigma_max(D)")
    rho: float = Field(1.5, gt=1, description="penalty growth per iteration")
    mu_max_factor: float = Field(1e7, gt=1, description="penalty cap as a multiple of mu0")
    tol: float = Field(1e-7, gt=0, lt=1, description="relative residual ||D-B-T||_F/||D||_F")
    max_iter: int = Field(1000, ge=1)
    nonneg_target: bool = Field(False, description="project the target onto T >= 0")
    energy_ratio: float = Field(
        0.0, ge=0, lt=1, description="partial-sum energy ratio r; 0 disables partial-sum mode"
    )
    energy_criterion: EnergyCriterion = Field(
        EnergyCriterion.MASS, description="spectrum measure used to pick the partial-sum rank"
    )


@dataclass
class RpcaResult:
    """Background/target split with solver diagnostics."""

    background: np.ndarray
    target: np.ndarray
    iterations: int
    residual_trace: list[float] = field(default_factory=list)
    svd_count: int = 0
    converged: bool = False
    early_stopped: bool = False

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "svd_count": self.svd_count,
            "residual_trace": list(self.residual_trace),
            "converged": self.converged,
            "early_stopped": self.early_stopped,
        }


def _check_finite(data: np.ndarray, ndim: int) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != ndim:
        raise InvalidArgumentError(f"Expected a {ndim}-D array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError("Input contains non-finite values")
    return data


def _zero_result(data: np.ndarray) -> RpcaResult:
    return RpcaResult(
        background=np.zeros_like(data),
        target=np.zeros_like(data),
        iterations=1,
        residual_trace=[0.0],
        converged=True,
    )


def default_lambda(shape: tuple[int, ...]) -> float:
    """The standard robust PCA weight ``1/sqrt(max(m, n))``."""
    return 1.0 / math.sqrt(max(shape))


def rpca_ialm(data: np.ndarray, config: RpcaConfig | None = None) -> RpcaResult:
    """
    Robust PCA by inexact augmented Lagrange multipliers.

    With ``config.energy_ratio > 0`` the background update uses
    ``partial_svt`` with the rank chosen by ``energy_rank`` under
    ``config.energy_criterion``; with ``config.nonneg_target`` the target is
    projected onto ``T >= 0``.

    Args:
        data: The observed matrix ``D``.
        config: Solver settings.

    Returns:
        RpcaResult: ``converged`` is False when ``max_iter`` was reached.
    """
    config = config or RpcaConfig()
    data = _check_finite(data, ndim=2)
    norm_d = np.linalg.norm(data)
    if norm_d == 0:
        return _zero_result(data)

    lam = config.lam if config.lam is not None else default_lambda(data.shape)
    sigma_max = _svd(data)[1][0]
    svd_count = 1
    mu = config.mu0 if config.mu0 is not None else 1.25 / sigma_max
    mu_max = mu * config.mu_max_factor

    dual = data / max(sigma_max, np.abs(data).max() / lam)
    target = np.zeros_like(data)
    background = np.zeros_like(data)
    trace: list[float] = []
    converged = False

    for iteration in range(1, config.max_iter + 1):
        u, s, vt = _svd(data - target + dual / mu)
        svd_count += 1
        if config.energy_ratio > 0:
            rank = energy_rank(s, config.energy_ratio, config.energy_criterion)
            shrunk = _partial_shrink(s, 1.0 / mu, rank)
        else:
            shrunk = np.maximum(s - 1.0 / mu, 0.0)
        background = _compose(u, shrunk, vt)

        target = soft_threshold(data - background + dual / mu, lam / mu)
        if config.nonneg_target:
            np.maximum(target, 0.0, out=target)

        residual = data - background - target
        dual += mu * residual
        mu = min(mu * config.rho, mu_max)

        trace.append(float(np.linalg.norm(residual) / norm_d))
        logger.debug(f"ialm iteration {iteration}: residual {trace[-1]:.3e}")
        if trace[-1] <= config.tol:
            converged = True
            break

    if converged:
        logger.info(f"IALM converged in {iteration} iterations")
    else:
        logger.warning(f"IALM stopped at max_iter={config.max_iter} with residual {trace[-1]:.3e}")
    return RpcaResult(background, target, iteration, trace, svd_count, converged)


def rpca_apg(
    data: np.ndarray,
    config: RpcaConfig | None = None,
    eta: float = 0.9,
    mu_floor_factor: float = 1e-9,
) -> RpcaResult:
    """
    Robust PCA by accelerated proximal gradient with continuation.

    Minimizes ``mu * (||B||_* + lambda * ||T||_1) + ||D - B - T||_F^2 / 2``
    with Nesterov extrapolation while ``mu`` decays geometrically by ``eta``
    down to ``mu_floor_factor * mu0``. The run converges when the relative
    residual is within ``config.tol`` and the last step moved the iterate by
    no more than ``config.tol * ||D||_F``.
    """
    config = config or RpcaConfig()
    data = _check_finite(data, ndim=2)
    norm_d = np.linalg.norm(data)
    if norm_d == 0:
        return _zero_result(data)

    lam = config.lam if config.lam is not None else default_lambda(data.shape)
    sigma_max = _svd(data)[1][0]
    svd_count = 1
    mu = config.mu0 if config.mu0 is not None else 0.99 * sigma_max
    mu_floor = mu_floor_factor * mu
    lipschitz = 2.0

    background = np.zeros_like(data)
    target = np.zeros_like(data)
    prev_background = background
    prev_target = target
    t_prev = t_curr = 1.0
    trace: list[float] = []
    converged = False

    for iteration in range(1, config.max_iter + 1):
        momentum = (t_prev - 1.0) / t_curr
        lookahead_b = background + momentum * (background - prev_background)
        lookahead_t = target + momentum * (target - prev_target)
        gradient = (lookahead_b + lookahead_t - data) / lipschitz

        u, s, vt = _svd(lookahead_b - gradient)
        svd_count += 1
        if config.energy_ratio > 0:
            rank = energy_rank(s, config.energy_ratio, config.energy_criterion)
            shrunk = _partial_shrink(s, mu / lipschitz, rank)
        else:
            shrunk = np.maximum(s - mu / lipschitz, 0.0)
        new_background = _compose(u, shrunk, vt)
        new_target = soft_threshold(lookahead_t - gradient, lam * mu / lipschitz)
        if config.nonneg_target:
            np.maximum(new_target, 0.0, out=new_target)

        step = math.hypot(
            np.linalg.norm(new_background - background), np.linalg.norm(new_target - target)
        )
        prev_background, background = background, new_background
        prev_target, target = target, new_target
        t_prev, t_curr = t_curr, (1.0 + math.sqrt(4.0 * t_curr * t_curr + 1.0)) / 2.0
        mu = max(eta * mu, mu_floor)

        trace.append(float(np.linalg.norm(data - background - target) / norm_d))
        logger.debug(f"apg iteration {iteration}: residual {trace[-1]:.3e}")
        if trace[-1] <= config.tol and step <= config.tol * norm_d:
            converged = True
            break

    if converged:
        logger.info(f"APG converged in {iteration} iterations")
    else:
        logger.warning(f"APG stopped at max_iter={config.max_iter} with residual {trace[-1]:.3e}")
    return RpcaResult(background, target, iteration, trace, svd_count, converged)


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: the mode axis becomes the rows."""
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def fold(matrix: np.ndarray, mode: int, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of ``unfold`` for a tensor of the given shape."""
    moved = [shape[mode]] + [size for axis, size in enumerate(shape) if axis != mode]
    return np.moveaxis(matrix.reshape(moved), 0, mode)


class TensorRpcaConfig(BaseModel):
    """Settings for the reweighted patch-tensor solver."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float | None = Field(
        None, gt=0, alias="lambda",
        description=(
            "sparsity weight; None uses reweight_eps when reweighting (unit weight on entries "
            "without target) and 1/sqrt(max(I, J, P)) otherwise"
        ),
    )
    weights: tuple[float, float, float] = Field(
        (1 / 3, 1 / 3, 1 / 3), description="nuclear-norm weight alpha_i of each mode unfolding"
    )
    tol: float = Field(1e-7, gt=0, lt=1, description="relative residual tolerance")
    support_threshold: float = Field(
        0.01, ge=0, description="|T| above this value counts as target support"
    )
    support_patience: int = Field(
        1, ge=1, description="consecutive unchanged-support iterations that trigger early stop"
    )
    reweight: bool = Field(True, description="update entrywise weights 1/(|T| + reweight_eps)")
    reweight_eps: float = Field(0.01, gt=0)
    mu0: float | None = Field(None, gt=0, description="initial penalty; None uses 1.25/max_i sigma_max(D_(i))")
    rho: float = Field(1.5, gt=1)
    mu_max_factor: float = Field(1e7, gt=1)
    max_iter: int = Field(500, ge=1)
    early_stop: bool = Field(True, description="stop when the target support is stable")
    track_residual_stop: bool = Field(
        False, description="after an early stop keep iterating to record the residual-only stop"
    )
    h: float = Field(0.1, description="reserved for the local-structure prior; not used")

    @field_validator("weights")
    @classmethod
    def _weights_are_convex(cls, weights: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ValueError(f"Mode weights must be nonnegative and sum to 1, got {weights}")
        return weights


def tensor_lambda(config: TensorRpcaConfig, shape: tuple[int, ...]) -> float:
    """Sparsity weight of a tensor solve: the configured value or the default for ``shape``."""
    if config.lam is not None:
        return config.lam
    # lambda * 1/reweight_eps == 1 on entries that hold no target
    return config.reweight_eps if config.reweight else default_lambda(shape)


@dataclass
class TensorRpcaResult(RpcaResult):
    """Tensor split; also records both stopping iterations when known."""

    early_stop_iteration: int | None = None
    residual_stop_iteration: int | None = None

    def diagnostics(self) -> dict:
        report = super().diagnostics()
        report["early_stop_iteration"] = self.early_stop_iteration
        report["residual_stop_iteration"] = self.residual_stop_iteration
        return report


def tensor_rpca(data: np.ndarray, config: TensorRpcaConfig | None = None) -> TensorRpcaResult:
    """
    Reweighted low-rank + sparse split of a 3-way tensor by ADMM.

    Solves ``min sum_i alpha_i ||B_(i)||_* + lambda ||W * T||_1`` subject to
    ``D = B + T`` with one auxiliary copy of ``B`` per mode unfolding. After
    every iteration the weights become ``1/(|T| + reweight_eps)``. Entries
    start at weight ``1/reweight_eps``, the weight of an entry with no target.

    Two stopping rules run side by side: the relative residual (including
    the consensus gap between ``B`` and its mode copies) falling to
    ``config.tol``, and the support ``|T| > support_threshold`` staying
    nonempty and unchanged for ``support_patience`` iterations.

    Args:
        data: The tensor ``D``; a ``PatchTensor``'s ``data`` or any 3-D array.
        config: Solver settings.

    Returns:
        TensorRpcaResult: The state at the first stopping rule that fired.
    """
    config = config or TensorRpcaConfig()
    data = _check_finite(data, ndim=3)
    norm_d = np.linalg.norm(data)
    if norm_d == 0:
        zero = _zero_result(data)
        return TensorRpcaResult(
            zero.background, zero.target, 1, [0.0], 0, True,
            early_stop_iteration=None, residual_stop_iteration=1,
        )

    shape = data.shape
    lam = tensor_lambda(config, shape)
    spectral = [_svd(unfold(data, mode))[1][0] for mode in range(3)]
    svd_count = 3
    mu = config.mu0 if config.mu0 is not None else 1.25 / max(spectral)
    mu_max = mu * config.mu_max_factor
    n_modes = len(config.weights)

    background = np.zeros_like(data)
    target = np.zeros_like(data)
    copies = [np.zeros_like(data) for _ in range(n_modes)]
    dual = np.zeros_like(data)
    copy_duals = [np.zeros_like(data) for _ in range(n_modes)]
    weights = np.full(shape, 1.0 / config.reweight_eps) if config.reweight else np.ones(shape)

    trace: list[float] = []
    previous_support: np.ndarray | None = None
    stable_for = 0
    snapshot: tuple[np.ndarray, np.ndarray, int] | None = None
    residual_stop: int | None = None

    for iteration in range(1, config.max_iter + 1):
        for mode, alpha in enumerate(config.weights):
            unfolded = unfold(background + copy_duals[mode] / mu, mode)
            copies[mode] = fold(svt(unfolded, alpha / mu), mode, shape)
            svd_count += 1
        target = soft_threshold(data - background + dual / mu, lam * weights / mu)

        background = (
            data - target + dual / mu
            + sum(copy - copy_dual / mu for copy, copy_dual in zip(copies, copy_duals))
        ) / (1 + n_modes)

        residual = data - background - target
        dual += mu * residual
        gaps = [background - copy for copy in copies]
        for copy_dual, gap in zip(copy_duals, gaps):
            copy_dual += mu * gap
        mu = min(mu * config.rho, mu_max)
        if config.reweight:
            weights = 1.0 / (np.abs(target) + config.reweight_eps)

        worst = max([np.linalg.norm(residual)] + [np.linalg.norm(gap) for gap in gaps])
        trace.append(float(worst / norm_d))

        support = np.abs(target) > config.support_threshold
        if previous_support is not None and support.any() and np.array_equal(support, previous_support):
            stable_for += 1
        else:
            stable_for = 0
        previous_support = support
        logger.debug(
            f"tensor iteration {iteration}: residual {trace[-1]:.3e}, support {int(support.sum())}"
        )

        if config.early_stop and snapshot is None and stable_for >= config.support_patience:
            snapshot = (background.copy(), target.copy(), iteration)
            logger.info(f"Target support stable at iteration {iteration}")
            if not config.track_residual_stop:
                break
        if trace[-1] <= config.tol:
            residual_stop = iteration
            break

    if snapshot is not None:
        background, target, stopped_at = snapshot
        logger.info(
            f"Tensor solver stopped early at {stopped_at}"
            + (f" (residual rule: {residual_stop})" if residual_stop is not None else "")
        )
        return TensorRpcaResult(
            background, target, stopped_at, trace[:stopped_at], svd_count, True, True,
            early_stop_iteration=stopped_at, residual_stop_iteration=residual_stop,
        )

    converged = residual_stop is not None
    if converged:
        logger.info(f"Tensor solver converged in {iteration} iterations")
    else:
        logger.warning(f"Tensor solver stopped at max_iter={config.max_iter} with residual {trace[-1]:.3e}")
    return TensorRpcaResult(
        background, target, iteration, trace, svd_count, converged, False,
        early_stop_iteration=iteration if config.early_stop and converged else None,
        residual_stop_iteration=residual_stop,
    )
