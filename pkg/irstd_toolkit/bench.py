"""
Timing suites for the accelerated code paths.

Each suite times a baseline against its accelerated counterpart and runs a
quality guard that the accelerated output still matches the baseline:

- ``mpcm``: direct window sums vs whole-map shifts for the contrast map;
- ``rpca``: APG vs IALM on a rank-2 + sparse patch-image sized matrix;
- ``ript-stop``: residual-only stopping vs support-stability early stopping.
"""

import logging
import platform
import statistics as stats
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .dataset import SynthConfig, lowrank_sparse_instance, synth_sample
from .detectors import MpcmConfig, mpcm_naive, mpcm_shifted, ript_lambda
from .errors import InvalidArgumentError, QualityGuardError
from .imgproc import PatchConfig, PatchTensor, adaptive_threshold, fold_tensor, patch_tensor
from .lowrank import RpcaConfig, TensorRpcaConfig, rpca_apg, rpca_ialm, tensor_rpca

logger = logging.getLogger(__name__)

SUITES = ("mpcm", "rpca", "ript-stop")
MIN_RUNS = 5
WARMUP_RUNS = 2
BENCH_THREADS = 1

MPCM_MAX_DIFF = 1e-9
MPCM_MIN_SPEEDUP = 1.1
RPCA_MAX_ERROR = 1e-4


@dataclass
class BenchCase:
    method: str
    median_ms: float
    runs_ms: list[float]
    iterations: int | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "median_ms": self.median_ms,
            "runs_ms": self.runs_ms,
            "iterations": self.iterations,
        }


@dataclass
class BenchReport:
    suite: str
    runs: int
    baseline: BenchCase
    accelerated: BenchCase
    guards: dict[str, bool] = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.guards.values())

    @property
    def speedup(self) -> float | None:
        """Baseline over accelerated median time; withheld when a guard failed."""
        if not self.passed or self.accelerated.median_ms <= 0:
            return None
        return self.baseline.median_ms / self.accelerated.median_ms

    def raise_for_guards(self) -> None:
        failed = [name for name, ok in self.guards.items() if not ok]
        if failed:
            raise QualityGuardError(f"Bench suite {self.suite} failed guards: {', '.join(failed)}")

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "runs": self.runs,
            "baseline": self.baseline.to_dict(),
            "accelerated": self.accelerated.to_dict(),
            "speedup": self.speedup,
            "guards": dict(self.guards),
            "passed": self.passed,
            "details": self.details,
            "environment": self.environment,
        }


def environment_fingerprint(runs: int) -> dict:
    return {
        "cpu": platform.processor() or platform.machine(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "runs": runs,
        "warmups": WARMUP_RUNS,
        "thread_limit": BENCH_THREADS,
        "threadpools": [
            f"{pool['internal_api']} {pool.get('version') or ''}".strip() for pool in threadpool_info()
        ],
    }


def time_runs(fn: Callable[[], object], runs: int, warmups: int = WARMUP_RUNS) -> tuple[float, list[float], object]:
    """
    Median wall time of ``fn`` over ``runs`` calls after discarded warm-ups.

    BLAS and OpenMP pools are held to ``BENCH_THREADS`` threads for the
    warm-ups and the timed calls.

    Returns:
        tuple: ``(median_ms, per_run_ms, last_result)``.
    """
    result = None
    samples = []
    with threadpool_limits(limits=BENCH_THREADS):
        for _ in range(warmups):
            result = fn()
        for _ in range(runs):
            start = time.perf_counter_ns()
            result = fn()
            samples.append((time.perf_counter_ns() - start) / 1e6)
    return stats.median(samples), samples, result


def _check_runs(runs: int) -> None:
    if runs < MIN_RUNS:
        raise InvalidArgumentError(f"Benchmarks need at least {MIN_RUNS} timed runs, got {runs}")


def run_mpcm_suite(runs: int = 10, size: int = 256, seed: int = 0, warmups: int = WARMUP_RUNS) -> BenchReport:
    """Direct-summation vs shifted contrast maps on a random ``size × size`` image."""
    _check_runs(runs)
    image = np.random.default_rng(seed).random((size, size))
    config = MpcmConfig()
    naive_ms, naive_runs, naive = time_runs(lambda: mpcm_naive(image, config), runs, warmups)
    shifted_ms, shifted_runs, shifted = time_runs(lambda: mpcm_shifted(image, config), runs, warmups)
    max_diff = float(np.abs(naive - shifted).max())
    speedup = naive_ms / shifted_ms if shifted_ms > 0 else float("inf")
    logger.info(f"MPCM bench: naive {naive_ms:.1f} ms, shifted {shifted_ms:.1f} ms, diff {max_diff:.2e}")
    return BenchReport(
        suite="mpcm",
        runs=runs,
        baseline=BenchCase("mpcm-naive", naive_ms, naive_runs),
        accelerated=BenchCase("mpcm", shifted_ms, shifted_runs),
        guards={"max_abs_diff": max_diff <= MPCM_MAX_DIFF, "min_speedup": speedup >= MPCM_MIN_SPEEDUP},
        details={"size": size, "scales": list(config.scales), "max_abs_diff": max_diff},
        environment=environment_fingerprint(runs),
    )


def _relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - truth) / max(np.linalg.norm(truth), 1e-300))


def run_rpca_suite(
    runs: int = 5,
    shape: tuple[int, int] = (2500, 484),
    rank: int = 2,
    fraction: float = 0.01,
    seed: int = 0,
    warmups: int = WARMUP_RUNS,
) -> BenchReport:
    """APG vs IALM to the same tolerance on a shared rank + sparse instance."""
    _check_runs(runs)
    instance = lowrank_sparse_instance(*shape, rank=rank, fraction=fraction, seed=seed)
    config = RpcaConfig(tol=1e-7, max_iter=1000)
    apg_ms, apg_runs, apg = time_runs(lambda: rpca_apg(instance.data, config), runs, warmups)
    ialm_ms, ialm_runs, ialm = time_runs(lambda: rpca_ialm(instance.data, config), runs, warmups)

    errors = {
        "apg_background": _relative_error(apg.background, instance.background),
        "apg_target": _relative_error(apg.target, instance.target),
        "ialm_background": _relative_error(ialm.background, instance.background),
        "ialm_target": _relative_error(ialm.target, instance.target),
    }
    logger.info(f"RPCA bench: APG {apg.iterations} it / {apg_ms:.0f} ms, IALM {ialm.iterations} it / {ialm_ms:.0f} ms")
    return BenchReport(
        suite="rpca",
        runs=runs,
        baseline=BenchCase("apg", apg_ms, apg_runs, apg.iterations),
        accelerated=BenchCase("ialm", ialm_ms, ialm_runs, ialm.iterations),
        guards={
            "fewer_iterations": ialm.iterations <= apg.iterations,
            "converged": apg.converged and ialm.converged,
            "recovery": max(errors.values()) <= RPCA_MAX_ERROR,
        },
        details={"shape": list(shape), "rank": rank, "fraction": fraction, "tol": config.tol, "errors": errors},
        environment=environment_fingerprint(runs),
    )


def run_ript_stop_suite(
    runs: int = 5,
    size: int = 128,
    patch: PatchConfig | None = None,
    L: float = 0.001,
    k: float = 10.0,
    seed: int = 0,
    warmups: int = WARMUP_RUNS,
) -> BenchReport:
    """Residual-only vs support-stability stopping of the tensor solver on one synthetic scene."""
    _check_runs(runs)
    patch = patch or PatchConfig(patch_size=30, stride=10)
    scene = synth_sample(SynthConfig(height=size, width=size, count=1, count_probabilities={1: 1.0}, seed=seed), 0)
    tensor = patch_tensor(scene.image, patch)
    lam = ript_lambda(L, tensor.shape)
    residual_config = TensorRpcaConfig(lam=lam, early_stop=False)
    early_config = TensorRpcaConfig(lam=lam, early_stop=True)

    def mask_of(target: np.ndarray) -> np.ndarray:
        folded = fold_tensor(PatchTensor(target, patch, tensor.source_shape, tensor.anchors))
        return adaptive_threshold(np.maximum(folded, 0.0), k)

    residual_ms, residual_runs, residual = time_runs(lambda: tensor_rpca(tensor.data, residual_config), runs, warmups)
    early_ms, early_runs, early = time_runs(lambda: tensor_rpca(tensor.data, early_config), runs, warmups)
    mismatch = int((mask_of(residual.target) ^ mask_of(early.target)).sum())
    ratio = residual.iterations / early.iterations
    logger.info(f"RIPT stop bench: residual {residual.iterations} it, early {early.iterations} it, mask diff {mismatch}")
    return BenchReport(
        suite="ript-stop",
        runs=runs,
        baseline=BenchCase("residual-stop", residual_ms, residual_runs, residual.iterations),
        accelerated=BenchCase("early-stop", early_ms, early_runs, early.iterations),
        guards={"fewer_iterations": early.iterations <= residual.iterations, "same_mask": mismatch == 0},
        details={
            "size": size,
            "patch_size": patch.patch_size,
            "stride": patch.stride,
            "lambda": lam,
            "iteration_ratio": ratio,
            "mask_mismatch_pixels": mismatch,
        },
        environment=environment_fingerprint(runs),
    )


def run_bench(suite: str, runs: int, **kwargs) -> BenchReport:
    if suite not in SUITES:
        raise InvalidArgumentError(f"Unknown bench suite {suite!r}; expected one of {list(SUITES)}")
    runner = {"mpcm": run_mpcm_suite, "rpca": run_rpca_suite, "ript-stop": run_ript_stop_suite}[suite]
    return runner(runs=runs, **kwargs)
