import pytest
from threadpoolctl import threadpool_info

from irstd_toolkit.bench import (
    BenchCase,
    BenchReport,
    environment_fingerprint,
    run_bench,
    run_mpcm_suite,
    run_ript_stop_suite,
    run_rpca_suite,
    time_runs,
)
from irstd_toolkit.errors import InvalidArgumentError, QualityGuardError


def test_time_runs_discards_warmups():
    calls = []
    median, runs, result = time_runs(lambda: calls.append(1) or len(calls), runs=5, warmups=2)
    assert len(calls) == 7
    assert len(runs) == 5 and result == 7
    assert median >= 0.0


def test_time_runs_pins_thread_pools():
    _, _, widest = time_runs(lambda: max((pool["num_threads"] for pool in threadpool_info()), default=1), runs=5)
    assert widest == 1


def test_fingerprint_records_thread_limit():
    fingerprint = environment_fingerprint(runs=5)
    assert fingerprint["thread_limit"] == 1
    assert isinstance(fingerprint["threadpools"], list)


def test_mpcm_suite_guards_pass():
    report = run_mpcm_suite(runs=5, size=64, warmups=0)
    assert report.passed, report.to_dict()
    assert report.details["max_abs_diff"] <= 1e-9
    assert report.speedup >= 1.1
    assert report.to_dict()["environment"]["runs"] == 5


def test_rpca_suite_compares_iterations():
    report = run_rpca_suite(runs=5, shape=(100, 80), warmups=0)
    assert report.accelerated.iterations <= report.baseline.iterations
    assert report.details["errors"]["ialm_background"] <= 1e-4
    assert set(report.guards) == {"fewer_iterations", "converged", "recovery"}


@pytest.mark.slow
def test_ript_stop_suite_reports_both_stops():
    report = run_ript_stop_suite(runs=5, size=64, warmups=0)
    assert report.accelerated.iterations <= report.baseline.iterations
    assert report.details["iteration_ratio"] >= 1.0
    assert {"mask_mismatch_pixels", "lambda"} <= set(report.details)


def test_failed_guard_withholds_speedup():
    report = BenchReport(
        suite="mpcm",
        runs=5,
        baseline=BenchCase("mpcm-naive", 10.0, [10.0] * 5),
        accelerated=BenchCase("mpcm", 5.0, [5.0] * 5),
        guards={"max_abs_diff": False, "min_speedup": True},
    )
    assert report.speedup is None
    assert report.to_dict()["passed"] is False
    with pytest.raises(QualityGuardError):
        report.raise_for_guards()


def test_run_bench_validates_arguments():
    with pytest.raises(InvalidArgumentError):
        run_bench("fft", runs=5)
    with pytest.raises(InvalidArgumentError):
        run_bench("mpcm", runs=4)
