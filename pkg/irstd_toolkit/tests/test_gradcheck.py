import numpy as np
import pytest

from irstd_toolkit.acm_nn import BnMode, ModulationVariant
from irstd_toolkit.errors import InvalidArgumentError
from irstd_toolkit.gradcheck import (
    DEFAULT_THRESHOLD,
    check_fusion_gradients,
    check_soft_iou_gradient,
    numerical_grad,
    relative_error,
    run_gradchecks,
)


def test_numerical_grad_of_quadratic(rng):
    x = rng.standard_normal((3, 4))
    before = x.copy()
    grad, valid = numerical_grad(lambda: float((x**2).sum()), x)
    np.testing.assert_allclose(grad, 2 * before, atol=1e-6)
    assert valid.all()
    np.testing.assert_array_equal(x, before)


def test_numerical_grad_flags_kinks():
    x = np.array([0.0, 1.0])
    grad, valid = numerical_grad(
        lambda: float(np.maximum(x, 0).sum()), x, step=1e-3, switch_state=lambda: {"relu": x > 0}
    )
    assert valid.tolist() == [False, True]
    assert grad[1] == pytest.approx(1.0)


def test_numerical_grad_rejects_bad_step():
    with pytest.raises(InvalidArgumentError):
        numerical_grad(lambda: 0.0, np.zeros(2), step=0.0)


def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(0.5)


def test_relative_error_is_scaled_by_the_largest_entry():
    analytic = np.array([10.0, 1e-3])
    numeric = np.array([10.0, 2e-3])
    # the small entry is off by 100% but only 1e-3 in absolute terms
    assert relative_error(analytic, numeric) == pytest.approx(1e-4)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


@pytest.mark.parametrize("variant", list(ModulationVariant))
def test_fusion_backward_matches_finite_differences(variant):
    report = check_fusion_gradients(variant, seed=1)
    assert report.passed, report.to_dict()
    names = {check.name for check in report.tensors}
    assert {"x", "y"} <= names
    assert all(check.checked > 0 for check in report.tensors)


def test_inference_mode_backward_matches_finite_differences():
    report = check_fusion_gradients("acm", mode=BnMode.INFERENCE, seed=2)
    assert report.max_error <= DEFAULT_THRESHOLD


def test_soft_iou_gradient():
    report = check_soft_iou_gradient()
    assert report.passed
    assert report.tensors[0].checked == 72


def test_run_gradchecks_reports_every_subject():
    reports = run_gradchecks([ModulationVariant.BI_LOCAL])
    assert [r.subject for r in reports] == ["bi-local", "soft-iou"]
    assert all(r.to_dict()["passed"] for r in reports)
