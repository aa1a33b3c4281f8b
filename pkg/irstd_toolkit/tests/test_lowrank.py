import numpy as np
import pytest
from pydantic import ValidationError

from irstd_toolkit.dataset import lowrank_sparse_instance, lowrank_sparse_tensor_instance
from irstd_toolkit.errors import InvalidArgumentError
from irstd_toolkit.lowrank import (
    EnergyCriterion,
    RpcaConfig,
    TensorRpcaConfig,
    default_lambda,
    energy_rank,
    fold,
    partial_svt,
    rpca_apg,
    rpca_ialm,
    soft_threshold,
    svt,
    tensor_lambda,
    tensor_rpca,
    unfold,
)


def _relative(estimate, truth):
    return np.linalg.norm(estimate - truth) / np.linalg.norm(truth)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([[3.0, -0.5]]), 1.0), [[2.0, 0.0]])
    np.testing.assert_array_equal(soft_threshold(np.array([[-3.0, 0.5]]), 0.0), [[-3.0, 0.5]])
    with pytest.raises(InvalidArgumentError):
        soft_threshold(np.ones((2, 2)), -0.1)


def test_svt_on_diagonal():
    np.testing.assert_allclose(svt(np.diag([5.0, 2.0, 0.5]), 1.0), np.diag([4.0, 1.0, 0.0]), atol=1e-12)


def test_svt_with_zero_threshold_reconstructs(rng):
    matrix = rng.standard_normal((7, 5))
    np.testing.assert_allclose(svt(matrix, 0.0), matrix, atol=1e-10)


@pytest.mark.parametrize(
    "singulars, ratio, expected",
    [
        ([10.0, 1.0, 0.1], 0.11, 1),
        ([10.0, 1.0, 0.1], 0.0, 3),
        ([4.0, 2.0, 0.0], 0.0, 2),
        ([0.0, 0.0], 0.5, 0),
        ([1.0, 1.0, 1.0, 1.0], 0.5, 2),
    ],
)
def test_energy_rank(singulars, ratio, expected):
    assert energy_rank(singulars, ratio) == expected


def test_squared_energy_ignores_a_noise_floor():
    # one strong component over a flat floor of 100 weak ones
    singulars = [10.0] + [0.1] * 100
    assert energy_rank(singulars, 0.11) > 70
    assert energy_rank(singulars, 0.11, EnergyCriterion.SQUARED) == 1
    assert energy_rank([10.0, 1.0, 0.1], 0.11, EnergyCriterion.SQUARED) == 1
    assert energy_rank([10.0, 1.0, 0.1], 0.0, "squared") == 3


def test_rpca_config_energy_criterion():
    assert RpcaConfig().energy_criterion is EnergyCriterion.MASS
    assert RpcaConfig(energy_criterion="squared").energy_criterion is EnergyCriterion.SQUARED
    with pytest.raises(ValidationError):
        RpcaConfig(energy_criterion="cubed")


def test_energy_rank_rejects_unsorted_input():
    with pytest.raises(InvalidArgumentError):
        energy_rank([1.0, 2.0], 0.1)


def test_partial_svt():
    diagonal = np.diag([5.0, 2.0, 0.5])
    np.testing.assert_allclose(partial_svt(diagonal, 1.0, 1), np.diag([5.0, 1.0, 0.0]), atol=1e-12)
    np.testing.assert_allclose(partial_svt(diagonal, 1.0, 3), diagonal, atol=1e-12)
    np.testing.assert_allclose(partial_svt(diagonal, 1.0, 0), svt(diagonal, 1.0), atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        partial_svt(diagonal, 1.0, 4)


def test_default_lambda():
    assert default_lambda((2500, 484)) == pytest.approx(1 / 50)


def test_config_accepts_lambda_alias():
    assert RpcaConfig.model_validate({"lambda": 0.2}).lam == 0.2
    with pytest.raises(ValidationError):
        RpcaConfig(rho=0.9)


def test_ialm_on_rank_one_leaves_no_target(rng):
    u = 1.0 + 0.3 * rng.random(40)
    v = 1.0 + 0.3 * rng.random(30)
    data = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    result = rpca_ialm(data)
    assert result.converged
    assert np.linalg.norm(result.target) / np.linalg.norm(data) <= 1e-5
    assert _relative(result.background, data) <= 1e-5


def test_ialm_recovers_lowrank_plus_sparse():
    instance = lowrank_sparse_instance(m=50, n=50, rank=2, fraction=0.01, seed=3)
    result = rpca_ialm(instance.data, RpcaConfig(tol=1e-7))
    assert result.converged
    assert _relative(result.background, instance.background) <= 1e-4
    np.testing.assert_array_equal(np.abs(result.target) > 2.5, instance.target != 0)
    assert _relative(result.target, instance.target) <= 1e-3
    assert result.residual_trace[-1] <= 1e-7
    assert result.svd_count == result.iterations + 1


def test_apg_recovers_lowrank_plus_sparse():
    instance = lowrank_sparse_instance(m=50, n=50, rank=2, fraction=0.01, seed=3)
    result = rpca_apg(instance.data, RpcaConfig(tol=1e-7, max_iter=2000))
    assert _relative(result.background, instance.background) <= 1e-4
    assert _relative(result.target, instance.target) <= 1e-3
    np.testing.assert_array_equal(np.abs(result.target) > 2.5, instance.target != 0)


@pytest.mark.parametrize("solver", [rpca_ialm, rpca_apg])
def test_zero_input_finishes_in_one_iteration(solver):
    result = solver(np.zeros((6, 4)))
    assert result.iterations == 1
    assert result.converged
    assert not result.background.any() and not result.target.any()


@pytest.mark.parametrize("solver", [rpca_ialm, rpca_apg])
def test_non_finite_input_is_rejected(solver):
    data = np.ones((4, 4))
    data[1, 2] = np.inf
    with pytest.raises(InvalidArgumentError):
        solver(data)


def test_hitting_max_iter_is_flagged_not_raised(rng):
    result = rpca_ialm(rng.standard_normal((20, 20)), RpcaConfig(max_iter=2))
    assert result.iterations == 2
    assert not result.converged
    assert result.diagnostics()["converged"] is False


def test_partial_sum_with_nonnegative_target():
    instance = lowrank_sparse_instance(m=40, n=40, rank=1, fraction=0.02, seed=1)
    result = rpca_ialm(instance.data, RpcaConfig(energy_ratio=0.11, nonneg_target=True, max_iter=300))
    assert result.target.min() >= 0.0


def test_unfold_and_fold_are_inverse(rng):
    tensor = rng.standard_normal((3, 4, 5))
    for mode in range(3):
        matrix = unfold(tensor, mode)
        assert matrix.shape == (tensor.shape[mode], tensor.size // tensor.shape[mode])
        np.testing.assert_array_equal(fold(matrix, mode, tensor.shape), tensor)


def test_tensor_weights_must_sum_to_one():
    with pytest.raises(ValidationError):
        TensorRpcaConfig(weights=(0.5, 0.5, 0.5))


def test_tensor_solver_leaves_no_target_on_lowrank_data():
    instance = lowrank_sparse_tensor_instance(shape=(12, 12, 16), rank=1, fraction=0.0, seed=2)
    result = tensor_rpca(instance.data, TensorRpcaConfig(max_iter=300))
    assert np.linalg.norm(result.target) / np.linalg.norm(instance.data) <= 1e-3
    assert not result.early_stopped


def test_tensor_lambda_defaults():
    assert tensor_lambda(TensorRpcaConfig(), (20, 20, 30)) == pytest.approx(0.01)
    assert tensor_lambda(TensorRpcaConfig(reweight_eps=0.05), (20, 20, 30)) == pytest.approx(0.05)
    assert tensor_lambda(TensorRpcaConfig(reweight=False), (20, 20, 30)) == pytest.approx(1 / np.sqrt(30))
    assert tensor_lambda(TensorRpcaConfig(lam=0.3), (20, 20, 30)) == 0.3


@pytest.fixture(scope="module")
def slice_spikes():
    return lowrank_sparse_tensor_instance(shape=(20, 20, 20), rank=1, magnitude=5.0, seed=0, spikes_per_slice=1)


def test_slice_spike_instance_layout(slice_spikes):
    per_slice = np.count_nonzero(slice_spikes.target, axis=(0, 1))
    np.testing.assert_array_equal(per_slice, np.ones(20))
    np.testing.assert_array_equal(np.abs(slice_spikes.target[slice_spikes.target != 0]), 5.0)


@pytest.mark.slow
def test_tensor_solver_recovers_slice_spikes(slice_spikes):
    result = tensor_rpca(slice_spikes.data, TensorRpcaConfig(early_stop=False, max_iter=500))
    assert result.converged
    np.testing.assert_array_equal(np.abs(result.target) > 0.01, slice_spikes.target != 0)


@pytest.mark.slow
def test_tensor_early_stop_on_slice_spikes(slice_spikes):
    full = tensor_rpca(slice_spikes.data, TensorRpcaConfig(early_stop=False, max_iter=500))
    early = tensor_rpca(slice_spikes.data, TensorRpcaConfig(max_iter=500))
    assert early.early_stopped
    assert early.iterations <= full.iterations
    assert (np.abs(early.target) > 0.01).any()


def test_tensor_early_stop_precedes_residual_stop():
    instance = lowrank_sparse_tensor_instance(shape=(12, 12, 16), rank=1, fraction=0.01, seed=5)
    config = TensorRpcaConfig(max_iter=400, track_residual_stop=True)
    result = tensor_rpca(instance.data, config)
    diagnostics = result.diagnostics()
    assert result.early_stopped
    assert diagnostics["early_stop_iteration"] == result.iterations
    if diagnostics["residual_stop_iteration"] is not None:
        assert diagnostics["early_stop_iteration"] <= diagnostics["residual_stop_iteration"]
    assert len(result.residual_trace) == result.iterations


def test_tensor_zero_input():
    result = tensor_rpca(np.zeros((3, 3, 3)))
    assert result.converged and result.iterations == 1
