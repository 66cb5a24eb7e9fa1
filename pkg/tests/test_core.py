import numpy as np
import pytest

from tparafac2.core import (
    Parafac2Factors,
    RegularizationConfig,
    TensorSlices,
    objective,
    parafac2_residual,
    reconstruct_slice,
)


def _random_factors(rng, I=6, J=5, K=4, R=3):
    A = rng.standard_normal((I, R))
    B = rng.standard_normal((K, J, R))
    D = rng.random((K, R))
    return Parafac2Factors(A, B, D)


class TestTensorSlices:
    def test_from_list_of_matrices(self):
        mats = [np.arange(6.0).reshape(2, 3) + k for k in range(4)]
        ts = TensorSlices(mats)
        assert (ts.K, ts.I, ts.J) == (4, 2, 3)
        np.testing.assert_array_equal(ts.array[2], mats[2])

    def test_from_stacked_array(self):
        arr = np.random.default_rng(0).standard_normal((3, 4, 5))
        ts = TensorSlices(arr)
        np.testing.assert_array_equal(ts.array, arr)
        assert len(ts.slices) == 3

    def test_copy_constructor_detaches(self):
        arr = np.ones((2, 2, 2))
        ts = TensorSlices(arr)
        ts2 = TensorSlices(ts)
        assert ts2.array is not ts.array
        np.testing.assert_array_equal(ts2.array, ts.array)

    def test_array_is_read_only(self):
        ts = TensorSlices(np.zeros((2, 3, 4)))
        with pytest.raises(ValueError):
            ts.array[0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            ts.slices[0][0, 0] = 1.0

    def test_norm(self):
        arr = np.full((2, 3, 4), 2.0)
        assert TensorSlices(arr).norm() == pytest.approx(np.sqrt(4.0 * 24))

    def test_rejects_ragged_and_empty(self):
        with pytest.raises(ValueError):
            TensorSlices([np.zeros((2, 3)), np.zeros((2, 4))])
        with pytest.raises(ValueError):
            TensorSlices([])
        with pytest.raises(ValueError):
            TensorSlices([np.zeros(3)])

    def test_rejects_non_finite(self):
        arr = np.zeros((2, 2, 2))
        arr[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            TensorSlices(arr)


class TestParafac2Factors:
    def test_shapes_and_views(self):
        f = _random_factors(np.random.default_rng(1))
        assert (f.I, f.J, f.K, f.R) == (6, 5, 4, 3)
        assert f.B_array.shape == (4, 5, 3)
        assert f.D_array.shape == (4, 3)
        assert len(f.B) == 4 and f.B[1].shape == (5, 3)

    def test_accepts_lists(self):
        rng = np.random.default_rng(2)
        A = rng.random((4, 2))
        B = [rng.random((3, 2)) for _ in range(5)]
        D = [rng.random(2) for _ in range(5)]
        f = Parafac2Factors(A, B, D)
        np.testing.assert_array_equal(f.B_array[3], B[3])

    def test_immutable(self):
        f = _random_factors(np.random.default_rng(3))
        with pytest.raises(ValueError):
            f.A[0, 0] = 9.0
        with pytest.raises(ValueError):
            f.B_array[0, 0, 0] = 9.0

    def test_rejects_negative_strengths(self):
        rng = np.random.default_rng(4)
        D = rng.random((4, 3))
        D[2, 1] = -0.5
        with pytest.raises(ValueError):
            Parafac2Factors(rng.random((6, 3)), rng.random((4, 5, 3)), D)

    def test_rejects_shape_mismatches(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            Parafac2Factors(rng.random((6, 3)), rng.random((4, 5, 2)), rng.random((4, 3)))
        with pytest.raises(ValueError):
            Parafac2Factors(rng.random((6, 3)), rng.random((4, 5, 3)), rng.random((3, 3)))

    def test_rejects_non_finite(self):
        rng = np.random.default_rng(6)
        A = rng.random((6, 3))
        A[0, 0] = np.inf
        with pytest.raises(ValueError):
            Parafac2Factors(A, rng.random((4, 5, 3)), rng.random((4, 3)))


def test_reconstruct_slice_matches_direct_product():
    rng = np.random.default_rng(7)
    f = _random_factors(rng)
    for k in range(f.K):
        want = f.A @ np.diag(f.D_array[k]) @ f.B_array[k].T
        np.testing.assert_allclose(reconstruct_slice(f, k), want, rtol=1e-13)
    with pytest.raises(IndexError):
        reconstruct_slice(f, f.K)


def test_objective_matches_slicewise_sum():
    rng = np.random.default_rng(8)
    f = _random_factors(rng)
    data = TensorSlices(rng.standard_normal((f.K, f.I, f.J)))
    reg = RegularizationConfig(lambda_A=0.3, lambda_B=0.7, lambda_D=0.2)

    total = 0.0
    for k in range(f.K):
        resid = data.array[k] - f.A @ np.diag(f.D_array[k]) @ f.B_array[k].T
        total += np.sum(resid**2)
    total += 0.3 * np.sum(f.A**2)
    total += 0.2 * np.sum(f.D_array**2)
    for k in range(1, f.K):
        total += 0.7 * np.sum((f.B_array[k] - f.B_array[k - 1]) ** 2)

    assert objective(data, f, reg) == pytest.approx(total, rel=1e-12)


def test_objective_rejects_mismatched_shapes():
    rng = np.random.default_rng(9)
    f = _random_factors(rng)
    data = TensorSlices(rng.standard_normal((f.K, f.I + 1, f.J)))
    with pytest.raises(ValueError):
        objective(data, f, RegularizationConfig())


def test_regularization_config_rejects_negative_weights():
    with pytest.raises(ValueError):
        RegularizationConfig(lambda_B=-1.0)
    with pytest.raises(ValueError):
        RegularizationConfig(lambda_A=np.nan)


class TestParafac2Residual:
    def test_zero_for_equal_cross_products(self):
        rng = np.random.default_rng(10)
        R, J, K = 3, 7, 5
        DeltaB = rng.standard_normal((R, R))
        B = []
        for _ in range(K):
            Q, _ = np.linalg.qr(rng.standard_normal((J, R)))
            B.append(Q @ DeltaB)
        f = Parafac2Factors(rng.random((4, R)), np.stack(B), rng.random((K, R)))
        assert parafac2_residual(f) < 1e-12

    def test_positive_for_unconstrained_factors(self):
        f = _random_factors(np.random.default_rng(11))
        assert parafac2_residual(f) > 1e-3

    def test_single_slice_is_trivially_feasible(self):
        rng = np.random.default_rng(12)
        f = Parafac2Factors(rng.random((4, 2)), rng.random((1, 5, 2)), rng.random((1, 2)))
        assert parafac2_residual(f) == 0.0
