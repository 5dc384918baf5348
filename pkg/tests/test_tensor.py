import math

import numpy as np
import pytest

from issa import make_rng, matmul, project, random_feature_map, row_softmax
from issa.errors import ParameterError, ShapeError
from issa.tensor import avg_pool, check_feature_map, load_feature_map, save_feature_map

# Captured once from the Philox generator, seed 42, shape (1, 2, 2, 2).
GOLDEN_142 = [
    -0.8278447385294305, -0.7168853524417353, -0.4598139299045061,
    0.7480757293456815, -0.6596709465380699, 0.01362484767557115,
    -0.3378127257491599, 0.6725994174404524,
]


class TestMatmul:
    def test_identity(self):
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(np.eye(2), b), b)

    def test_hand_oracle(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        # naive triple loop
        want = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    want[i, j] += a[i, k] * b[k, j]
        assert np.array_equal(matmul(a, b), want)
        assert np.array_equal(want, [[19, 22], [43, 50]])

    def test_zero(self):
        assert np.array_equal(matmul(np.zeros((3, 2)), np.ones((2, 4))), np.zeros((3, 4)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_associativity(self, rng):
        for _ in range(100):
            d = rng.integers(1, 6, size=4)
            a, b, c = (rng.uniform(-1, 1, (d[i], d[i + 1])) for i in range(3))
            lhs = matmul(matmul(a, b), c)
            rhs = matmul(a, matmul(b, c))
            assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


class TestRowSoftmax:
    def test_symmetry(self):
        assert np.allclose(row_softmax(np.array([[0.0, 0.0]]), 1.0), [[0.5, 0.5]])

    def test_ln3(self):
        out = row_softmax(np.array([[math.log(3), 0.0]]), 1.0)
        assert np.allclose(out, [[0.75, 0.25]], atol=1e-15)

    def test_high_precision_oracle(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 60
        row = make_rng(7).uniform(-1.0, 1.0, size=(1, 8))
        e = [mp.e ** (mp.mpf(float(v)) / mp.sqrt(4)) for v in row.ravel()]
        tot = sum(e)
        want = np.array([float(v / tot) for v in e])
        got = row_softmax(row, 2.0)
        assert abs(got.sum() - 1.0) < 1e-12
        assert np.max(np.abs(got.ravel() - want)) < 1e-15

    def test_row_stochastic_with_extreme_entries(self, rng):
        m = rng.uniform(-5, 5, size=(6, 7))
        m[0, 0], m[2, 3] = 700.0, -700.0
        out = row_softmax(m, 1.0)
        assert np.all(out >= 0)
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12

    def test_shift_invariance(self, rng):
        m = rng.uniform(-3, 3, size=(5, 9))
        shifted = m + rng.uniform(-40, 40, size=(5, 1))
        assert np.max(np.abs(row_softmax(m, 1.3) - row_softmax(shifted, 1.3))) < 1e-12

    def test_nonpositive_scale(self):
        with pytest.raises(ParameterError):
            row_softmax(np.zeros((1, 2)), 0.0)


class TestProject:
    def test_identity(self, rng):
        x = random_feature_map(2, 4, 3, 3, rng)
        assert np.array_equal(project(x, np.eye(4), np.zeros(4)), x)

    def test_zero_weights_give_bias(self, rng):
        x = random_feature_map(1, 4, 2, 3, rng)
        b = np.array([1.0, -2.0, 0.5])
        out = project(x, np.zeros((3, 4)), b)
        assert np.allclose(out, b[None, :, None, None] * np.ones((1, 3, 2, 3)))

    def test_per_position_oracle(self):
        rng = make_rng(3)
        w = rng.uniform(-1, 1, size=(2, 4))
        b = rng.uniform(-1, 1, size=2)
        x = random_feature_map(1, 4, 2, 2, rng)
        out = project(x, w, b)
        for hh in range(2):
            for ww in range(2):
                want = w @ x[0, :, hh, ww] + b
                assert np.max(np.abs(out[0, :, hh, ww] - want)) < 1e-12

    def test_channel_mismatch(self, rng):
        x = random_feature_map(1, 4, 2, 2, rng)
        with pytest.raises(ShapeError):
            project(x, np.eye(3), np.zeros(3))


class TestRandomFeatureMap:
    def test_range(self):
        x = random_feature_map(1, 1, 1, 1, make_rng(0))
        assert x.shape == (1, 1, 1, 1)
        assert -1.0 <= x[0, 0, 0, 0] < 1.0

    def test_determinism(self):
        a = random_feature_map(2, 3, 4, 5, make_rng(123))
        b = random_feature_map(2, 3, 4, 5, make_rng(123))
        assert np.array_equal(a, b)

    def test_golden_vector(self):
        x = random_feature_map(1, 2, 2, 2, make_rng(42))
        assert np.array_equal(x.ravel(), np.array(GOLDEN_142))

    def test_zero_dimension(self):
        with pytest.raises(ParameterError):
            random_feature_map(1, 0, 2, 2, make_rng(0))


class TestDumpFormat:
    def test_round_trip(self, tmp_path, rng):
        x = random_feature_map(2, 3, 4, 5, rng)
        path = tmp_path / "t.bin"
        save_feature_map(path, x)
        assert np.array_equal(load_feature_map(path), x)

    def test_exact_byte_layout(self, tmp_path):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        path = tmp_path / "t.bin"
        save_feature_map(path, x)
        raw = path.read_bytes()
        assert raw.startswith(b"ISSA-TENSOR v1 1 1 2 2\n")
        assert raw[len(b"ISSA-TENSOR v1 1 1 2 2\n"):] == x.astype("<f8").tobytes()


class TestValidation:
    def test_non_finite_rejected(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(ParameterError):
            check_feature_map(x)

    def test_wrong_rank(self):
        with pytest.raises(ShapeError):
            check_feature_map(np.zeros((2, 2, 2)))

    def test_avg_pool_non_divisor(self, rng):
        with pytest.raises(ParameterError):
            avg_pool(random_feature_map(1, 2, 4, 4, rng), 3)

    def test_avg_pool_means(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = avg_pool(x, 2)
        assert np.array_equal(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])
