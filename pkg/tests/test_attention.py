import numpy as np
import pytest

import issa.hooks as hooks
from conftest import naive_attention
from issa import make_rng, project, random_feature_map
from issa.attention import (
    AttentionParams,
    dense_sa_backward,
    dense_sa_forward,
    downsampled_sa_forward,
    flatten_item,
    init_attention_params,
)
from issa.errors import ParameterError, ShapeError
from issa.gradcheck import dense_sa_grad_error
from issa.tensor import avg_pool


def _params(c, seed, **kw):
    return init_attention_params(c, make_rng(seed), random_bias=True, **kw)


class TestDenseForward:
    def test_single_position_is_g(self):
        rng = make_rng(11)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 1, 1, rng)
        out = dense_sa_forward(x, p, fuse="none")
        assert np.allclose(out, project(x, p.g_w, p.g_b), atol=1e-15)

    def test_constant_map_uniform_rows(self):
        p = _params(4, 2)
        x = np.tile(np.array([0.3, -0.2, 0.9, 0.1])[None, :, None, None], (1, 1, 3, 3))
        out = dense_sa_forward(x, p, fuse="none")
        want = p.g_w @ x[0, :, 0, 0] + p.g_b
        for hh in range(3):
            for ww in range(3):
                assert np.allclose(out[0, :, hh, ww], want, atol=1e-12)

    def test_brute_force_pairwise_oracle(self):
        rng = make_rng(11)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 3, 3, rng)
        out = dense_sa_forward(x, p, fuse="none")
        want = naive_attention(flatten_item(x, 0), p)
        assert np.max(np.abs(flatten_item(out, 0) - want)) < 1e-10

    def test_residual_adds_input(self):
        rng = make_rng(4)
        p = init_attention_params(4, rng)
        x = random_feature_map(2, 4, 2, 3, rng)
        a = dense_sa_forward(x, p, fuse="none")
        b = dense_sa_forward(x, p, fuse="residual")
        assert np.array_equal(b, a + x)

    def test_odd_channels_rejected(self):
        with pytest.raises(ParameterError):
            init_attention_params(3, make_rng(0))

    def test_channel_mismatch(self):
        rng = make_rng(1)
        p = init_attention_params(4, rng)
        with pytest.raises(ShapeError):
            dense_sa_forward(random_feature_map(1, 6, 2, 2, rng), p)

    def test_affinity_rows_sum_to_one(self):
        rng = make_rng(9)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(2, 4, 3, 3, rng)
        with hooks.capture_affinities() as sink:
            dense_sa_forward(x, p)
        assert len(sink) == 2
        for label, a in sink:
            assert label == "dense"
            assert np.max(np.abs(a.sum(axis=1) - 1.0)) < 1e-12

    def test_permutation_equivariance(self):
        rng = make_rng(17)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 3, 4, rng)
        perm = rng.permutation(12)
        xm = flatten_item(x, 0)
        x_perm = xm[perm].T.reshape(1, 4, 3, 4)
        out = flatten_item(dense_sa_forward(x, p, fuse="none"), 0)
        out_perm = flatten_item(dense_sa_forward(x_perm, p, fuse="none"), 0)
        restored = np.empty_like(out_perm)
        restored[perm] = out_perm
        assert np.max(np.abs(restored - out)) < 1e-10


class TestDenseBackward:
    def test_zero_upstream(self):
        rng = make_rng(3)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 2, 2, rng)
        g = dense_sa_backward(x, p, np.zeros_like(x))
        for arr in (g.d_input, g.d_theta_w, g.d_theta_b, g.d_phi_w, g.d_phi_b, g.d_g_w, g.d_g_b):
            assert np.all(arr == 0.0)

    def test_uniform_affinity_closed_form(self):
        # theta = phi = 0 makes every affinity row uniform: the output is
        # the mean of g over positions plus the residual, so
        # d_input = upstream + (1/M) * ones @ upstream @ g_w.
        rng = make_rng(5)
        c, h, w = 4, 2, 3
        m = h * w
        base = init_attention_params(c, rng, random_bias=True)
        p = AttentionParams(
            theta_w=np.zeros_like(base.theta_w), theta_b=np.zeros_like(base.theta_b),
            phi_w=np.zeros_like(base.phi_w), phi_b=np.zeros_like(base.phi_b),
            g_w=base.g_w, g_b=base.g_b, scale_d=base.scale_d,
        )
        x = random_feature_map(1, c, h, w, rng)
        u = random_feature_map(1, c, h, w, rng)
        out = dense_sa_forward(x, p, fuse="residual")
        gvals = flatten_item(x, 0) @ p.g_w.T + p.g_b
        want_out = gvals.mean(axis=0)[None, :] + flatten_item(x, 0)
        assert np.max(np.abs(flatten_item(out, 0) - want_out)) < 1e-12
        g = dense_sa_backward(x, p, u, fuse="residual")
        um = flatten_item(u, 0)
        want_d = um + np.tile(um.mean(axis=0) @ p.g_w, (m, 1))
        assert np.max(np.abs(flatten_item(g.d_input, 0) - want_d)) < 1e-12

    def test_finite_differences_seed5(self):
        rng = make_rng(5)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 3, 3, rng)
        u = random_feature_map(1, 4, 3, 3, rng)
        assert dense_sa_grad_error(x, p, u, fuse="none") < 1e-5

    def test_finite_differences_relu_and_residual(self):
        rng = make_rng(6)
        p = init_attention_params(4, rng, relu=True, random_bias=True)
        x = random_feature_map(1, 4, 2, 2, rng)
        u = random_feature_map(1, 4, 2, 2, rng)
        assert dense_sa_grad_error(x, p, u, fuse="residual") < 1e-5

    def test_shape_mismatch(self):
        rng = make_rng(7)
        p = init_attention_params(4, rng)
        x = random_feature_map(1, 4, 2, 2, rng)
        with pytest.raises(ShapeError):
            dense_sa_backward(x, p, np.zeros((1, 4, 2, 3)))


class TestDownsampled:
    def test_factor_one_bit_identical(self):
        rng = make_rng(9)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 4, 4, rng)
        assert np.array_equal(
            downsampled_sa_forward(x, p, 1, fuse="none"),
            dense_sa_forward(x, p, fuse="none"),
        )

    def test_constant_input_pooling_invariant(self):
        p = _params(4, 10)
        x = np.tile(np.array([0.4, -0.1, 0.2, 0.7])[None, :, None, None], (1, 1, 4, 4))
        a = downsampled_sa_forward(x, p, 1, fuse="none")
        b = downsampled_sa_forward(x, p, 2, fuse="none")
        assert np.allclose(a, b, atol=1e-12)

    def test_pooled_pair_oracle(self):
        rng = make_rng(9)
        p = init_attention_params(4, rng, random_bias=True)
        x = random_feature_map(1, 4, 4, 4, rng)
        out = downsampled_sa_forward(x, p, 2, fuse="none")
        pooled = avg_pool(x, 2)
        pm = flatten_item(pooled, 0)
        xm = flatten_item(x, 0)
        import math
        s = math.sqrt(p.scale_d)
        want = np.zeros_like(xm)
        for i in range(16):
            ti = p.theta_w @ xm[i] + p.theta_b
            logits = np.array([ti @ (p.phi_w @ pm[j] + p.phi_b) for j in range(4)])
            e = np.exp(logits / s - np.max(logits / s))
            a = e / e.sum()
            for j in range(4):
                want[i] += a[j] * (p.g_w @ pm[j] + p.g_b)
        assert np.max(np.abs(flatten_item(out, 0) - want)) < 1e-10

    def test_non_divisor_factor(self):
        rng = make_rng(1)
        p = init_attention_params(4, rng)
        with pytest.raises(ParameterError):
            downsampled_sa_forward(random_feature_map(1, 4, 4, 4, rng), p, 3)
