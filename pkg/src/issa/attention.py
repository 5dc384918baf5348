"""Dense self-attention: forward pass, exact backward pass, and the
average-pool downsampled baseline.

Positions are flattened row-major (h*W + w) into the rows of an
(M, C) matrix per batch item, M = H*W. The affinity matrix is
``row_softmax(theta(x) @ phi(x).T, sqrt(d))`` and the output is the
affinity-weighted sum of the g-transformed values, optionally fused
with the input through a residual add.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import hooks, tensor
from .errors import ParameterError, ShapeError

FUSE_MODES = ("none", "residual")


@dataclass
class AttentionParams:
    """Projection weights and softmax scale for one attention stage.

    theta and phi project C channels down to C/2; g keeps C channels.
    ``scale_d`` defaults to C/2. ``relu`` applies an element-wise ReLU
    after each projection (off by default; all verification runs keep
    it off).
    """

    theta_w: np.ndarray
    theta_b: np.ndarray
    phi_w: np.ndarray
    phi_b: np.ndarray
    g_w: np.ndarray
    g_b: np.ndarray
    scale_d: float
    relu: bool = False

    def __post_init__(self):
        c = self.channels
        if c % 2:
            raise ParameterError(f"channel count {c} must be even")
        k = c // 2
        if self.theta_w.shape != (k, c) or self.phi_w.shape != (k, c):
            raise ShapeError(
                f"theta/phi weights must be ({k}, {c}); got "
                f"{self.theta_w.shape} and {self.phi_w.shape}"
            )
        if self.g_w.shape != (c, c):
            raise ShapeError(f"g weights must be square ({c}, {c}), got {self.g_w.shape}")
        if self.theta_b.shape != (k,) or self.phi_b.shape != (k,) or self.g_b.shape != (c,):
            raise ShapeError("bias vector lengths must match projection output channels")
        if self.scale_d <= 0:
            raise ParameterError(f"scale_d must be positive, got {self.scale_d}")

    @property
    def channels(self):
        return self.g_w.shape[0]


@dataclass
class AttentionGrad:
    """Gradients matching the shapes of AttentionParams plus the input."""

    d_input: np.ndarray | None
    d_theta_w: np.ndarray
    d_theta_b: np.ndarray
    d_phi_w: np.ndarray
    d_phi_b: np.ndarray
    d_g_w: np.ndarray
    d_g_b: np.ndarray

    def add_params_(self, other):
        """Accumulate another grad's parameter components in place."""
        self.d_theta_w += other.d_theta_w
        self.d_theta_b += other.d_theta_b
        self.d_phi_w += other.d_phi_w
        self.d_phi_b += other.d_phi_b
        self.d_g_w += other.d_g_w
        self.d_g_b += other.d_g_b


def zero_grad(params, with_input_like=None):
    return AttentionGrad(
        d_input=None if with_input_like is None else np.zeros_like(with_input_like),
        d_theta_w=np.zeros_like(params.theta_w),
        d_theta_b=np.zeros_like(params.theta_b),
        d_phi_w=np.zeros_like(params.phi_w),
        d_phi_b=np.zeros_like(params.phi_b),
        d_g_w=np.zeros_like(params.g_w),
        d_g_b=np.zeros_like(params.g_b),
    )


def init_attention_params(c, rng, relu=False, scale_d=None, random_bias=False):
    """Random uniform weights scaled by 1/sqrt(C); biases zero by default."""
    if c % 2:
        raise ParameterError(f"channel count {c} must be even")
    k = c // 2
    s = 1.0 / math.sqrt(c)

    def w(rows, cols):
        return rng.uniform(-1.0, 1.0, size=(rows, cols)) * s

    def b(n):
        return rng.uniform(-1.0, 1.0, size=n) * s if random_bias else np.zeros(n)

    return AttentionParams(
        theta_w=w(k, c), theta_b=b(k),
        phi_w=w(k, c), phi_b=b(k),
        g_w=w(c, c), g_b=b(c),
        scale_d=float(c / 2 if scale_d is None else scale_d),
        relu=relu,
    )


def flatten_item(x, n):
    """Batch item n of an (N, C, H, W) map as an (H*W, C) matrix."""
    _, c, h, w = x.shape
    return x[n].reshape(c, h * w).T.copy()


def unflatten_item(m, c, h, w):
    return m.T.reshape(c, h, w)


def _check_fuse(fuse):
    if fuse not in FUSE_MODES:
        raise ParameterError(f"fuse must be one of {FUSE_MODES}, got {fuse!r}")


def _affine(xm, w, b, relu):
    y = tensor.matmul(xm, w.T) + b
    if relu:
        np.maximum(y, 0.0, out=y)
    return y


def attend_matrix(xm, params, label="dense"):
    """One dense attention step on an (M, C) position matrix (no fusion).

    Registers FLOPs and emits the affinity matrix to any active capture
    sink under ``label``.
    """
    t = _affine(xm, params.theta_w, params.theta_b, params.relu)
    p = _affine(xm, params.phi_w, params.phi_b, params.relu)
    g = _affine(xm, params.g_w, params.g_b, params.relu)
    # The logits matrix is private here; let softmax reuse its storage.
    a = tensor.row_softmax(tensor.matmul(t, p.T), math.sqrt(params.scale_d), overwrite=True)
    hooks.emit(label, a)
    return tensor.matmul(a, g)


def _raw_softmax(logits, scale):
    z = logits / scale
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def attend_matrix_raw(xm, params):
    """Uncounted, un-hooked forward used for recomputation in backward passes."""
    pre_t = xm @ params.theta_w.T + params.theta_b
    pre_p = xm @ params.phi_w.T + params.phi_b
    pre_g = xm @ params.g_w.T + params.g_b
    if params.relu:
        t, p, g = np.maximum(pre_t, 0), np.maximum(pre_p, 0), np.maximum(pre_g, 0)
    else:
        t, p, g = pre_t, pre_p, pre_g
    a = _raw_softmax(t @ p.T, math.sqrt(params.scale_d))
    return a @ g


def attend_matrix_backward(xm, params, upstream):
    """Exact gradients of <upstream, attend_matrix(xm)> for one (M, C) item.

    The softmax Jacobian is applied per row as diag(a) - a a^T. Runs on
    plain numpy: backward work is not FLOP-counted.
    """
    s = math.sqrt(params.scale_d)
    pre_t = xm @ params.theta_w.T + params.theta_b
    pre_p = xm @ params.phi_w.T + params.phi_b
    pre_g = xm @ params.g_w.T + params.g_b
    if params.relu:
        t, p, g = np.maximum(pre_t, 0), np.maximum(pre_p, 0), np.maximum(pre_g, 0)
    else:
        t, p, g = pre_t, pre_p, pre_g
    a = _raw_softmax(t @ p.T, s)

    da = upstream @ g.T
    dg = a.T @ upstream
    wa = da * a
    dlogits = (wa - a * wa.sum(axis=1, keepdims=True)) / s
    dt = dlogits @ p
    dp = dlogits.T @ t
    if params.relu:
        dt = dt * (pre_t > 0)
        dp = dp * (pre_p > 0)
        dg = dg * (pre_g > 0)
    d_input = dt @ params.theta_w + dp @ params.phi_w + dg @ params.g_w
    return AttentionGrad(
        d_input=d_input,
        d_theta_w=dt.T @ xm, d_theta_b=dt.sum(axis=0),
        d_phi_w=dp.T @ xm, d_phi_b=dp.sum(axis=0),
        d_g_w=dg.T @ xm, d_g_b=dg.sum(axis=0),
    )


def dense_sa_forward(x, params, fuse="residual"):
    """Dense self-attention over all H*W positions of each batch item."""
    x = tensor.check_feature_map(x)
    _check_fuse(fuse)
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"feature map has {c} channels, params expect {params.channels}")
    out = np.empty_like(x)
    for i in range(n):
        z = attend_matrix(flatten_item(x, i), params, label="dense")
        out[i] = unflatten_item(z, c, h, w)
    if fuse == "residual":
        out += x
    return out


def dense_sa_backward(x, params, upstream, fuse="residual"):
    """Exact gradients of <upstream, dense_sa_forward(x)>."""
    x = tensor.check_feature_map(x)
    upstream = tensor.check_feature_map(upstream, "upstream")
    _check_fuse(fuse)
    if upstream.shape != x.shape:
        raise ShapeError(f"upstream shape {upstream.shape} must equal input shape {x.shape}")
    n, c, h, w = x.shape
    total = zero_grad(params, with_input_like=x)
    for i in range(n):
        gi = attend_matrix_backward(flatten_item(x, i), params, flatten_item(upstream, i))
        total.d_input[i] = unflatten_item(gi.d_input, c, h, w)
        total.add_params_(gi)
    if fuse == "residual":
        total.d_input += upstream
    return total


def downsampled_sa_forward(x, params, factor, fuse="residual"):
    """Self-attention with keys/values average-pooled by ``factor``.

    Queries stay at full resolution, so the affinity matrix is
    (H*W) x (H*W/factor^2) and the output keeps the input shape.
    """
    x = tensor.check_feature_map(x)
    _check_fuse(fuse)
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"feature map has {c} channels, params expect {params.channels}")
    pooled = tensor.avg_pool(x, factor)
    out = np.empty_like(x)
    for i in range(n):
        xm = flatten_item(x, i)
        pm = flatten_item(pooled, i)
        t = _affine(xm, params.theta_w, params.theta_b, params.relu)
        p = _affine(pm, params.phi_w, params.phi_b, params.relu)
        g = _affine(pm, params.g_w, params.g_b, params.relu)
        a = tensor.row_softmax(tensor.matmul(t, p.T), math.sqrt(params.scale_d))
        hooks.emit("down", a)
        out[i] = unflatten_item(tensor.matmul(a, g), c, h, w)
    if fuse == "residual":
        out += x
    return out
