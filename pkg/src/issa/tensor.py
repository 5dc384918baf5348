"""Dense float64 tensor substrate.

Feature maps are numpy arrays of shape (N, C, H, W) in float64;
matrices are 2-d float64 arrays. All operations are pure functions and
register their cost with the thread-local FLOP counter (see
:mod:`issa.flops` for the convention).

Randomness uses numpy's Philox bit generator, a counter-based generator
with a documented, platform-independent algorithm (Philox 4x64 with 10
rounds), so a seed pins the exact sample stream everywhere.
"""

import struct

import numpy as np

from . import faults, flops
from .errors import ParameterError, ShapeError

TENSOR_MAGIC = "ISSA-TENSOR v1"


def make_rng(seed):
    """Seeded counter-based generator (Philox 4x64-10)."""
    return np.random.Generator(np.random.Philox(seed))


def check_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError(f"{name} contains non-finite values")
    return m


def check_feature_map(x, name="feature map"):
    """Validate an (N, C, H, W) float64 array and return a contiguous copy-free view."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must have shape (N, C, H, W), got {x.shape}")
    if min(x.shape) < 1:
        raise ParameterError(f"{name} has a zero dimension: {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError(f"{name} contains non-finite values")
    return np.ascontiguousarray(x)


def matmul(a, b):
    """Matrix product, registering 2*m*k*n FLOPs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    flops.register(2 * a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def row_softmax(m, scale, overwrite=False):
    """Row-wise softmax of m/scale with max-subtraction; registers 4 FLOPs/element.

    ``overwrite=True`` lets the caller donate ``m`` as scratch space,
    halving peak memory for large affinity matrices.
    """
    if scale <= 0:
        raise ParameterError(f"softmax scale must be positive, got {scale}")
    m = np.asarray(m, dtype=np.float64)
    if overwrite:
        z = m
        z /= float(scale)
    else:
        z = m / float(scale)
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    if not faults.is_active("no-softmax-norm"):
        z /= z.sum(axis=-1, keepdims=True)
    flops.register(4 * m.size)
    return z


def project(x, weights, bias=None, relu=False):
    """Position-wise linear map of an (N, C, H, W) map to weights.shape[0] channels."""
    x = check_feature_map(x)
    weights = check_matrix(weights, "weights")
    n, c, h, w = x.shape
    if weights.shape[1] != c:
        raise ShapeError(
            f"projection expects {weights.shape[1]} input channels, feature map has {c}"
        )
    out_c = weights.shape[0]
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (out_c,):
            raise ShapeError(f"bias shape {bias.shape} does not match {out_c} output channels")
    flops.register(2 * n * h * w * out_c * c)
    y = np.einsum("oc,nchw->nohw", weights, x, optimize=True)
    if bias is not None:
        y += bias[None, :, None, None]
    if relu:
        np.maximum(y, 0.0, out=y)
    return y


def avg_pool(x, factor):
    """Average-pool both spatial axes by ``factor``; factor must divide H and W."""
    x = check_feature_map(x)
    n, c, h, w = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ParameterError(f"pool factor {factor} must divide H={h} and W={w}")
    if factor == 1:
        return x
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def random_feature_map(n, c, h, w, rng):
    """I.i.d. uniform [-1, 1) feature map; consumes exactly n*c*h*w samples."""
    for name, dim in zip("NCHW", (n, c, h, w)):
        if dim < 1:
            raise ParameterError(f"dimension {name}={dim} must be >= 1")
    return rng.uniform(-1.0, 1.0, size=(n, c, h, w))


def save_feature_map(path, x):
    """Write the cross-implementation dump format.

    ASCII header line ``ISSA-TENSOR v1 <N> <C> <H> <W>`` followed by
    N*C*H*W little-endian IEEE-754 float64 values in (n, c, h, w)
    row-major order.
    """
    x = check_feature_map(x)
    n, c, h, w = x.shape
    header = f"{TENSOR_MAGIC} {n} {c} {h} {w}\n".encode("ascii")
    payload = x.astype("<f8").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_feature_map(path):
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if header[:2] != TENSOR_MAGIC.split():
            raise ParameterError(f"bad tensor header: {header}")
        n, c, h, w = (int(v) for v in header[2:6])
        payload = f.read(n * c * h * w * 8)
    count = n * c * h * w
    if len(payload) != 8 * count:
        raise ParameterError("truncated tensor payload")
    values = np.array(struct.unpack(f"<{count}d", payload), dtype=np.float64)
    return check_feature_map(values.reshape(n, c, h, w))
