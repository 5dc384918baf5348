"""Interlaced sparse self-attention.

The dense affinity matrix over H*W positions is replaced by two
block-diagonal ones applied in sequence. A partition (P_h, P_w) of the
spatial grid defines two permutations of the flattened positions:

  * the long map groups positions sharing the same (h mod P_h, w mod P_w)
    offset -- members are spaced P_h apart vertically and P_w apart
    horizontally, so each of the P_h*P_w groups spans the whole map;
  * the short map groups contiguous P_h x P_w neighbourhoods -- each of
    the Q_h*Q_w groups is spatially local (Q_h = H/P_h, Q_w = W/P_w).

Running dense attention independently inside the long groups and then
inside the short groups lets every output position receive information
from every input position, at a fraction of the dense cost.
"""

from dataclasses import dataclass

import numpy as np

from . import attention, faults, tensor
from .attention import AttentionGrad, AttentionParams, attend_matrix, attend_matrix_backward
from .errors import IntegrityError, ParameterError, ShapeError

SPEC_MAGIC = "ISSA-SPEC v1"


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def _divisor_hint(extent, wanted):
    near = min(_divisors(extent), key=lambda d: (abs(d - wanted), d))
    return f"nearest valid partition count is {near}"


@dataclass(frozen=True)
class PartitionSpec:
    """Interlacing grid for an H x W map: partition counts, group extents
    and the two position permutations."""

    h: int
    w: int
    p_h: int
    p_w: int
    q_h: int
    q_w: int
    long_index_map: np.ndarray
    short_index_map: np.ndarray

    @property
    def long_groups(self):
        """Number of long-range groups (P = P_h * P_w)."""
        return self.p_h * self.p_w

    @property
    def long_group_size(self):
        """Positions per long-range group (Q = Q_h * Q_w)."""
        return self.q_h * self.q_w

    @property
    def short_groups(self):
        return self.q_h * self.q_w

    @property
    def short_group_size(self):
        return self.p_h * self.p_w

    def serialize(self):
        return f"{SPEC_MAGIC} {self.h} {self.w} {self.p_h} {self.p_w}"


def parse_partition_spec(line):
    parts = line.strip().split()
    if parts[:2] != SPEC_MAGIC.split():
        raise ParameterError(f"bad partition spec line: {line!r}")
    h, w, p_h, p_w = (int(v) for v in parts[2:6])
    return build_partition(h, w, p_h, p_w)


def build_partition(h, w, p_h, p_w):
    """Build the partition spec and both permutations for an H x W grid.

    Position (h, w) decomposes as h = q_h*P_h + p_h, w = q_w*P_w + p_w.
    Non-divisor partition counts are a hard error (no implicit padding);
    the message names the offending axis and suggests a valid count.
    """
    for name, extent, count in (("height", h, p_h), ("width", w, p_w)):
        if extent < 1 or count < 1:
            raise ParameterError(f"{name} extent/partition must be >= 1")
        if extent % count:
            raise ParameterError(
                f"partition count {count} does not divide {name} {extent}; "
                + _divisor_hint(extent, count)
            )
    q_h, q_w = h // p_h, w // p_w

    # Flat index of (qh*P_h + ph, qw*P_w + pw) laid out over the index
    # orders below; each map lists original positions group by group.
    ph, pw, qh, qw = np.meshgrid(
        np.arange(p_h), np.arange(p_w), np.arange(q_h), np.arange(q_w), indexing="ij"
    )
    flat = (qh * p_h + ph) * w + (qw * p_w + pw)
    long_map = flat.reshape(-1)  # (ph, pw, qh, qw)
    short_map = flat.transpose(2, 3, 0, 1).reshape(-1)  # (qh, qw, ph, pw)
    long_map.setflags(write=False)
    short_map.setflags(write=False)
    return PartitionSpec(h, w, p_h, p_w, q_h, q_w, long_map, short_map)


def check_index_map(index_map, size):
    index_map = np.asarray(index_map)
    if index_map.shape != (size,):
        raise IntegrityError(f"index map length {index_map.shape} != {size}")
    if not np.array_equal(np.sort(index_map), np.arange(size)):
        raise IntegrityError("index map is not a bijection over positions")
    return index_map


def gather_groups(flat, index_map, group_size):
    """Split an (M, C) position matrix into M/group_size permuted groups.

    Row k of group j is the channel vector at original position
    ``index_map[j*group_size + k]``.
    """
    m = flat.shape[0]
    index_map = check_index_map(index_map, m)
    if group_size < 1 or m % group_size:
        raise ParameterError(f"group size {group_size} must divide {m} positions")
    permuted = flat[index_map]
    return [permuted[j : j + group_size] for j in range(0, m, group_size)]


def scatter_groups(groups, index_map, m):
    """Inverse of gather_groups: restore original position order."""
    index_map = check_index_map(index_map, m)
    permuted = np.concatenate(groups, axis=0)
    if permuted.shape[0] != m:
        raise ShapeError(f"groups hold {permuted.shape[0]} rows, expected {m}")
    out = np.empty_like(permuted)
    out[index_map] = permuted
    return out


@dataclass
class IssaParams:
    """Two independent attention stages plus the interlacing grid."""

    long_stage: AttentionParams
    short_stage: AttentionParams
    spec: PartitionSpec
    fuse: str = "residual"

    def __post_init__(self):
        if self.long_stage.channels != self.short_stage.channels:
            raise ShapeError("both stages must share the channel count")
        if self.fuse not in attention.FUSE_MODES:
            raise ParameterError(f"fuse must be one of {attention.FUSE_MODES}")

    @property
    def channels(self):
        return self.long_stage.channels


def init_issa_params(c, spec, rng, fuse="residual", relu=False, random_bias=False):
    return IssaParams(
        long_stage=attention.init_attention_params(c, rng, relu=relu, random_bias=random_bias),
        short_stage=attention.init_attention_params(c, rng, relu=relu, random_bias=random_bias),
        spec=spec,
        fuse=fuse,
    )


def _check_spec(x, spec):
    n, c, h, w = x.shape
    if (h, w) != (spec.h, spec.w):
        raise ShapeError(f"feature map is {h}x{w} but partition spec is for {spec.h}x{spec.w}")


def _group_pass(x, params, index_map, group_size, label):
    """Gather by ``index_map``, attend per group (fuse=none), scatter back."""
    x = tensor.check_feature_map(x)
    if x.shape[1] != params.channels:
        raise ShapeError(f"feature map has {x.shape[1]} channels, params expect {params.channels}")
    n, c, h, w = x.shape
    m = h * w
    out = np.empty_like(x)
    for i in range(n):
        groups = gather_groups(attention.flatten_item(x, i), index_map, group_size)
        z_groups = [attend_matrix(g, params, label=label) for g in groups]
        out[i] = attention.unflatten_item(scatter_groups(z_groups, index_map, m), c, h, w)
    return out


def _group_pass_raw(x, params, index_map, group_size):
    n, c, h, w = x.shape
    m = h * w
    out = np.empty_like(x)
    for i in range(n):
        groups = gather_groups(attention.flatten_item(x, i), index_map, group_size)
        z_groups = [attention.attend_matrix_raw(g, params) for g in groups]
        out[i] = attention.unflatten_item(scatter_groups(z_groups, index_map, m), c, h, w)
    return out


def _group_pass_backward(x, params, index_map, group_size, upstream):
    """Per-group attention backward; returns stage grads with d_input."""
    n, c, h, w = x.shape
    m = h * w
    total = attention.zero_grad(params, with_input_like=x)
    for i in range(n):
        x_groups = gather_groups(attention.flatten_item(x, i), index_map, group_size)
        u_groups = gather_groups(attention.flatten_item(upstream, i), index_map, group_size)
        d_groups = []
        for xg, ug in zip(x_groups, u_groups):
            gi = attend_matrix_backward(xg, params, ug)
            d_groups.append(gi.d_input)
            total.add_params_(gi)
        total.d_input[i] = attention.unflatten_item(
            scatter_groups(d_groups, index_map, m), c, h, w
        )
    return total


def long_range_pass(x, params, spec):
    """Attention within each spatially spread (interlaced) group."""
    _check_spec(x, spec)
    return _group_pass(x, params, spec.long_index_map, spec.long_group_size, "long")


def short_range_pass(x, params, spec):
    """Attention within each contiguous P_h x P_w neighbourhood."""
    _check_spec(x, spec)
    return _group_pass(x, params, spec.short_index_map, spec.short_group_size, "short")


def issa_forward(x, params):
    """Long-range then short-range attention, optionally residual-fused."""
    x = tensor.check_feature_map(x)
    _check_spec(x, params.spec)
    z = long_range_pass(x, params.long_stage, params.spec)
    if not faults.is_active("skip-short-pass"):
        z = short_range_pass(z, params.short_stage, params.spec)
    if params.fuse == "residual":
        z = z + x
    return z


def issa_forward_short_first(x, params):
    """Stage-order variant: short-range then long-range attention."""
    x = tensor.check_feature_map(x)
    _check_spec(x, params.spec)
    z = short_range_pass(x, params.short_stage, params.spec)
    z = long_range_pass(z, params.long_stage, params.spec)
    if params.fuse == "residual":
        z = z + x
    return z


@dataclass
class IssaGrad:
    """Gradients of both stages plus the module input."""

    d_input: np.ndarray
    long_stage: AttentionGrad
    short_stage: AttentionGrad


def issa_backward(x, params, upstream):
    """Exact gradients of <upstream, issa_forward(x)> through both stages.

    The permutations have trivial Jacobians; the chain rule runs through
    the short stage into the long stage, plus the residual path if fused.
    """
    x = tensor.check_feature_map(x)
    upstream = tensor.check_feature_map(upstream, "upstream")
    if upstream.shape != x.shape:
        raise ShapeError(f"upstream shape {upstream.shape} must equal input shape {x.shape}")
    spec = params.spec
    _check_spec(x, spec)
    z1 = _group_pass_raw(x, params.long_stage, spec.long_index_map, spec.long_group_size)
    short_grad = _group_pass_backward(
        z1, params.short_stage, spec.short_index_map, spec.short_group_size, upstream
    )
    long_grad = _group_pass_backward(
        x, params.long_stage, spec.long_index_map, spec.long_group_size, short_grad.d_input
    )
    d_input = long_grad.d_input.copy()
    if params.fuse == "residual":
        d_input += upstream
    return IssaGrad(d_input=d_input, long_stage=long_grad, short_stage=short_grad)
