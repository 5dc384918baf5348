"""Cost models and brute-force oracles.

Two views of cost exist side by side:

  * ``*_core_flops`` evaluate the closed-form complexity expressions in
    multiply-add units (one multiply-add = 1), the form in which the
    crossover and minimizer claims are usually stated;
  * ``*_flops_model`` are the exact operation counts under the library's
    counter convention (multiply-add = 2 FLOPs, softmax 4 FLOPs per
    affinity element) and match the instrumented counter to the FLOP,
    per batch item.

The oracles materialize the two block-diagonal affinity matrices in
full coordinates and check them against the pipeline, and estimate the
position-to-position Jacobian by central finite differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import attention, hooks, interlaced, tensor
from .errors import ParameterError, ResourceError, ShapeError
from .interlaced import issa_forward

DENSE_MATERIALIZE_CAP = 4096
JACOBIAN_CAP = 64
FD_STEP = 1e-5
# Relative-error denominator floor for gradient comparisons.
FD_DENOM_FLOOR = 1e-8

METHODS = ("sa", "issa", "issa-short-first", "sa-down2")


def _check_dims(**dims):
    for name, v in dims.items():
        if v < 1:
            raise ParameterError(f"{name}={v} must be >= 1")


def sa_core_flops(h, w, c):
    """Dense self-attention core cost in multiply-add units: 2HWC^2 + 1.5(HW)^2 C."""
    _check_dims(h=h, w=w, c=c)
    m = h * w
    return 2 * m * c * c + 3 * m * m * c / 2


def issa_core_flops(h, w, c, p_h, p_w):
    """Interlaced core cost in multiply-add units:
    4HWC^2 + 1.5(HW)^2 C (1/(P_h P_w) + 1/(Q_h Q_w))."""
    _check_dims(h=h, w=w, c=c)
    _check_partition(h, w, p_h, p_w)
    m = h * w
    p = p_h * p_w
    q = m // p
    return 4 * m * c * c + 3 * m * m * c / 2 * (1 / p + 1 / q)


def _check_partition(h, w, p_h, p_w):
    if p_h < 1 or p_w < 1 or h % p_h or w % p_w:
        raise ParameterError(
            f"partition ({p_h}, {p_w}) must divide the {h}x{w} grid"
        )


def sa_flops_model(h, w, c):
    """Exact counted FLOPs of one dense self-attention pass (per batch item)."""
    _check_dims(h=h, w=w, c=c)
    m = h * w
    # 2x the core multiply-add term (counter convention) + 4 FLOPs per
    # affinity element for the softmax.
    return 4 * m * c * c + 3 * m * m * c + 4 * m * m


def issa_flops_model(h, w, c, p_h, p_w):
    """Exact counted FLOPs of one interlaced pass (per batch item)."""
    _check_dims(h=h, w=w, c=c)
    _check_partition(h, w, p_h, p_w)
    m = h * w
    p = p_h * p_w
    q = m // p
    # (HW)^2 / P = P Q^2 and (HW)^2 / Q = Q P^2, so everything is integer.
    affinity = p * q * q + q * p * p
    return 8 * m * c * c + 3 * c * affinity + 4 * affinity


def downsampled_sa_flops_model(h, w, c, factor=2):
    """Exact counted FLOPs of the pooled-key/value baseline (per batch item).

    Queries stay full resolution; keys/values come from the pooled map
    of H*W/factor^2 positions. Pooling itself is uncounted.
    """
    _check_dims(h=h, w=w, c=c)
    if factor < 1 or h % factor or w % factor:
        raise ParameterError(f"factor {factor} must divide H={h} and W={w}")
    m = h * w
    m2 = m // (factor * factor)
    k = c // 2
    proj = 2 * m * k * c + 2 * m2 * k * c + 2 * m2 * c * c
    return proj + 2 * m * k * m2 + 2 * m * m2 * c + 4 * m * m2


def affinity_memory_model(h, w, p_h=None, p_w=None, method="sa", factor=2):
    """Stored affinity-matrix elements for one batch item of one method."""
    _check_dims(h=h, w=w)
    m = h * w
    if method == "sa":
        return m * m
    if method in ("issa", "issa-short-first"):
        _check_partition(h, w, p_h, p_w)
        p = p_h * p_w
        q = m // p
        return p * q * q + q * p * p
    if method == "sa-down2":
        if h % factor or w % factor:
            raise ParameterError(f"factor {factor} must divide H={h} and W={w}")
        return m * (m // (factor * factor))
    raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")


def optimal_partition(h, w):
    """Exhaustive divisor-pair search minimizing the interlaced FLOP model.

    Ties on model cost are broken by the smallest |P_h*P_w - sqrt(HW)|,
    then by the squarest pair (smallest |P_h - P_w|), then the smallest
    P_h. The cost is minimized when the product of partition counts
    equals sqrt(HW), where that is attainable.
    """
    _check_dims(h=h, w=w)
    target = math.sqrt(h * w)
    best = None
    # Channel count scales both terms equally; use a fixed even C.
    c = 2
    for p_h in interlaced._divisors(h):
        for p_w in interlaced._divisors(w):
            key = (issa_flops_model(h, w, c, p_h, p_w), abs(p_h * p_w - target),
                   abs(p_h - p_w), p_h)
            if best is None or key < best[0]:
                best = (key, (p_h, p_w))
    return best[1]


@dataclass
class BlockAffinity:
    """A block-diagonal affinity matrix plus the position permutation
    that carries it to original (row-major) coordinates."""

    permutation: np.ndarray
    blocks: list
    total_dim: int

    def __post_init__(self):
        if sum(b.shape[0] for b in self.blocks) != self.total_dim:
            raise ShapeError("block dims do not sum to total_dim")
        interlaced.check_index_map(self.permutation, self.total_dim)

    def dense_permuted(self):
        """Assemble the explicit block-diagonal matrix in permuted coordinates."""
        a = np.zeros((self.total_dim, self.total_dim))
        off = 0
        for b in self.blocks:
            n = b.shape[0]
            a[off : off + n, off : off + n] = b
            off += n
        return a

    def dense_full(self):
        """The same linear map in original position coordinates:
        out = scatter(blockdiag @ gather(v))."""
        a = np.zeros((self.total_dim, self.total_dim))
        a[np.ix_(self.permutation, self.permutation)] = self.dense_permuted()
        return a


@dataclass
class EffectiveFactorization:
    long: BlockAffinity
    short: BlockAffinity
    effective: np.ndarray  # short.dense_full() @ long.dense_full()


def materialize_effective_matrix(x, params, cap=DENSE_MATERIALIZE_CAP):
    """Run the interlaced pipeline capturing every affinity block and
    assemble the explicit factorization.

    Returns the long and short block-diagonal affinities plus the dense
    effective propagation matrix E = A_full^S @ A_full^L describing the
    linear action on g-value streams (the short-stage affinities are
    those computed from the actual intermediate features). Requires a
    single-item batch and H*W <= cap.
    """
    x = tensor.check_feature_map(x)
    n, c, h, w = x.shape
    if n != 1:
        raise ParameterError("effective-matrix materialization requires batch size 1")
    m = h * w
    if m > cap:
        raise ResourceError(f"H*W={m} exceeds materialization cap {cap}")
    spec = params.spec
    with hooks.capture_affinities() as sink:
        issa_forward(x, params)
    long_blocks = [a for label, a in sink if label == "long"]
    short_blocks = [a for label, a in sink if label == "short"]
    if len(long_blocks) != spec.long_groups or len(short_blocks) != spec.short_groups:
        raise ShapeError("captured block counts do not match the partition spec")
    long = BlockAffinity(spec.long_index_map, long_blocks, m)
    short = BlockAffinity(spec.short_index_map, short_blocks, m)
    return EffectiveFactorization(
        long=long, short=short, effective=short.dense_full() @ long.dense_full()
    )


def apply_factorization(x, params, fact):
    """Reproduce issa_forward (fuse=none) from the materialized matrices:
    E^S g2(E^L g1(x))."""
    n, c, h, w = x.shape
    xm = attention.flatten_item(x, 0)
    ls, ss = params.long_stage, params.short_stage
    g1 = xm @ ls.g_w.T + ls.g_b
    if ls.relu:
        g1 = np.maximum(g1, 0)
    z1 = fact.long.dense_full() @ g1
    g2 = z1 @ ss.g_w.T + ss.g_b
    if ss.relu:
        g2 = np.maximum(g2, 0)
    z2 = fact.short.dense_full() @ g2
    return attention.unflatten_item(z2, c, h, w)[None]


def _stage_fn(params, stage_selector):
    spec = params.spec
    if stage_selector == "long-only":
        return lambda x: interlaced.long_range_pass(x, params.long_stage, spec)
    if stage_selector == "short-only":
        return lambda x: interlaced.short_range_pass(x, params.short_stage, spec)
    if stage_selector == "both":
        unfused = IssaNoFuse(params)
        return unfused
    raise ParameterError(f"unknown stage selector {stage_selector!r}")


class IssaNoFuse:
    """Callable running the full interlaced module with fusion disabled."""

    def __init__(self, params):
        self.params = interlaced.IssaParams(
            long_stage=params.long_stage,
            short_stage=params.short_stage,
            spec=params.spec,
            fuse="none",
        )

    def __call__(self, x):
        return issa_forward(x, self.params)


def connectivity_jacobian(x, params, stage_selector="both", step=FD_STEP, cap=JACOBIAN_CAP):
    """(H*W) x (H*W) matrix of channel-summed position sensitivities.

    Entry (i, j) sums |d out[:, i] / d x[:, j]| over all channel pairs,
    estimated by central finite differences. Quadratic in H*W, hence
    the size cap.
    """
    x = tensor.check_feature_map(x)
    n, c, h, w = x.shape
    m = h * w
    if m > cap:
        raise ResourceError(f"H*W={m} exceeds Jacobian cap {cap}")
    fn = _stage_fn(params, stage_selector)
    jac = np.zeros((m, m))
    for j in range(m):
        hj, wj = divmod(j, w)
        for ci in range(c):
            bumped = x.copy()
            bumped[:, ci, hj, wj] += step
            plus = fn(bumped)
            bumped[:, ci, hj, wj] -= 2 * step
            minus = fn(bumped)
            deriv = (plus - minus) / (2 * step)  # (N, C, H, W)
            jac[:, j] += np.abs(deriv).sum(axis=(0, 1)).reshape(m)
    if not np.all(np.isfinite(jac)):
        raise ParameterError("non-finite sensitivity encountered")
    return jac
