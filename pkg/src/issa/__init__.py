"""Interlaced sparse self-attention: factorizing the dense affinity
matrix into two permuted block-diagonal ones, with analytic gradients,
closed-form cost models, brute-force oracles and a benchmark CLI."""

from .attention import (
    AttentionGrad,
    AttentionParams,
    dense_sa_backward,
    dense_sa_forward,
    downsampled_sa_forward,
    init_attention_params,
)
from .analysis import (
    BlockAffinity,
    affinity_memory_model,
    connectivity_jacobian,
    downsampled_sa_flops_model,
    issa_core_flops,
    issa_flops_model,
    materialize_effective_matrix,
    optimal_partition,
    sa_core_flops,
    sa_flops_model,
)
from .errors import IntegrityError, ParameterError, ResourceError, ShapeError
from .estimators import DenseSelfAttention, DownsampledSelfAttention, InterlacedSelfAttention
from .interlaced import (
    IssaGrad,
    IssaParams,
    PartitionSpec,
    build_partition,
    gather_groups,
    init_issa_params,
    issa_backward,
    issa_forward,
    issa_forward_short_first,
    long_range_pass,
    scatter_groups,
    short_range_pass,
)
from .tensor import (
    load_feature_map,
    make_rng,
    matmul,
    project,
    random_feature_map,
    row_softmax,
    save_feature_map,
)

__version__ = "0.1.0"
