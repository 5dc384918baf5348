"""Scikit-learn style transformer wrappers.

The attention operators are transform-shaped (feature map in, feature
map out), so they compose with sklearn pipelines: ``fit`` validates the
input layout and draws seeded projection weights for the observed
channel count, ``transform`` applies the forward pass. Inputs are dense
(N, C, H, W) float arrays.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import analysis, attention, interlaced, tensor
from .errors import ParameterError, ShapeError


class _AttentionTransformerBase(TransformerMixin, BaseEstimator):
    def _validate(self, X, reset):
        X = tensor.check_feature_map(X, "X")
        c = X.shape[1]
        if c % 2:
            raise ParameterError(f"channel count {c} must be even")
        if reset:
            self.n_channels_ = c
        elif c != self.n_channels_:
            raise ShapeError(f"X has {c} channels; fitted for {self.n_channels_}")
        return X

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)


class DenseSelfAttention(_AttentionTransformerBase):
    """Dense self-attention over all spatial positions.

    Parameters
    ----------
    fuse : {"residual", "none"}
        Whether the input is added back to the attention output.
    seed : int
        Seed for the projection-weight initialization.
    relu : bool
        Apply an element-wise ReLU after each projection.
    """

    def __init__(self, fuse="residual", seed=0, relu=False):
        self.fuse = fuse
        self.seed = seed
        self.relu = relu

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        self.params_ = attention.init_attention_params(
            self.n_channels_, tensor.make_rng(self.seed), relu=self.relu
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = self._validate(X, reset=False)
        return attention.dense_sa_forward(X, self.params_, fuse=self.fuse)


class DownsampledSelfAttention(_AttentionTransformerBase):
    """Self-attention with keys/values average-pooled by ``factor``."""

    def __init__(self, factor=2, fuse="residual", seed=0, relu=False):
        self.factor = factor
        self.fuse = fuse
        self.seed = seed
        self.relu = relu

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        self.params_ = attention.init_attention_params(
            self.n_channels_, tensor.make_rng(self.seed), relu=self.relu
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = self._validate(X, reset=False)
        return attention.downsampled_sa_forward(X, self.params_, self.factor, fuse=self.fuse)


class InterlacedSelfAttention(_AttentionTransformerBase):
    """Interlaced sparse self-attention (long-range then short-range).

    ``p_h``/``p_w`` give the partition counts; "auto" picks the
    FLOP-optimal divisor pair for each input's spatial size. The two
    stages use independent seeded parameters.
    """

    def __init__(self, p_h="auto", p_w="auto", fuse="residual", seed=0,
                 relu=False, order="long-short"):
        self.p_h = p_h
        self.p_w = p_w
        self.fuse = fuse
        self.seed = seed
        self.relu = relu
        self.order = order

    def fit(self, X, y=None):
        if self.order not in ("long-short", "short-long"):
            raise ParameterError(f"order must be long-short or short-long, got {self.order!r}")
        if ("auto" in (self.p_h, self.p_w)) and self.p_h != self.p_w:
            raise ParameterError("p_h and p_w must both be 'auto' or both explicit")
        X = self._validate(X, reset=True)
        rng = tensor.make_rng(self.seed)
        self.long_params_ = attention.init_attention_params(
            self.n_channels_, rng, relu=self.relu
        )
        self.short_params_ = attention.init_attention_params(
            self.n_channels_, rng, relu=self.relu
        )
        return self

    def _spec_for(self, h, w):
        if self.p_h == "auto":
            p_h, p_w = analysis.optimal_partition(h, w)
        else:
            p_h, p_w = self.p_h, self.p_w
        return interlaced.build_partition(h, w, p_h, p_w)

    def transform(self, X):
        check_is_fitted(self, "long_params_")
        X = self._validate(X, reset=False)
        params = interlaced.IssaParams(
            long_stage=self.long_params_,
            short_stage=self.short_params_,
            spec=self._spec_for(X.shape[2], X.shape[3]),
            fuse=self.fuse,
        )
        if self.order == "short-long":
            return interlaced.issa_forward_short_first(X, params)
        return interlaced.issa_forward(X, params)
