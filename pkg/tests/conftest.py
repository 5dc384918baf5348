"""Shared naive oracles, deliberately independent of the library's fast paths.

Everything here is written with explicit loops over position pairs so a
bug in the vectorized implementation cannot hide in its own oracle.
"""

import math

import numpy as np
import pytest

from issa import make_rng
from issa.attention import flatten_item


@pytest.fixture
def rng():
    return make_rng(0)


def naive_softmax_row(row, scale):
    z = [v / scale for v in row]
    mx = max(z)
    e = [math.exp(v - mx) for v in z]
    s = sum(e)
    return np.array([v / s for v in e])


def naive_attention(xm, params):
    """Loop over all position pairs computing the attention output."""
    m, c = xm.shape
    out = np.zeros((m, c))
    theta = [params.theta_w @ xm[i] + params.theta_b for i in range(m)]
    phi = [params.phi_w @ xm[i] + params.phi_b for i in range(m)]
    g = [params.g_w @ xm[i] + params.g_b for i in range(m)]
    if params.relu:
        theta = [np.maximum(v, 0) for v in theta]
        phi = [np.maximum(v, 0) for v in phi]
        g = [np.maximum(v, 0) for v in g]
    s = math.sqrt(params.scale_d)
    for i in range(m):
        logits = [float(theta[i] @ phi[j]) for j in range(m)]
        a = naive_softmax_row(logits, s)
        for j in range(m):
            out[i] += a[j] * g[j]
    return out


def naive_affinity(xm, params):
    """Explicit row-stochastic affinity matrix for one group."""
    m = xm.shape[0]
    theta = [params.theta_w @ xm[i] + params.theta_b for i in range(m)]
    phi = [params.phi_w @ xm[i] + params.phi_b for i in range(m)]
    s = math.sqrt(params.scale_d)
    a = np.zeros((m, m))
    for i in range(m):
        a[i] = naive_softmax_row([float(theta[i] @ phi[j]) for j in range(m)], s)
    return a


def naive_block_diagonal_pass(x, params, index_map, group_size):
    """Materialize the block-diagonal affinity in full coordinates and
    multiply, instead of running grouped attention."""
    n, c, h, w = x.shape
    m = h * w
    assert n == 1
    xm = flatten_item(x, 0)
    full = np.zeros((m, m))
    for start in range(0, m, group_size):
        rows = index_map[start : start + group_size]
        block = naive_affinity(xm[rows], params)
        full[np.ix_(rows, rows)] = block
    g = xm @ params.g_w.T + params.g_b
    if params.relu:
        g = np.maximum(g, 0)
    return (full @ g).T.reshape(1, c, h, w), full
