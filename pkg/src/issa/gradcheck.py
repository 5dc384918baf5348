"""Central finite-difference gradient checking.

The numeric side perturbs every scalar of every array by +/-step and
re-evaluates the loss; it never touches the analytic backward code, so
the two routes stay independent.
"""

import numpy as np

from . import attention, interlaced
from .analysis import FD_DENOM_FLOOR, FD_STEP


def central_diff(scalar_fn, arrays, step=FD_STEP):
    """Numeric gradient of ``scalar_fn()`` w.r.t. each array, in place.

    ``arrays`` must be the very objects the closure reads; they are
    perturbed and restored element by element.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat_a = a.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_a.size):
            orig = flat_a[i]
            flat_a[i] = orig + step
            f_plus = scalar_fn()
            flat_a[i] = orig - step
            f_minus = scalar_fn()
            flat_a[i] = orig
            flat_g[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads


def relative_max_error(analytic, numeric, floor=FD_DENOM_FLOOR):
    """max|a - n| / max(max|n|, floor) over one pair of arrays."""
    diff = np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)))
    denom = max(np.max(np.abs(numeric)), floor)
    return diff / denom


def combined_max_error(analytic, numeric, floor=FD_DENOM_FLOOR):
    """Relative max-norm error over whole gradient collections.

    The worst absolute component deviation is normalized by the
    max-norm of the full numeric gradient (floored), so structurally
    zero sub-gradients are not judged against finite-difference noise
    alone.
    """
    diff = max(np.max(np.abs(a - n)) for a, n in zip(analytic, numeric))
    denom = max(max(np.max(np.abs(n)) for n in numeric), floor)
    return diff / denom


def _param_arrays(p):
    return [p.theta_w, p.theta_b, p.phi_w, p.phi_b, p.g_w, p.g_b]


def dense_sa_grad_error(x, params, upstream, fuse="none", step=FD_STEP):
    """Worst relative max-norm error between analytic and numeric
    gradients of <upstream, dense_sa_forward(x)>."""
    arrays = [x] + _param_arrays(params)

    def loss():
        return float(np.sum(upstream * attention.dense_sa_forward(x, params, fuse=fuse)))

    numeric = central_diff(loss, arrays, step)
    g = attention.dense_sa_backward(x, params, upstream, fuse=fuse)
    analytic = [g.d_input, g.d_theta_w, g.d_theta_b, g.d_phi_w, g.d_phi_b, g.d_g_w, g.d_g_b]
    return combined_max_error(analytic, numeric)


def issa_grad_error(x, params, upstream, step=FD_STEP):
    """Worst relative max-norm error for the full interlaced module."""
    arrays = [x] + _param_arrays(params.long_stage) + _param_arrays(params.short_stage)

    def loss():
        return float(np.sum(upstream * interlaced.issa_forward(x, params)))

    numeric = central_diff(loss, arrays, step)
    g = interlaced.issa_backward(x, params, upstream)
    analytic = (
        [g.d_input]
        + [g.long_stage.d_theta_w, g.long_stage.d_theta_b, g.long_stage.d_phi_w,
           g.long_stage.d_phi_b, g.long_stage.d_g_w, g.long_stage.d_g_b]
        + [g.short_stage.d_theta_w, g.short_stage.d_theta_b, g.short_stage.d_phi_w,
           g.short_stage.d_phi_b, g.short_stage.d_g_w, g.short_stage.d_g_b]
    )
    return combined_max_error(analytic, numeric)
