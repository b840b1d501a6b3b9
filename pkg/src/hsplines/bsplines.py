"""Cardinal B-splines on uniform integer knots and their tensor products.

The univariate pieces come from the local evaluation kernel; this module
adds global evaluation (zero outside the support [0, p+1]), derivative
scaling and the dyadic two-scale weights.
"""

import math

import numpy as np

from .kernels import local_bspline_values


def cardinal_bspline(p, x, r=0):
    """d^r/dx^r of the degree-p cardinal B-spline at x (scalar or array)."""
    if p < 1:
        raise ValueError("degree must be >= 1")
    if not 0 <= r <= p:
        raise ValueError("derivative order out of range")
    x = np.asarray(x, float)
    scalar = x.ndim == 0
    xf = np.atleast_1d(x).ravel()
    out = np.zeros(xf.shape)
    j = np.floor(xf).astype(int)
    inside = (j >= 0) & (j <= p)
    if inside.any():
        t = xf[inside] - j[inside]
        table = local_bspline_values(p, r, t)
        out[inside] = table[np.arange(len(t)), j[inside]]
    if scalar:
        return float(out[0])
    return out.reshape(x.shape)


def two_scale_weights(p):
    """Coefficients of M_p(x) = sum_j w_j M_p(2x - j), j = 0..p+1."""
    return np.array([math.comb(p + 1, j) for j in range(p + 2)], float) / 2.0 ** p


def eval_tensor_bspline(p, level, anchor, x, alpha=None, n0=1):
    """Tensor-product B-spline of one level-`level` anchor at points x.

    x has shape (npts, d) or (d,); alpha is a per-axis derivative order.
    The value is prod_i s^alpha_i M_p^(alpha_i)(s x_i - k_i) with the level
    scale s = n0 2^level.
    """
    anchor = tuple(int(a) for a in anchor)
    d = len(anchor)
    x = np.asarray(x, float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    assert pts.shape[1] == d
    if alpha is None:
        alpha = (0,) * d
    scale = n0 * (1 << level)
    vals = np.ones(pts.shape[0])
    for i in range(d):
        vals = vals * cardinal_bspline(p, scale * pts[:, i] - anchor[i], alpha[i])
        if alpha[i]:
            vals = vals * float(scale) ** alpha[i]
    return float(vals[0]) if single else vals


def relevant_anchors(p, n_cells):
    """Per-axis anchor range whose support meets [0, 1]: -p .. n_cells-1."""
    return range(-p, n_cells)
