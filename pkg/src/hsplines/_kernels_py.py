"""Pure-numpy implementation of the univariate B-spline evaluation kernel.

Same contract as the compiled extension `hsplines._kernels`; used as the
fallback when the extension is missing or HSPLINES_PURE_PYTHON=1 is set.
"""

import numpy as np

IS_COMPILED = False


def local_bspline_values(p, nu, t):
    """Evaluate all local translates of a cardinal B-spline derivative.

    For points t in [0, 1] returns V of shape (len(t), p+1) with

        V[i, j] = (d/dx)^nu M_p (t[i] + j),    j = 0..p,

    where M_p is the cardinal B-spline of degree p with support [0, p+1]
    (M_0 = indicator of [0, 1)).  At t == 1 the left polynomial branch is
    used, which equals the true value whenever the derivative is continuous
    there (nu <= p-1).
    """
    t = np.asarray(t)
    dtype = t.dtype if t.dtype in (np.float64, np.longdouble) else np.float64
    t = np.ascontiguousarray(t, dtype=dtype)
    if t.ndim != 1:
        raise ValueError("t must be one-dimensional")
    if not 0 <= nu:
        raise ValueError("nu must be nonnegative")
    n = t.shape[0]
    out = np.zeros((n, p + 1), dtype=dtype)
    if nu > p:
        return out
    out[:, 0] = 1.0
    # triangular recurrence up to degree p - nu, in place over columns
    for q in range(1, p - nu + 1):
        for j in range(q, 0, -1):
            out[:, j] = ((t + j) * out[:, j] + (q + 1 - t - j) * out[:, j - 1]) / q
        out[:, 0] *= t / q
    # nu forward differences raise the degree back to p and differentiate
    for s in range(nu):
        w = p - nu + s + 1
        for j in range(w, 0, -1):
            out[:, j] -= out[:, j - 1]
    return out
