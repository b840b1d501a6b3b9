"""Kernel selection: compiled extension if available, numpy fallback otherwise.

Set HSPLINES_PURE_PYTHON=1 to force the fallback (useful for benchmarking and
for debugging the extension).  Extended-precision inputs always take the
fallback path since the extension is double-only.
"""

import os

import numpy as np

from hsplines._kernels_py import local_bspline_values as _py_local_bspline_values

if os.environ.get("HSPLINES_PURE_PYTHON", "") == "1":
    IS_COMPILED = False
    _impl = _py_local_bspline_values
else:
    try:
        from hsplines._kernels import IS_COMPILED
        from hsplines._kernels import local_bspline_values as _impl
    except ImportError:
        IS_COMPILED = False
        _impl = _py_local_bspline_values


def local_bspline_values(p, nu, t):
    if np.asarray(t).dtype == np.longdouble:
        return _py_local_bspline_values(p, nu, t)
    return _impl(p, nu, t)


__all__ = ["IS_COMPILED", "local_bspline_values"]
