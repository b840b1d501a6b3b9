"""Evaluation kernel: compiled and fallback paths agree and match scipy."""

import os
import subprocess
import sys
import textwrap

import numpy as np
from scipy.interpolate import BSpline

from hsplines import _kernels_py, kernels


def cardinal(p, nu):
    """Cardinal B-spline of degree p on [0, p+1] as a scipy object."""
    b = BSpline.basis_element(np.arange(p + 2), extrapolate=False)
    return b.derivative(nu) if nu else b


def test_matches_scipy_cardinal_splines(rng):
    for p in range(1, 5):
        t = rng.uniform(0.001, 0.999, size=40)
        for nu in range(p):
            ref = cardinal(p, nu)
            vals = kernels.local_bspline_values(p, nu, t)
            assert vals.shape == (40, p + 1)
            for j in range(p + 1):
                want = np.nan_to_num(ref(t + j))
                assert np.allclose(vals[:, j], want, atol=1e-12)


def test_highest_derivative_is_piecewise_constant(rng):
    # nu == p lies below scipy's continuity threshold; check the jump sizes
    # against the alternating binomial pattern of the degree-p spline.
    from math import comb
    p = 3
    t = rng.uniform(0.01, 0.99, size=20)
    vals = kernels.local_bspline_values(p, p, t)
    for j in range(p + 1):
        want = sum((-1) ** i * comb(p + 1, i) for i in range(j + 1))
        assert np.allclose(vals[:, j], want)


def test_fallback_and_dispatcher_agree(rng):
    for p in range(5):
        t = rng.uniform(0.0, 1.0, size=64)
        for nu in range(p + 2):
            a = kernels.local_bspline_values(p, nu, t)
            b = _kernels_py.local_bspline_values(p, nu, t)
            assert a.shape == b.shape
            assert np.allclose(a, b, rtol=0, atol=5e-15)


def test_partition_of_unity(rng):
    for p in range(5):
        t = rng.uniform(0.0, 1.0, size=50)
        vals = kernels.local_bspline_values(p, 0, t)
        assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-14)
        d1 = kernels.local_bspline_values(p, 1, t)
        assert np.allclose(d1.sum(axis=1), 0.0, atol=1e-13)


def test_derivative_matches_finite_differences(rng):
    p = 3
    t = rng.uniform(0.05, 0.95, size=30)
    h = 1e-6
    fd = (kernels.local_bspline_values(p, 0, t + h)
          - kernels.local_bspline_values(p, 0, t - h)) / (2 * h)
    d1 = kernels.local_bspline_values(p, 1, t)
    assert np.allclose(d1, fd, atol=1e-8)


def test_order_above_degree_gives_zero():
    t = np.linspace(0.0, 1.0, 7)
    for p in range(4):
        vals = kernels.local_bspline_values(p, p + 1, t)
        assert vals.shape == (7, p + 1)
        assert not vals.any()


def test_right_endpoint_uses_continuous_branch():
    p = 3
    one = kernels.local_bspline_values(p, 0, np.array([1.0]))
    near = kernels.local_bspline_values(p, 0, np.array([1.0 - 1e-11]))
    assert np.allclose(one, near, atol=1e-9)


def test_longdouble_routes_to_fallback():
    t = np.linspace(0, 1, 9, dtype=np.longdouble)
    vals = kernels.local_bspline_values(3, 0, t)
    assert vals.dtype == np.longdouble
    assert np.allclose(vals.astype(float).sum(axis=1), 1.0)


def test_rejects_bad_input():
    import pytest
    with pytest.raises(ValueError):
        _kernels_py.local_bspline_values(2, 0, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        _kernels_py.local_bspline_values(2, -1, np.zeros(3))


SNIPPET = textwrap.dedent("""
    import hsplines.kernels as k
    try:
        import hsplines._kernels
        have_ext = True
    except ImportError:
        have_ext = False
    print(k.IS_COMPILED, have_ext)
""")


def test_env_var_forces_pure_python():
    env = {**os.environ, "HSPLINES_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env,
                         capture_output=True, text=True, check=True).stdout
    assert out.split() == ["False", "True"]


def test_default_uses_extension_when_built():
    env = {k: v for k, v in os.environ.items() if k != "HSPLINES_PURE_PYTHON"}
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env,
                         capture_output=True, text=True, check=True).stdout
    compiled, have_ext = out.split()
    assert compiled == have_ext
