"""Level projectors with dual functionals and the multilevel quasi-interpolant.

P_l projects onto the span of the level-l B-splines that own a level-l cell
inside omega_l; its dual functionals come from local L2 projections on one
probe cell per anchor.  The multilevel operator accumulates corrections
level by level and is re-expressed in the active hierarchical basis through
exact dyadic coefficient refinement.
"""

import logging
from functools import lru_cache

import numpy as np

from . import bsplines as bs
from . import cells as cg
from . import hbasis as hb
from . import hierarchy as hi
from .kernels import local_bspline_values
from .refine import NotWeaklyAdmissibleError

log = logging.getLogger(__name__)


def gauss_rule_01(g):
    nodes, weights = np.polynomial.legendre.leggauss(g)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _outer_rows(mats):
    """Row-wise tensor product: mats are (n, m_i); result (n, prod m_i)."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, :, None] * m[:, None, :]).reshape(out.shape[0], -1)
    return out


def _flat_gather(lattice, idx_axes):
    """Gather blocks lattice[i1, .., id] for per-axis index arrays (n, m)."""
    strides = np.array(lattice.strides) // lattice.itemsize
    acc = np.zeros((idx_axes[0].shape[0], 1), dtype=np.intp)
    for i, ix in enumerate(idx_axes):
        acc = (acc[:, :, None] + (ix * strides[i])[:, None, :]).reshape(acc.shape[0], -1)
    return lattice.ravel()[acc]


class LevelSpline:
    """Tensor spline of one level with a dense anchor-lattice of coefficients."""

    def __init__(self, p, dim, level, n0, coeffs=None):
        self.p = p
        self.dim = dim
        self.level = level
        self.n0 = n0
        n = n0 * (1 << level)
        shape = (n + p,) * dim
        self.coeffs = np.zeros(shape) if coeffs is None else np.asarray(coeffs, float)
        assert self.coeffs.shape == shape

    def __call__(self, x, alpha=None):
        p, d = self.p, self.dim
        if alpha is None:
            alpha = (0,) * d
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        n = self.n0 * (1 << self.level)
        scaled = pts * n
        c = np.minimum(np.floor(scaled).astype(int), n - 1)
        c = np.maximum(c, 0)
        t = scaled - c
        vmats = []
        idx_axes = []
        offs = np.arange(p + 1)
        chain = 1.0
        for i in range(d):
            vmats.append(local_bspline_values(p, alpha[i], t[:, i]))
            idx_axes.append((c[:, i] + p)[:, None] - offs[None, :])
            chain *= float(n) ** alpha[i]
        prod = _outer_rows(vmats)
        block = _flat_gather(self.coeffs, idx_axes)
        vals = chain * np.sum(prod * block, axis=1)
        return float(vals[0]) if single else vals


def _to_longdouble(r):
    """Round an exact sympy rational to extended precision via its decimal
    expansion (going through float would truncate to 53 bits)."""
    import sympy as sp

    return np.longdouble(str(sp.Float(r, 40)))


@lru_cache(maxsize=None)
def _exact_dual_tables(p):
    """Reference-span tables (nodes, weights, inverse Gram) in longdouble.

    The span Gram g[i,j] = int_0^1 M(t+i) M(t+j) dt is rational, so its
    inverse can be formed exactly and rounded once; the quadrature is
    closed Newton-Cotes on the 2p+1 rational nodes g/(2p), exact through
    degree 2p+1, which covers every product of two degree-p pieces.  With
    these tables the local projection loses accuracy only to extended
    rounding instead of float64 rounding amplified by cond(gram)^d (about
    5e7 for cubics in 2d, which is what pushed coefficients to ~4e-10
    when everything ran in double).
    """
    import sympy as sp

    x = sp.symbols("x")
    knots = tuple(sp.Integer(i) for i in range(p + 2))
    b = sp.functions.special.bsplines.bspline_basis(p, knots, 0, x)
    pieces = []
    for j in range(p + 1):
        pts = [j + sp.Rational(m + 1, p + 3) for m in range(p + 1)]
        poly = sp.interpolate([(pt, b.subs(x, pt)) for pt in pts], x)
        pieces.append(sp.expand(poly.subs(x, x + j)))
    gram = sp.Matrix(p + 1, p + 1,
                     lambda i, j: sp.integrate(pieces[i] * pieces[j], (x, 0, 1)))
    ginv = gram.inv()

    nodes = [sp.Rational(g, 2 * p) for g in range(2 * p + 1)]
    wts = []
    for g, xg in enumerate(nodes):
        lag = sp.Integer(1)
        for m, xm in enumerate(nodes):
            if m != g:
                lag *= (x - xm) / (xg - xm)
        wts.append(sp.integrate(sp.expand(lag), (x, 0, 1)))
    assert sum(wts) == 1

    t = np.array([_to_longdouble(v) for v in nodes], dtype=np.longdouble)
    w = np.array([_to_longdouble(v) for v in wts], dtype=np.longdouble)
    gi = np.array([[_to_longdouble(ginv[i, j]) for j in range(p + 1)]
                   for i in range(p + 1)], dtype=np.longdouble)
    return t, w, gi


def _apply_ginv(rhs, ginv, d):
    """Apply the per-axis inverse Gram to the trailing (p+1)^d axis of rhs."""
    m = ginv.shape[0]
    lead = rhs.shape[:-1]
    nlead = len(lead)
    y = rhs.reshape(lead + (m,) * d)
    for i in range(d):
        y = np.moveaxis(np.moveaxis(y, nlead + i, -1) @ ginv.T, -1, nlead + i)
    return y.reshape(lead + (m ** d,))


class DualFunctional:
    """lambda_beta via the local L2 projection on the anchor's probe cell."""

    def __init__(self, p, dim, n0, level, anchor, probe):
        self.p = p
        self.dim = dim
        self.n0 = n0
        self.level = level
        self.anchor = tuple(anchor)
        self.probe = probe
        self.offset = tuple(probe.k[i] - self.anchor[i] for i in range(dim))
        assert all(0 <= o <= p for o in self.offset)

    def __call__(self, f):
        p, d = self.p, self.dim
        t, w, ginv = _exact_dual_tables(p)
        v = local_bspline_values(p, 0, t)
        prod = v
        wts = w
        for _ in range(d - 1):
            prod = np.kron(prod, v)
            wts = np.kron(wts, w)
        n = self.n0 * (1 << self.level)
        t64 = t.astype(float)
        grid = np.stack(np.meshgrid(*[t64] * d, indexing="ij"), axis=-1).reshape(-1, d)
        pts = (np.array(self.probe.k, float) + grid) / n
        fvals = np.asarray(f(pts), float).astype(np.longdouble)
        rhs = prod.T @ (wts * fvals)
        coef = _apply_ginv(rhs, ginv, d)
        flat = 0
        for o in self.offset:
            flat = flat * (p + 1) + o
        return float(coef[flat])


def _probe_cells(mesh, level):
    """Probe cell (smallest level-`level` cell of supp cap omega) for every
    restricted anchor of the level; None set when omega is empty."""
    p = mesh.degree
    omega = mesh.omega_mask(level)
    lat = hb._window_any(omega, p)
    n = mesh.grid(level)
    probes = {}
    for a in (tuple(v) for v in np.argwhere(lat) - p):
        rng = [range(max(ai, 0), min(ai + p + 1, n)) for ai in a]
        probe = None
        for k in np.ndindex(*[len(r) for r in rng]):
            cand = tuple(r[i] for r, i in zip(rng, k))
            if omega[cand]:
                probe = cg.Cell(level, cand)
                break
        if probe is None:
            raise RuntimeError("restricted anchor %r has no probe cell" % (a,))
        probes[a] = probe
    return probes


def dual_functionals(mesh, level):
    return {
        a: DualFunctional(mesh.degree, mesh.dim, mesh.n0, level, a, q)
        for a, q in _probe_cells(mesh, level).items()
    }


def project_level(level, f, mesh):
    """P_level f as a LevelSpline (zero coefficients off the restricted set)."""
    p, d, n0 = mesh.degree, mesh.dim, mesh.n0
    out = LevelSpline(p, d, level, n0)
    probes = _probe_cells(mesh, level)
    if not probes:
        return out
    t, w, ginv = _exact_dual_tables(p)
    v = local_bspline_values(p, 0, t)
    prod = v
    wts = w
    for _ in range(d - 1):
        prod = np.kron(prod, v)
        wts = np.kron(wts, w)
    t64 = t.astype(float)
    grid = np.stack(np.meshgrid(*[t64] * d, indexing="ij"), axis=-1).reshape(-1, d)
    n = mesh.grid(level)

    by_probe = {}
    for a, q in probes.items():
        by_probe.setdefault(q, []).append(a)
    cells_list = sorted(by_probe)
    pts = np.concatenate(
        [(np.array(q.k, float) + grid) / n for q in cells_list], axis=0)
    fvals = np.asarray(f(pts), float).reshape(len(cells_list), -1)
    rhs = (wts * fvals.astype(np.longdouble)) @ prod
    coef = _apply_ginv(rhs, ginv, d)
    for row, q in enumerate(cells_list):
        for a in by_probe[q]:
            flat = 0
            for i in range(d):
                flat = flat * (p + 1) + (q.k[i] - a[i])
            out.coeffs[tuple(ai + p for ai in a)] = float(coef[row, flat])
    return out


def _push_down(arr, p, dim, n_next):
    """Exact dyadic refinement of a level coefficient lattice, cropped to
    the relevant anchors of the next level."""
    w = bs.two_scale_weights(p)
    n_prev = arr.shape[0] - p
    out = np.zeros((n_next + p,) * dim)
    src_a = np.arange(-p, n_prev)
    for j in np.ndindex(*(p + 2,) * dim):
        tgt = [2 * src_a + j[i] + p for i in range(dim)]
        keep = [(ti >= 0) & (ti < n_next + p) for ti in tgt]
        weight = 1.0
        for ji in j:
            weight *= w[ji]
        out[np.ix_(*[t[k] for t, k in zip(tgt, keep)])] += weight * arr[
            np.ix_(*[np.arange(arr.shape[0])[k] for k in keep])]
    return out


def multilevel_qi(f, mesh, basis=None, return_levels=False):
    """Quasi-interpolant of f on a weakly admissible mesh, as a SplineField."""
    ok, report = hi.is_weakly_admissible(mesh)
    if not ok:
        raise NotWeaklyAdmissibleError("mesh is not weakly admissible at %r" % (report,))
    if basis is None:
        basis = hb.HBBasis(mesh)
    incs = []
    for l in range(mesh.depth):
        if incs:
            def residual(x, _incs=tuple(incs)):
                acc = np.asarray(f(x), float).copy()
                for s in _incs:
                    acc -= s(x)
                return acc
            incs.append(project_level(l, residual, mesh))
        else:
            incs.append(project_level(l, f, mesh))

    coeffs = np.zeros(basis.n_dofs)
    carry = None
    p, d = mesh.degree, mesh.dim
    for l in range(mesh.depth):
        arr = incs[l].coeffs.copy()
        if carry is not None:
            arr += carry
        act = basis.active_lattice[l]
        idx = [basis.dof_index(l, a) for a in basis.anchors_at(l)]
        coeffs[idx] += arr[act]
        rest = np.where(act, 0.0, arr)
        if l + 1 < mesh.depth:
            if rest.any():
                inside_next = hb._window_all(mesh.h.region(l + 1, l), p)
                assert not (np.abs(rest) > 0)[~inside_next].any()
            carry = _push_down(rest, p, d, mesh.grid(l + 1))
        else:
            assert not rest.any()
    field = hb.SplineField(basis, coeffs)
    if return_levels:
        return field, incs
    return field


def _call_deriv(fn, x, alpha):
    if alpha is None or not any(alpha):
        return np.asarray(fn(x), float)
    return np.asarray(fn(x, alpha), float)


def qi_error(f, s, region, alpha=None, q=2, n0=1, gpts=None):
    """L^q norm of D^alpha (f - s) over a set of cells.

    q=2 uses tensor Gauss quadrature, q=inf a 5^d sampling grid per cell.
    """
    region = [cg.Cell(c.level, tuple(c.k)) for c in region]
    if not region:
        return 0.0
    d = len(region[0].k)
    if alpha is not None and any(a < 0 for a in alpha):
        raise ValueError("negative derivative order")
    diff = lambda x: _call_deriv(f, x, alpha) - _call_deriv(s, x, alpha)
    if q == 2:
        g = gpts if gpts is not None else 5
        t, w = gauss_rule_01(g)
        grid = np.stack(np.meshgrid(*[t] * d, indexing="ij"), axis=-1).reshape(-1, d)
        wts = _outer_rows([w[None, :]] * d)[0]
        acc = 0.0
        for cell in region:
            n = n0 * (1 << cell.level)
            pts = (np.array(cell.k, float) + grid) / n
            acc += float(np.dot(wts, diff(pts) ** 2)) / n ** d
        return float(np.sqrt(acc))
    if q == np.inf or q == "inf":
        t = (np.arange(5) + 0.5) / 5.0
        grid = np.stack(np.meshgrid(*[t] * d, indexing="ij"), axis=-1).reshape(-1, d)
        best = 0.0
        for cell in region:
            n = n0 * (1 << cell.level)
            pts = (np.array(cell.k, float) + grid) / n
            best = max(best, float(np.abs(diff(pts)).max()))
        return best
    raise ValueError("q must be 2 or inf")


def neighborhood_N(cell, mesh):
    """Estimate neighborhood and local size (N(Q), h_Q) of an active cell."""
    assert mesh.cell_is_active(cell)
    p = mesh.degree
    k = hi.approximation_power(mesh, cell)
    if k == cell.level:
        ext = cg.support_extension(cell, p, mesh.grid(cell.level))
    else:
        anc_level = max(k - 1, 0)
        anc = cg.parent(cell, cell.level - anc_level)
        ext = cg.support_extension(anc, p, mesh.grid(anc_level))
    h = 1.0 / (mesh.n0 * (1 << k))
    return ext, h


def v_neighborhood(cellset, p, n):
    """V_C of a union of same-level cells: union of support extensions."""
    out = set()
    for c in cellset:
        out |= cg.support_extension(c, p, n)
    return out
