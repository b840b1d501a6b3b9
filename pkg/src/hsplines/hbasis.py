"""Hierarchical B-spline basis attached to a hierarchical mesh.

Anchors at level l live on the lattice {-p..N_l-1}^d; the support of an
anchor is the (p+1)^d block of level-l cells starting at it, clipped to the
domain.  An anchor is active when its clipped support sits inside Omega_l
but not inside Omega_{l+1}.  Degrees of freedom are numbered level-major,
then lexicographically by anchor.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import cells as cg
from . import hierarchy as hi
from .kernels import local_bspline_values


def _window_all(mask, p):
    """Anchor-lattice bitmap: all in-grid support cells of the anchor are
    set in `mask`.  Index a+p corresponds to anchor coordinate a."""
    d = mask.ndim
    padded = np.pad(mask, p, constant_values=True)
    win = sliding_window_view(padded, (p + 1,) * d)
    return win.all(axis=tuple(range(d, 2 * d)))


def _window_any(mask, p):
    """Anchor-lattice bitmap: some in-grid support cell of the anchor is
    set in `mask`."""
    d = mask.ndim
    padded = np.pad(mask, p, constant_values=False)
    win = sliding_window_view(padded, (p + 1,) * d)
    return win.any(axis=tuple(range(d, 2 * d)))


class HBBasis:
    """Active hierarchical anchors per level plus the omega-restricted sets."""

    def __init__(self, mesh):
        self.mesh = mesh
        p = mesh.degree
        d = mesh.dim
        self.active_lattice = []
        self.restricted_lattice = []
        for l in range(mesh.depth):
            inside = _window_all(mesh.h.region(l, l), p)
            if l + 1 < mesh.depth:
                inside_next = _window_all(mesh.h.region(l + 1, l), p)
            else:
                inside_next = np.zeros_like(inside)
            self.active_lattice.append(inside & ~inside_next)
            self.restricted_lattice.append(_window_any(mesh.omega_mask(l), p))
        self.anchors = [
            [tuple(a) for a in np.argwhere(lat) - p] for lat in self.active_lattice
        ]
        self._dof = {}
        for l, anchors in enumerate(self.anchors):
            for a in anchors:
                self._dof[(l, a)] = len(self._dof)

    @property
    def degree(self):
        return self.mesh.degree

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def n_dofs(self):
        return len(self._dof)

    def anchors_at(self, level):
        return self.anchors[level]

    def is_active(self, level, anchor):
        return (level, anchor) in self._dof

    def dof_index(self, level, anchor):
        return self._dof[(level, anchor)]

    def dof_anchor(self, dof):
        if not hasattr(self, "_rev"):
            self._rev = {v: k for k, v in self._dof.items()}
        return self._rev[dof]

    def in_restricted(self, level, anchor):
        """Whether the anchor belongs to the omega-restricted set of its
        level (some level-`level` cell inside supp cap omega_level)."""
        idx = tuple(a + self.degree for a in anchor)
        return bool(self.restricted_lattice[level][idx])

    def restricted_at(self, level):
        p = self.degree
        return [tuple(a) for a in np.argwhere(self.restricted_lattice[level]) - p]

    def support_cells(self, level, anchor):
        """Clipped support as level-`level` cells."""
        n = self.mesh.grid(level)
        rng = [range(max(a, 0), min(a + self.degree + 1, n)) for a in anchor]
        out = set()
        for k in np.ndindex(*[len(r) for r in rng]):
            out.add(cg.Cell(level, tuple(r[i] for r, i in zip(rng, k))))
        return out

    def cell_dofs(self, cell):
        """Dofs supported on an active mesh cell, as (dof, level, anchor)."""
        p = self.degree
        out = []
        for j in range(cell.level + 1):
            ck = tuple(c >> (cell.level - j) for c in cell.k)
            lat = self.active_lattice[j]
            for off in np.ndindex(*(p + 1,) * self.dim):
                a = tuple(ck[i] - p + off[i] for i in range(self.dim))
                if lat[tuple(ai + p for ai in a)]:
                    out.append((self._dof[(j, a)], j, a))
        out.sort()
        return out

    def eval_on_cell(self, cell, t, alpha=None, entries=None):
        """Values of the dofs supported on `cell` at local points t.

        t has shape (npts, d) with entries in [0, 1] (cell coordinates).
        Returns (entries, values) with values of shape (len(entries), npts)
        and rows ordered like `entries` (cell_dofs order by default).
        """
        mesh = self.mesh
        p = self.degree
        d = self.dim
        if alpha is None:
            alpha = (0,) * d
        t = np.atleast_2d(np.asarray(t, float))
        if entries is None:
            entries = self.cell_dofs(cell)
        vals = np.empty((len(entries), t.shape[0]))
        tabs = {}
        for row, (dof, j, a) in enumerate(entries):
            e = cell.level - j
            if (j,) not in tabs:
                scale = float(mesh.n0 << j)
                cols = []
                chain = 1.0
                for i in range(d):
                    r = cell.k[i] - ((cell.k[i] >> e) << e)
                    cols.append(local_bspline_values(p, alpha[i], (r + t[:, i]) / (1 << e)))
                    chain *= scale ** alpha[i]
                tabs[(j,)] = (cols, chain)
            cols, chain = tabs[(j,)]
            ck = tuple(c >> e for c in cell.k)
            acc = np.full(t.shape[0], chain)
            for i in range(d):
                acc = acc * cols[i][:, ck[i] - a[i]]
            vals[row] = acc
        return entries, vals


def build_hb_basis(mesh):
    return HBBasis(mesh)


class SplineField:
    """Coefficient vector over the active hierarchical basis."""

    def __init__(self, basis, coefficients):
        coefficients = np.asarray(coefficients, float)
        assert coefficients.shape == (basis.n_dofs,)
        self.basis = basis
        self.coefficients = coefficients

    def __call__(self, x, alpha=None):
        return eval_field(self, x, alpha)

    def to_json(self):
        return {
            "hierarchy": self.basis.mesh.h.to_json(),
            "dof_order": "level-major, lexicographic anchors",
            "coefficients": [float(c) for c in self.coefficients],
        }

    @classmethod
    def from_json(cls, doc):
        mesh = hi.HierarchicalMesh(hi.SubdomainHierarchy.from_json(doc["hierarchy"]))
        return cls(HBBasis(mesh), np.asarray(doc["coefficients"], float))


def locate_active_cells(mesh, x):
    """Containing active cell for each point (points on the far boundary
    are assigned to the last cell)."""
    x = np.atleast_2d(np.asarray(x, float))
    out = []
    for pt in x:
        cell = None
        for l in range(mesh.depth - 1, -1, -1):
            n = mesh.grid(l)
            idx = tuple(min(int(v * n), n - 1) for v in pt)
            if mesh.active_mask(l)[idx]:
                cell = cg.Cell(l, idx)
                break
        assert cell is not None
        out.append(cell)
    return out


def eval_field(field, x, alpha=None):
    """Evaluate sum_beta c_beta D^alpha beta at the given points."""
    basis = field.basis
    mesh = basis.mesh
    x = np.asarray(x, float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    cells_of = locate_active_cells(mesh, pts)
    out = np.empty(pts.shape[0])
    groups = {}
    for i, c in enumerate(cells_of):
        groups.setdefault(c, []).append(i)
    for cell, idxs in groups.items():
        n = mesh.grid(cell.level)
        local = pts[idxs] * n - np.array(cell.k, float)
        entries, vals = basis.eval_on_cell(cell, np.clip(local, 0.0, 1.0), alpha)
        coeffs = field.coefficients[[e[0] for e in entries]]
        out[idxs] = coeffs @ vals
    return float(out[0]) if single else out
