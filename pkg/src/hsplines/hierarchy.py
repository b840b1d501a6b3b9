"""Hierarchies of subdomains, active cells, omega regions and admissibility.

A hierarchy on Omega = [0,1]^d is a nested chain Omega_0 >= Omega_1 >= ...
>= Omega_{n-1} (Omega_n = empty), where Omega_0 is the full coarse grid of
n0^d cells and each Omega_l (l >= 1) is a union of level-(l-1) cells.
Subdomains are stored as boolean pixel masks at exactly that granularity;
all predicates below reduce to window operations on those masks
(scipy.ndimage erosion/dilation with the (2p+1)^d box).  The cell-tuple
functions in :mod:`hsplines.cells` provide the independent slow route used
by the tests.

Admissibility notions implemented here:

* ``omega_l``: level-l cells whose clipped support extension lies in
  Omega_l (the region where the full level-l spline space is reproduced).
* weakly admissible: omega_l nested decreasingly across levels.
* strictly admissible of class m: Omega_l inside omega_{l-m+1}.
* clustered: every Omega_l is a union of clipped neighborhoods of
  omega_l cells.
"""

import itertools
import json

import numpy as np
from scipy import ndimage

from hsplines import cells as cellgeo
from hsplines.cells import Cell


class InvalidHierarchyError(ValueError):
    pass


class NotClusteredError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bitmap helpers


def up(mask, e=1):
    """Re-express a mask at granularity g as one at granularity g+e."""
    for ax in range(mask.ndim):
        mask = mask.repeat(1 << e, axis=ax)
    return mask


def _down(mask, e, reducer):
    d = mask.ndim
    n2 = mask.shape[0] >> e
    shape = []
    for _ in range(d):
        shape += [n2, 1 << e]
    return reducer(mask.reshape(shape), axis=tuple(range(1, 2 * d, 2)))


def down_any(mask, e=1):
    """Coarse mask of cells whose fine block meets the mask."""
    return _down(mask, e, np.ndarray.any)


def down_all(mask, e=1):
    """Coarse mask of cells whose fine block is fully inside the mask."""
    return _down(mask, e, np.ndarray.all)


def erode_box(mask, p):
    """Cells whose clipped (2p+1)^d window lies inside the mask.

    border_value=1 makes the out-of-domain part of the window vacuous,
    which is exactly the clipping to Omega_0 in the support-extension test.
    """
    st = np.ones((2 * p + 1,) * mask.ndim, bool)
    return ndimage.binary_erosion(mask, structure=st, border_value=1)


def dilate_box(mask, p):
    st = np.ones((2 * p + 1,) * mask.ndim, bool)
    return ndimage.binary_dilation(mask, structure=st, border_value=0)


def mask_from_cells(ks, n, d):
    mask = np.zeros((n,) * d, dtype=bool)
    for k in ks:
        k = tuple(int(c) for c in k)
        if len(k) != d or any(c < 0 or c >= n for c in k):
            raise InvalidHierarchyError("cell index %r outside %d^%d grid" % (k, n, d))
        mask[k] = True
    return mask


def cells_from_mask(mask, level):
    return [Cell(level, tuple(int(c) for c in idx)) for idx in np.argwhere(mask)]


def cell_in_mask(cell, mask, gran):
    """Whether the cell's box is covered by a mask of level-`gran` pixels."""
    n = mask.shape[0]
    if cell.level >= gran:
        e = cell.level - gran
        idx = tuple(c >> e for c in cell.k)
        if any(i < 0 or i >= n for i in idx):
            return False
        return bool(mask[idx])
    e = gran - cell.level
    if any(c < 0 or (c + 1) << e > n for c in cell.k):
        return False
    sl = tuple(slice(c << e, (c + 1) << e) for c in cell.k)
    return bool(mask[sl].all())


# ---------------------------------------------------------------------------
# hierarchy data


class SubdomainHierarchy:
    """Nested subdomains Omega_0 >= Omega_1 >= ... as granular pixel masks.

    ``masks[l]`` holds Omega_l as level-(l-1) cells for l >= 1 and Omega_0
    as the full level-0 grid; ``depth`` is the number of nonempty levels.
    Immutable after construction.
    """

    def __init__(self, dim, degree, n0, masks):
        if dim < 1 or degree < 1:
            raise InvalidHierarchyError("need dim >= 1 and degree >= 1")
        if n0 < 1 or (n0 & (n0 - 1)) != 0:
            raise InvalidHierarchyError("coarse grid must be a power of two")
        if not masks:
            raise InvalidHierarchyError("need at least the level-0 grid")
        self.dim = int(dim)
        self.degree = int(degree)
        self.n0 = int(n0)
        self.masks = []
        for l, m in enumerate(masks):
            m = np.asarray(m, dtype=bool)
            n = self.grid(self.gran(l))
            if m.shape != (n,) * dim:
                raise InvalidHierarchyError(
                    "level %d mask has shape %r, expected %d^%d" % (l, m.shape, n, dim)
                )
            m = m.copy()
            m.setflags(write=False)
            self.masks.append(m)
        if not self.masks[0].all():
            raise InvalidHierarchyError("Omega_0 must be the full coarse grid")
        for l in range(1, len(self.masks)):
            if not self.masks[l].any():
                raise InvalidHierarchyError("empty subdomain at level %d" % l)
            # nesting Omega_l <= Omega_{l-1}, compared at granularity l-1
            outer = self.masks[l - 1] if l == 1 else up(self.masks[l - 1])
            stray = self.masks[l] & ~outer
            if stray.any():
                k = tuple(int(c) for c in np.argwhere(stray)[0])
                raise InvalidHierarchyError(
                    "Omega_%d not nested in Omega_%d: cell %r at granularity %d"
                    % (l, l - 1, k, l - 1)
                )

    @property
    def depth(self):
        return len(self.masks)

    def grid(self, level):
        return self.n0 << level

    @staticmethod
    def gran(level):
        return max(level - 1, 0)

    def region(self, level, gran):
        """Omega_level as a mask of level-`gran` pixels (zeros past depth)."""
        if level >= self.depth:
            return np.zeros((self.grid(gran),) * self.dim, dtype=bool)
        g0 = self.gran(level)
        if gran < g0:
            raise ValueError("granularity too coarse for level %d" % level)
        m = self.masks[level]
        return up(m, gran - g0) if gran > g0 else m

    def cell_in_subdomain(self, cell, level):
        if level >= self.depth:
            return False
        return cell_in_mask(cell, self.masks[level], self.gran(level))

    def __eq__(self, other):
        if not isinstance(other, SubdomainHierarchy):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.degree == other.degree
            and self.n0 == other.n0
            and self.depth == other.depth
            and all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))
        )

    def __hash__(self):
        return hash((self.dim, self.degree, self.n0, self.depth))

    # --- JSON dump format: {dim, degree, depth, coarse_grid, subdomains} ---

    def to_json(self):
        subs = []
        for l in range(1, self.depth):
            ks = sorted(tuple(int(c) for c in idx) for idx in np.argwhere(self.masks[l]))
            subs.append([l, [list(k) for k in ks]])
        return {
            "dim": self.dim,
            "degree": self.degree,
            "depth": self.depth,
            "coarse_grid": self.n0,
            "subdomains": subs,
        }

    @classmethod
    def from_json(cls, doc):
        dim = int(doc["dim"])
        n0 = int(doc["coarse_grid"])
        depth = int(doc["depth"])
        entries = {int(lv): ks for lv, ks in doc.get("subdomains", [])}
        if sorted(entries) != list(range(1, depth)):
            raise InvalidHierarchyError(
                "subdomain levels %s do not match depth %d" % (sorted(entries), depth)
            )
        masks = [np.ones((n0,) * dim, dtype=bool)]
        for l in range(1, depth):
            n = n0 << (l - 1)
            masks.append(mask_from_cells(entries[l], n, dim))
        return cls(dim, int(doc["degree"]), n0, masks)

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class HierarchicalMesh:
    """A subdomain hierarchy with its active cells and omega_l caches."""

    def __init__(self, hierarchy):
        self.h = hierarchy
        n = hierarchy.depth
        self.active = []
        self.omega = []
        for l in range(n):
            here = hierarchy.region(l, l)
            finer = hierarchy.region(l + 1, l)
            act = here & ~finer
            act.setflags(write=False)
            self.active.append(act)
            om = erode_box(here, hierarchy.degree)
            om.setflags(write=False)
            self.omega.append(om)

    # hierarchy passthrough
    @property
    def dim(self):
        return self.h.dim

    @property
    def degree(self):
        return self.h.degree

    @property
    def n0(self):
        return self.h.n0

    @property
    def depth(self):
        return self.h.depth

    def grid(self, level):
        return self.h.grid(level)

    @classmethod
    def uniform(cls, dim, degree, n0, levels=1):
        """Uniformly refined mesh whose active cells all sit at level levels-1."""
        if levels < 1:
            raise ValueError("levels must be >= 1")
        masks = [np.ones((n0,) * dim, dtype=bool)]
        for l in range(1, levels):
            masks.append(np.ones((n0 << (l - 1),) * dim, dtype=bool))
        return cls(SubdomainHierarchy(dim, degree, n0, masks))

    def active_mask(self, level):
        if level >= self.depth:
            return np.zeros((self.grid(level),) * self.dim, dtype=bool)
        return self.active[level]

    def omega_mask(self, level):
        if level >= self.depth:
            return np.zeros((self.grid(level),) * self.dim, dtype=bool)
        return self.omega[level]

    def active_cells(self, level=None):
        if level is not None:
            return cells_from_mask(self.active_mask(level), level)
        out = []
        for l in range(self.depth):
            out.extend(cells_from_mask(self.active[l], l))
        return out

    def n_active(self):
        return sum(int(a.sum()) for a in self.active)

    def cell_is_active(self, cell):
        if cell.level >= self.depth:
            return False
        n = self.grid(cell.level)
        if any(c < 0 or c >= n for c in cell.k):
            return False
        return bool(self.active[cell.level][cell.k])

    def cell_in_omega(self, cell, k):
        """Whether the cell's box lies inside the omega_k region."""
        if k >= self.depth:
            return False
        return cell_in_mask(cell, self.omega[k], k)

    def cell_in_subdomain(self, cell, level):
        return self.h.cell_in_subdomain(cell, level)

    def __eq__(self, other):
        if not isinstance(other, HierarchicalMesh):
            return NotImplemented
        return self.h == other.h

    def __hash__(self):
        return hash(self.h)


# ---------------------------------------------------------------------------
# operations


def compute_active(hierarchy):
    """Per-level active cells {Q in level l : Q in Omega_l, Q not in Omega_{l+1}}."""
    mesh = hierarchy if isinstance(hierarchy, HierarchicalMesh) else HierarchicalMesh(hierarchy)
    return {l: set(cells_from_mask(mesh.active[l], l)) for l in range(mesh.depth)}


def compute_omega(mesh, level):
    """omega_level as a set of level cells (clipped support extension inside
    Omega_level)."""
    return set(cells_from_mask(mesh.omega_mask(level), level))


def omega_of_set(block, p, n0, query_level=None):
    """Query-level cells inside a cell-set region whose clipped support
    extension stays inside the region.

    ``block`` is a set of same-level cells read as a region.  With
    ``query_level`` equal to the block's level this is the plain "omega of
    a set" routine; one level finer it extracts the in-domain core cells of
    a neighborhood block.
    """
    block = {Cell(int(l), tuple(k)) for l, k in block}
    if not block:
        return set()
    levels = {c.level for c in block}
    if len(levels) != 1:
        raise ValueError("block cells must share one level")
    level = levels.pop()
    if query_level is None:
        query_level = level
    if query_level < level:
        raise ValueError("query level coarser than the block is not defined")
    e = query_level - level
    region = set()
    for c in block:
        rngs = [range(k << e, (k + 1) << e) for k in c.k]
        region.update(itertools.product(*rngs))
    n = n0 << query_level
    out = set()
    for k in region:
        q = Cell(query_level, k)
        ext = cellgeo.support_extension(q, p, n)
        if all(r.k in region for r in ext):
            out.add(q)
    return out


def is_weakly_admissible(mesh):
    """Nested omega regions across levels.

    Returns (ok, report); on failure the report is (level, cell) for the
    first omega_l cell not inside omega_{l-1}.
    """
    for l in range(1, mesh.depth):
        viol = mesh.omega[l] & ~up(mesh.omega[l - 1])
        if viol.any():
            idx = tuple(int(c) for c in np.argwhere(viol)[0])
            return False, (l, Cell(l, idx))
    return True, None


def is_strictly_admissible(mesh, m=2):
    """Omega_l inside omega_{l-m+1} for l = m .. depth-1."""
    if m < 2:
        raise ValueError("class must be >= 2")
    for l in range(m, mesh.depth):
        k = l - m + 1
        region = mesh.h.region(l, l - 1)
        viol = region & ~up(mesh.omega[k], (l - 1) - k)
        if viol.any():
            return False
    return True


def is_clustered(mesh):
    """Whether every Omega_l is the union of the clipped neighborhoods of
    the omega_l cells (the reconstruction identity)."""
    p = mesh.degree
    for l in range(1, mesh.depth):
        recon = down_any(dilate_box(mesh.omega[l], p))
        if not np.array_equal(recon, mesh.h.masks[l]):
            return False
    return True


def characterization_first(mesh):
    """Weak-admissibility test via coarse neighborhoods of parents:
    for every Q in omega_l the clipped neighborhood of parent(Q) must lie
    in Omega_{l-1}.  Returns (ok, report) like is_weakly_admissible."""
    p = mesh.degree
    for l in range(2, mesh.depth):
        # level-(l-1) cells whose clipped neighborhood escapes Omega_{l-1}:
        # r is bad iff some level-(l-1) cell within p steps has its parent
        # outside Omega_{l-1}, and ~region at granularity l-1 is exactly the
        # set of such cells
        outside = ~mesh.h.region(l - 1, l - 1)
        bad_parent = dilate_box(outside, p)
        viol = mesh.omega[l] & up(bad_parent)
        if viol.any():
            idx = tuple(int(c) for c in np.argwhere(viol)[0])
            return False, (l, Cell(l, idx))
    return True, None


def characterization_second(mesh):
    """Weak-admissibility test for clustered hierarchies: every level-l
    cell of Omega_l has its clipped neighborhood inside Omega_{l-1}."""
    if not is_clustered(mesh):
        raise NotClusteredError("second characterization requires a clustered hierarchy")
    p = mesh.degree
    for l in range(1, mesh.depth):
        outside = ~mesh.h.region(l - 1, l - 1)
        bad = dilate_box(up(outside), p)
        if (mesh.h.region(l, l) & bad).any():
            return False
    return True


def characterization_omega(mesh, cell):
    """Evaluate "Q in omega_l" and "neighborhood(Q) cap Omega_0 in Omega_l"
    independently and return whether they agree (they always must)."""
    l = cell.level
    if l == 0:
        return True
    n = mesh.grid(l)
    lhs = all(
        mesh.cell_in_subdomain(q, l) for q in cellgeo.support_extension(cell, mesh.degree, n)
    )
    rhs = all(
        mesh.cell_in_subdomain(r, l)
        for r in cellgeo.neighborhood(cell, mesh.degree, mesh.grid(l - 1))
    )
    return lhs == rhs


def approximation_power(mesh, cell):
    """Largest k with the cell inside omega_k; 0 is always reachable since
    omega_0 is the whole domain."""
    if not mesh.cell_in_subdomain(cell, cell.level):
        raise ValueError("cell %r is not inside its level subdomain" % (cell,))
    for k in range(mesh.depth - 1, 0, -1):
        if cell_in_mask(cell, mesh.omega[k], k):
            return k
    return 0
