"""Marking and refinement of weakly admissible hierarchical meshes.

The pipeline: a raw set of marked active cells is first split level by
level (update_marked_elements) into cells that already reproduce the full
spline space around them (M1) and cells that do so one level coarser (M2),
escalating the rest to their parents.  The marking method then turns M1/M2
into the actual refinement set by adding, per level, the clipped coarse
neighborhoods of a working set W*_l, keeping the refined hierarchy
clustered and weakly admissible.  mark_recursive implements the same
closure by recursion over core cells.  sa2_marking is the strict class-m
baseline used for comparisons.
"""

import itertools
import math

import numpy as np

from hsplines import cells as cellgeo
from hsplines import hierarchy as hi
from hsplines.cells import Cell
from hsplines.hierarchy import HierarchicalMesh, NotClusteredError, SubdomainHierarchy


class NotWeaklyAdmissibleError(ValueError):
    pass


class NotStrictlyAdmissibleError(ValueError):
    pass


class MarkSet:
    """Cells marked for refinement, bucketed per level."""

    def __init__(self, by_level=None):
        self.by_level = {}
        if by_level:
            for l, cs in by_level.items():
                for c in cs:
                    self.add(Cell(int(l), tuple(c.k if isinstance(c, Cell) else c)))

    @classmethod
    def coerce(cls, marks):
        """Accept a MarkSet, a {level: cells} dict, or a flat cell iterable."""
        if isinstance(marks, MarkSet):
            return marks
        if isinstance(marks, dict):
            return cls(marks)
        out = cls()
        for c in marks:
            out.add(Cell(int(c.level), tuple(c.k)))
        return out

    def add(self, cell):
        self.by_level.setdefault(cell.level, set()).add(cell)

    def cells(self, level):
        return self.by_level.get(level, set())

    def levels(self):
        return sorted(self.by_level)

    def all_cells(self):
        out = []
        for l in self.levels():
            out.extend(sorted(self.by_level[l]))
        return out

    def total(self):
        return sum(len(s) for s in self.by_level.values())

    def __bool__(self):
        return any(self.by_level.values())

    def __eq__(self, other):
        if not isinstance(other, MarkSet):
            return NotImplemented
        a = {l: s for l, s in self.by_level.items() if s}
        b = {l: s for l, s in other.by_level.items() if s}
        return a == b

    def __repr__(self):
        return "MarkSet(%r)" % {l: sorted(s) for l, s in sorted(self.by_level.items()) if s}

    def to_json(self, dim):
        return {
            "dim": dim,
            "cells": [
                [l, [list(c.k) for c in sorted(self.by_level[l])]]
                for l in self.levels()
                if self.by_level[l]
            ],
        }

    @classmethod
    def from_json(cls, doc):
        out = cls()
        for l, ks in doc.get("cells", []):
            for k in ks:
                out.add(Cell(int(l), tuple(int(x) for x in k)))
        return out


def _check_marks_active(mesh, marks):
    for l in marks.levels():
        for c in marks.by_level[l]:
            if not mesh.cell_is_active(c):
                raise ValueError("marked cell %r is not active" % (c,))


def _marks_masks(mesh, marks, levels):
    """Per-level boolean masks of a MarkSet (granularity = level)."""
    out = {}
    for l in levels:
        m = np.zeros((mesh.grid(l),) * mesh.dim, bool)
        for c in marks.cells(l):
            m[c.k] = True
        out[l] = m
    return out


def update_marked_elements(mesh, marks):
    """Split marked cells into the optimal part M1 and the one-level-coarser
    part M2, escalating the remainder to parent cells level by level.

    M1_l cells sit inside omega_l; M2_l cells do not but their parents sit
    inside omega_{l-1}; any other cell is replaced by its parent in the
    level-(l-1) working set.  At level 0 everything is optimal.  The result
    never has more cells than the input.
    """
    marks = MarkSet.coerce(marks)
    _check_marks_active(mesh, marks)
    work = {l: set(marks.cells(l)) for l in range(mesh.depth)}
    m1, m2 = MarkSet(), MarkSet()
    for l in range(mesh.depth - 1, 0, -1):
        for q in work[l]:
            if mesh.cell_in_omega(q, l):
                m1.add(q)
            else:
                par = cellgeo.parent(q)
                if mesh.cell_in_omega(par, l - 1):
                    m2.add(q)
                else:
                    work[l - 1].add(par)
    for q in work[0]:
        m1.add(q)
    return m1, m2


def refine_hierarchical_mesh(mesh, marks):
    """New mesh with every marked active cell subdivided once."""
    marks = MarkSet.coerce(marks)
    _check_marks_active(mesh, marks)
    n = mesh.depth
    top = max(marks.levels(), default=-1)
    masks = [m.copy() for m in mesh.h.masks]
    while len(masks) <= top + 1:
        l = len(masks)
        masks.append(np.zeros((mesh.grid(l - 1),) * mesh.dim, bool))
    for l in marks.levels():
        for c in marks.cells(l):
            masks[l + 1][c.k] = True
    while len(masks) > 1 and not masks[-1].any():
        masks.pop()
    return HierarchicalMesh(SubdomainHierarchy(mesh.dim, mesh.degree, mesh.n0, masks))


def adaptive_refinement_marks(mesh, marks, return_subdomains=False):
    """Refinement set of the weakly admissible marking method.

    Walks levels from finest+1 down to 1, collecting the working set W*_l
    (children of M1 one level up, M2 at the level, and the cells M4 whose
    updated finer omega region outgrew the original one), and adds every
    active cell of the clipped neighborhoods of W*_l to the output.  The
    refined mesh stays clustered and weakly admissible and is exactly the
    hierarchy Omega*_l accumulated here (optionally returned for checks).
    """
    marks = MarkSet.coerce(marks)
    ok, report = hi.is_weakly_admissible(mesh)
    if not ok:
        raise NotWeaklyAdmissibleError("mesh is not weakly admissible at %r" % (report,))
    if not hi.is_clustered(mesh):
        raise NotClusteredError("marking method requires a clustered hierarchy")
    m1, m2 = update_marked_elements(mesh, marks)
    p = mesh.degree
    n = mesh.depth
    m1_masks = _marks_masks(mesh, m1, range(n))
    m2_masks = _marks_masks(mesh, m2, range(n))

    out = MarkSet()
    omega_star_next = None  # omega*_{l+1} while sweeping l = n..1
    star_regions = {}  # Omega*_l at granularity l-1
    for l in range(n, 0, -1):
        w = np.zeros((mesh.grid(l),) * mesh.dim, bool)
        w |= hi.up(m1_masks[l - 1])  # children of M1_{l-1}
        if l < n:
            w |= m2_masks[l]
            # M4_l: parents of next-level cells inside omega*_{l+1} \ omega_l
            w |= hi.down_any(omega_star_next) & ~mesh.omega[l]
        union_coarse = hi.down_any(hi.dilate_box(w, p))
        region = mesh.h.region(l, l - 1) | union_coarse
        # refined subdomains may not outgrow the previous original level
        if (region & ~mesh.h.region(l - 1, l - 1)).any():
            raise RuntimeError("refinement escaped Omega_%d; marking bug" % (l - 1))
        star_regions[l] = region
        omega_star_next = hi.erode_box(hi.up(region), p)
        newly = union_coarse & mesh.active_mask(l - 1)
        for c in hi.cells_from_mask(newly, l - 1):
            out.add(c)
    if return_subdomains:
        return out, star_regions
    return out


def mark_recursive(mesh, cell, marks, _visited=None):
    """Recursive closure step: ensure the coarse neighborhood of `cell` can
    be refined, then mark all its active cells.

    Recursion descends through the in-domain core cells of the neighborhood
    block whose parents do not yet reproduce the coarser spline space.
    Mutates and returns `marks`.
    """
    if cell.level < 1:
        raise ValueError("mark_recursive needs a cell of level >= 1")
    marks = MarkSet.coerce(marks)
    if _visited is None:
        _visited = set()
    if cell in _visited:
        return marks
    _visited.add(cell)
    l = cell.level
    block = cellgeo.neighborhood(cell, mesh.degree, mesh.grid(l - 1))
    for qi in sorted(hi.omega_of_set(block, mesh.degree, mesh.n0, query_level=l)):
        par = cellgeo.parent(qi)
        if not mesh.cell_in_omega(par, l - 1):
            mark_recursive(mesh, par, marks, _visited)
    for q in sorted(block):
        if mesh.cell_is_active(q):
            marks.add(q)
    return marks


def weakly_admissible_marking_recursive(mesh, marks):
    """Recursive implementation of the marking method: seed mark_recursive
    from the children of M1 and from M2, finest level first."""
    marks = MarkSet.coerce(marks)
    ok, report = hi.is_weakly_admissible(mesh)
    if not ok:
        raise NotWeaklyAdmissibleError("mesh is not weakly admissible at %r" % (report,))
    if not hi.is_clustered(mesh):
        raise NotClusteredError("marking method requires a clustered hierarchy")
    m1, m2 = update_marked_elements(mesh, marks)
    out = MarkSet()
    visited = set()
    for l in range(mesh.depth, 0, -1):
        seeds = set()
        for q in m1.cells(l - 1):
            seeds |= cellgeo.children(q)
        seeds |= m2.cells(l)
        for q in sorted(seeds):
            mark_recursive(mesh, q, out, visited)
    return out


def sa2_marking(mesh, marks, m=2):
    """Strictly admissible marking baseline: recursively refine the coarse
    active cells overlapping the support extension chain before each marked
    cell, so the refined mesh keeps strict admissibility of class m."""
    marks = MarkSet.coerce(marks)
    _check_marks_active(mesh, marks)
    if not hi.is_strictly_admissible(mesh, m):
        raise NotStrictlyAdmissibleError("input mesh is not strictly admissible of class %d" % m)
    p = mesh.degree
    d = mesh.dim
    top = max(marks.levels(), default=0)
    work = [mk.copy() for mk in mesh.h.masks]
    while len(work) <= top + 1:
        l = len(work)
        work.append(np.zeros((mesh.grid(l - 1),) * d, bool))

    def region_has(level, cell):
        # cell.level == granularity of work[level] storage
        return bool(work[level][cell.k]) if level < len(work) else False

    def is_active_now(cell):
        l = cell.level
        if l == 0:
            inside = True
        else:
            inside = region_has(l, cellgeo.parent(cell)) if l - 1 >= 0 else False
            # work[l] is stored at granularity l-1; the cell is inside iff
            # its parent pixel is set
        return inside and not (l + 1 < len(work) and work[l + 1][cell.k])

    def refine(cell):
        l = cell.level
        if l + 1 < len(work) and work[l + 1][cell.k]:
            return  # already refined
        k = l - m + 1
        if k >= 0:
            # class-m neighbors: active level-k cells meeting the clipped
            # support extension of the level-(k+1) ancestor
            anc = cellgeo.parent(cell, l - (k + 1)) if l > k + 1 else cell
            ext = cellgeo.support_extension(anc, p, mesh.grid(k + 1))
            for r in sorted({cellgeo.parent(c) for c in ext}):
                if is_active_now(r):
                    refine(r)
        while len(work) <= l + 1:
            j = len(work)
            work.append(np.zeros((mesh.grid(j - 1),) * d, bool))
        work[l + 1][cell.k] = True

    for c in marks.all_cells():
        refine(c)

    out = MarkSet()
    for l in range(1, len(work)):
        orig = mesh.h.masks[l] if l < mesh.depth else np.zeros_like(work[l])
        for c in hi.cells_from_mask(work[l] & ~orig, l - 1):
            out.add(c)
    return out


class ComplexityLedger:
    """Per-iteration growth accounting against the refinement bound.

    The constants come from the formulas c_tilde = (3/2) sqrt(d) (2p+1) and
    c_bound = 4 (4 c_tilde + 1)^d; they are never hard-coded.
    """

    def __init__(self, dim, degree):
        self.dim = dim
        self.degree = degree
        self.rows = []

    @property
    def c_tilde(self):
        return 1.5 * math.sqrt(self.dim) * (2 * self.degree + 1)

    @property
    def c_bound(self):
        return 4.0 * (4.0 * self.c_tilde + 1.0) ** self.dim

    def record(self, marked, cells_before, cells_after):
        self.rows.append(
            {"marked": int(marked), "cells_before": int(cells_before), "cells_after": int(cells_after)}
        )

    def bound_ratio(self, upto=None):
        rows = self.rows if upto is None else self.rows[: upto + 1]
        total_marked = sum(r["marked"] for r in rows)
        if total_marked == 0:
            return 0.0
        growth = rows[-1]["cells_after"] - rows[0]["cells_before"]
        return growth / (self.c_bound * total_marked)


def complexity_report(ledger):
    """Totals, the theorem bound and their ratio for a completed ledger."""
    if not ledger.rows:
        raise ValueError("empty ledger")
    growth = ledger.rows[-1]["cells_after"] - ledger.rows[0]["cells_before"]
    total_marked = sum(r["marked"] for r in ledger.rows)
    rhs = ledger.c_bound * total_marked
    return {
        "iterations": len(ledger.rows),
        "growth": growth,
        "total_marked": total_marked,
        "c_tilde": ledger.c_tilde,
        "c_bound": ledger.c_bound,
        "bound_rhs": rhs,
        "ratio": (growth / rhs) if total_marked else 0.0,
        "ok": growth <= rhs or total_marked == 0,
    }
