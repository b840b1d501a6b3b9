"""Dyadic cell arithmetic on the unit hypercube.

A cell is identified by ``Cell(level, k)``: the axis-aligned box
``prod_i [k_i * 2^-level, (k_i+1) * 2^-level]`` of the uniform dyadic grid
of its level.  When the coarsest grid has ``n0`` cells per axis, level-l
cells live on a grid with ``n0 * 2^l`` cells per axis and have physical
side ``1 / (n0 * 2^l)``; functions that need the grid bounds take the cell
count per axis explicitly.

Everything here is exact integer arithmetic on index tuples; the bitmap
representation in :mod:`hsplines.hierarchy` is validated against these
functions in the test suite.
"""

import itertools
import math
from typing import NamedTuple


class Cell(NamedTuple):
    level: int
    k: tuple


def _as_cell(cell):
    level, k = cell
    return Cell(int(level), tuple(int(c) for c in k))


def parent(cell, levels=1):
    """Ancestor of the cell ``levels`` grid levels coarser."""
    cell = _as_cell(cell)
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    if cell.level - levels < 0:
        raise ValueError("cell has no ancestor that coarse")
    return Cell(cell.level - levels, tuple(c >> levels for c in cell.k))


def children(cell):
    """The 2^d cells of the next level whose union is the cell."""
    cell = _as_cell(cell)
    d = len(cell.k)
    base = tuple(2 * c for c in cell.k)
    return {
        Cell(cell.level + 1, tuple(b + o for b, o in zip(base, off)))
        for off in itertools.product((0, 1), repeat=d)
    }


def contains(coarse, fine):
    """True if the (coarser or equal) cell ``coarse`` contains ``fine``."""
    coarse, fine = _as_cell(coarse), _as_cell(fine)
    if coarse.level > fine.level:
        return False
    return parent(fine, fine.level - coarse.level) == coarse


def in_grid(cell, n):
    cell = _as_cell(cell)
    return all(0 <= c < n for c in cell.k)


def support_extension_inf(cell, p):
    """Same-level support extension on the unbounded grid.

    All cells within p index steps per axis: the cells meeting the support
    of some degree-p tensor B-spline whose support contains ``cell``.
    Cardinality (2p+1)^d.
    """
    cell = _as_cell(cell)
    rngs = [range(c - p, c + p + 1) for c in cell.k]
    return {Cell(cell.level, k) for k in itertools.product(*rngs)}


def support_extension(cell, p, n):
    """Support extension clipped to the n^d grid of the cell's level."""
    cell = _as_cell(cell)
    rngs = [range(max(c - p, 0), min(c + p + 1, n)) for c in cell.k]
    return {Cell(cell.level, k) for k in itertools.product(*rngs)}


def neighborhood(cell, p, n_coarse=None):
    """Coarse neighborhood: parents of the support extension.

    The level-(l-1) cells ``r`` with ``floor((k_i-p)/2) <= r_i <=
    floor((k_i+p)/2)`` per axis; cardinality (p+1)^d on the unbounded grid
    (p odd).  Pass ``n_coarse`` (cells per axis at level l-1) to clip.
    """
    cell = _as_cell(cell)
    if cell.level == 0:
        raise ValueError("neighborhood is defined for level >= 1")
    rngs = []
    for c in cell.k:
        lo, hi = (c - p) >> 1, (c + p) >> 1
        if n_coarse is not None:
            lo, hi = max(lo, 0), min(hi, n_coarse - 1)
        rngs.append(range(lo, hi + 1))
    return {Cell(cell.level - 1, k) for k in itertools.product(*rngs)}


def support_block(level, anchor, p):
    """Support of the degree-p tensor B-spline with the given anchor:
    the (p+1)^d block of level cells ``anchor + {0..p}^d``."""
    anchor = tuple(int(a) for a in anchor)
    rngs = [range(a, a + p + 1) for a in anchor]
    return {Cell(level, k) for k in itertools.product(*rngs)}


def block_anchor(block, p):
    """Level and anchor of a (p+1)^d support block; raises if the set is
    not translate-congruent to one."""
    block = {_as_cell(c) for c in block}
    if not block:
        raise ValueError("empty cell set")
    levels = {c.level for c in block}
    if len(levels) != 1:
        raise ValueError("block cells must share one level")
    level = levels.pop()
    anchor = tuple(min(c.k[i] for c in block) for i in range(len(next(iter(block)).k)))
    if block != support_block(level, anchor, p):
        raise ValueError("cell set is not a degree-%d B-spline support block" % p)
    return level, anchor


def core(block, p):
    """The 2^d next-level cells canonically attached to a support block.

    For a (p+1)^d block C of level-(l-1) cells with anchor a these are the
    level-l cells ``q`` with ``q_i in {2a_i+p, 2a_i+p+1}``; each has
    neighborhood equal to C and their support extensions tile C.
    """
    level, anchor = block_anchor(block, p)
    d = len(anchor)
    return {
        Cell(level + 1, tuple(2 * a + p + o for a, o in zip(anchor, off)))
        for off in itertools.product((0, 1), repeat=d)
    }


def is_p_form(block, p, n_fine):
    """True if the support block contains the (unclipped) support extension
    of some next-level cell of the n_fine^d domain grid.

    Such a cell is necessarily a core cell of the block, so this reduces to
    a range check on the 2^d core cells.
    """
    return any(in_grid(q, n_fine) for q in core(block, p))


def parent_extension_identity(cell, p):
    """Check that the parent's support extension is the union of the
    coarse neighborhoods of the cells in this cell's support extension
    (unbounded grid)."""
    cell = _as_cell(cell)
    lhs = support_extension_inf(parent(cell), p)
    rhs = set()
    for q in support_extension_inf(cell, p):
        rhs |= neighborhood(q, p)
    return lhs == rhs


def midpoint(cell, n0=1):
    cell = _as_cell(cell)
    h = 1.0 / (n0 * (1 << cell.level))
    return tuple((c + 0.5) * h for c in cell.k)


def distance(cell_a, cell_b, n0=1):
    """Euclidean distance between cell midpoints (physical coordinates)."""
    ma, mb = midpoint(cell_a, n0), midpoint(cell_b, n0)
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(ma, mb)))


def side(cell, n0=1):
    cell = _as_cell(cell)
    return 1.0 / (n0 * (1 << cell.level))
