"""Shared randomized generators for hierarchies, meshes and mark sets."""

import numpy as np
import pytest

from hsplines import hierarchy as hi
from hsplines.cells import Cell


def random_clustered_hierarchy(rng, dim=2, degree=3, n0=8, depth=4, max_seeds=4):
    """Clustered-by-construction hierarchy: each new subdomain is a union of
    clipped neighborhoods of next-level cells whose neighborhood already fits
    inside the previous subdomain."""
    masks = [np.ones((n0,) * dim, bool)]
    for l in range(1, depth):
        prev = masks[l - 1] if l == 1 else hi.up(masks[l - 1])
        cand = ~hi.dilate_box(hi.up(~prev), degree)
        seeds = np.argwhere(cand)
        if len(seeds) == 0:
            break
        n_coarse = prev.shape[0]
        new = np.zeros_like(prev)
        for _ in range(int(rng.integers(1, max_seeds + 1))):
            k = seeds[rng.integers(len(seeds))]
            sl = tuple(
                slice(max((c - degree) >> 1, 0), min((c + degree) >> 1, n_coarse - 1) + 1)
                for c in k
            )
            new[sl] = True
        masks.append(new)
    return hi.SubdomainHierarchy(dim, degree, n0, masks)


def random_plain_hierarchy(rng, dim=2, degree=3, n0=8, depth=4):
    """Arbitrary nested hierarchy: random unions of cells of the previous
    subdomain, with no clusteredness or admissibility guarantees."""
    masks = [np.ones((n0,) * dim, bool)]
    for l in range(1, depth):
        prev = masks[l - 1] if l == 1 else hi.up(masks[l - 1])
        pix = np.argwhere(prev)
        count = int(rng.integers(1, max(2, len(pix) // 3) + 1))
        pick = pix[rng.choice(len(pix), size=min(count, len(pix)), replace=False)]
        new = np.zeros_like(prev)
        for k in pick:
            new[tuple(k)] = True
        masks.append(new)
    return hi.SubdomainHierarchy(dim, degree, n0, masks)


def random_sa2_hierarchy(rng, dim=2, degree=2, n0=8, depth=4):
    """Strictly admissible (class 2) by construction: each Omega_l is drawn
    from the omega region of the previous level."""
    masks = [np.ones((n0,) * dim, bool)]
    for l in range(1, depth):
        prev = masks[l - 1] if l == 1 else hi.up(masks[l - 1])
        allowed = np.argwhere(hi.erode_box(prev, degree))
        if len(allowed) == 0:
            break
        count = int(rng.integers(1, max(2, len(allowed) // 2) + 1))
        pick = allowed[rng.choice(len(allowed), size=min(count, len(allowed)), replace=False)]
        new = np.zeros_like(prev)
        for k in pick:
            new[tuple(k)] = True
        masks.append(new)
    return hi.SubdomainHierarchy(dim, degree, n0, masks)


def refined_wahm_mesh(rng, dim=2, degree=3, n0=8, rounds=3, max_cells=3):
    """Weakly admissible clustered mesh built by running the marking method
    itself for a few rounds from the uniform mesh.  The verdicts used by the
    tests still come from the independent predicates."""
    from hsplines import refine as rf

    mesh = hi.HierarchicalMesh.uniform(dim, degree, n0)
    for _ in range(rounds):
        marks = random_marks(rng, mesh, max_cells=max_cells)
        mesh = rf.refine_hierarchical_mesh(mesh, rf.adaptive_refinement_marks(mesh, marks))
    assert hi.is_weakly_admissible(mesh)[0] and hi.is_clustered(mesh)
    return mesh


def random_wahm_mesh(rng, dim=2, degree=3, n0=8, depth=4, clustered=True, max_tries=60):
    """A weakly admissible mesh of roughly the requested depth.

    Shallow instances come from rejection-sampling the direct generators;
    deeper clustered ones (where the accept rate collapses) from running
    the refinement method.
    """
    gen = random_clustered_hierarchy if clustered else random_plain_hierarchy
    if not clustered or depth <= 3:
        for _ in range(max_tries):
            mesh = hi.HierarchicalMesh(gen(rng, dim=dim, degree=degree, n0=n0, depth=depth))
            if hi.is_weakly_admissible(mesh)[0]:
                return mesh
        if not clustered:
            raise RuntimeError("no weakly admissible instance found")
    return refined_wahm_mesh(rng, dim=dim, degree=degree, n0=n0, rounds=depth - 1)


def random_marks(rng, mesh, max_cells=4, levels=None):
    """MarkSet-style dict of random active cells, at least one."""
    pool = []
    for l in range(mesh.depth) if levels is None else levels:
        pool.extend(hi.cells_from_mask(mesh.active_mask(l), l))
    count = int(rng.integers(1, max_cells + 1))
    picked = [pool[i] for i in rng.choice(len(pool), size=min(count, len(pool)), replace=False)]
    out = {}
    for c in picked:
        out.setdefault(c.level, set()).add(c)
    return out


def random_cell(rng, dim, level_max=6, span=64):
    level = int(rng.integers(1, level_max + 1))
    k = tuple(int(rng.integers(-span, span)) for _ in range(dim))
    return Cell(level, k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
