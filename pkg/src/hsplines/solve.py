"""Galerkin solvers on hierarchical spline spaces and the adaptive loop.

Two model problems: global L2 projection and the Poisson equation with
Dirichlet data imposed weakly (symmetric Nitsche terms).  Per-cell error
indicators feed a maximum marking strategy, refinement goes through either
the weakly admissible marking closure or the strict class-2 closure, and
run_adaptive_loop records error decay indices between consecutive meshes.

All assembly loops walk mesh.active_cells() in its deterministic order and
use no randomness, so repeated runs give bit-identical results.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from hsplines import cells as cg
from hsplines import hierarchy as hi
from hsplines import quasi as qi
from hsplines import refine as rf
from hsplines.hbasis import HBBasis, SplineField


class SingularSystemError(RuntimeError):
    """Galerkin matrix could not be factorized or solved accurately."""


class PenaltyTooSmallError(RuntimeError):
    """Nitsche bilinear form failed the cheap coercivity probe."""


# The residual estimator drops inter-element flux jumps.  For degree >= 2
# the discrete space is C^1 across every cell interface (each basis
# function is a plain B-spline of its level), so the jump terms vanish and
# the element residual is the whole standard estimator.  The tag marks the
# indicator as reconstructed rather than pinned by a reference table.
RESIDUAL_ESTIMATOR_TAG = "reconstructed-estimator"


def _tensor_rule(g, d):
    """Tensor Gauss rule on the unit d-cube: points (g^d, d), weights (g^d,)."""
    x, w = qi.gauss_rule_01(g)
    pts = np.stack(np.meshgrid(*[x] * d, indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.ones(1)
    for _ in range(d):
        wts = np.kron(wts, w)
    return pts, wts


def _cell_points(mesh, cell, t):
    n = mesh.grid(cell.level)
    return (np.asarray(cell.k, float) + t) / n


def _assemble(basis, pairs, g):
    """Sparse Galerkin matrix sum over `pairs` of int D^a u D^b v dx.

    pairs is a list of (alpha_test, alpha_trial) multi-indices; g is the
    number of Gauss points per axis and per cell.
    """
    mesh = basis.mesh
    d = basis.dim
    t, w = _tensor_rule(g, d)
    rows, cols, data = [], [], []
    for cell in mesh.active_cells():
        vol = (1.0 / mesh.grid(cell.level)) ** d
        entries = basis.cell_dofs(cell)
        idx = np.array([e[0] for e in entries])
        local = np.zeros((len(entries), len(entries)))
        cache = {}
        for aa, ab in pairs:
            for al in (aa, ab):
                if al not in cache:
                    cache[al] = basis.eval_on_cell(cell, t, alpha=al, entries=entries)[1]
            local += (cache[aa] * w) @ cache[ab].T * vol
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        data.append(local.ravel())
    n = basis.n_dofs
    mat = sps.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsc()


def assemble_rhs(basis, f, g):
    """Load vector b_i = int f beta_i dx with g Gauss points per axis."""
    mesh = basis.mesh
    d = basis.dim
    t, w = _tensor_rule(g, d)
    b = np.zeros(basis.n_dofs)
    for cell in mesh.active_cells():
        vol = (1.0 / mesh.grid(cell.level)) ** d
        entries, vals = basis.eval_on_cell(cell, t)
        idx = np.array([e[0] for e in entries])
        fv = np.asarray(f(_cell_points(mesh, cell, t)), float)
        b[idx] += (vals @ (w * fv)) * vol
    return b


def _direct_solve(mat, b, label):
    try:
        lu = spla.splu(mat.tocsc())
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SingularSystemError("%s matrix is singular" % label) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("%s matrix is singular" % label)
    resid = np.linalg.norm(mat @ x - b)
    if resid > 1e-8 * (np.linalg.norm(b) + 1.0):
        raise SingularSystemError(
            "%s solve left residual %.3e" % (label, resid)
        )
    return x


def l2_projection(f, mesh, basis=None):
    """Galerkin L2 projection of f onto the hierarchical spline space."""
    if basis is None:
        basis = HBBasis(mesh)
    p = basis.degree
    d = basis.dim
    zero = (0,) * d
    mass = _assemble(basis, [(zero, zero)], p + 1)
    b = assemble_rhs(basis, f, p + 3)
    coef = _direct_solve(mass, b, "mass")
    return SplineField(basis, coef)


def _nitsche_terms(basis, g_fun, penalty):
    """Boundary face contributions of the symmetric Nitsche form.

    Returns (matrix, rhs) to be added to the volume stiffness and load.
    Face-wise penalty is penalty * (p+1)^2 / h with h the face diameter.
    """
    mesh = basis.mesh
    p = basis.degree
    x, w = qi.gauss_rule_01(p + 3)
    rows, cols, data = [], [], []
    r = np.zeros(basis.n_dofs)
    for cell in mesh.active_cells():
        n = mesh.grid(cell.level)
        h = 1.0 / n
        gamma = penalty * (p + 1) ** 2 / h
        for axis in range(2):
            for side in (0, 1):
                if cell.k[axis] != (0 if side == 0 else n - 1):
                    continue
                t = np.empty((len(x), 2))
                t[:, axis] = float(side)
                t[:, 1 - axis] = x
                entries = basis.cell_dofs(cell)
                idx = np.array([e[0] for e in entries])
                v = basis.eval_on_cell(cell, t, entries=entries)[1]
                alpha = (1, 0) if axis == 0 else (0, 1)
                dv = basis.eval_on_cell(cell, t, alpha=alpha, entries=entries)[1]
                dn = dv if side == 1 else -dv
                # -int dn(u) v - int u dn(v) + gamma int u v  over the face
                m_uv = (v * w) @ v.T * h
                m_dn = (dn * w) @ v.T * h
                local = -(m_dn + m_dn.T) + gamma * m_uv
                rows.append(np.repeat(idx, len(idx)))
                cols.append(np.tile(idx, len(idx)))
                data.append(local.ravel())
                if g_fun is not None:
                    gv = np.asarray(g_fun(_cell_points(mesh, cell, t)), float)
                    r[idx] += (gamma * v - dn) @ (w * gv) * h
    nd = basis.n_dofs
    if not rows:
        return sps.csc_matrix((nd, nd)), r
    mat = sps.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nd, nd),
    )
    return mat.tocsc(), r


def _coercivity_probe(mat, n_probes=16):
    """Cheap indefiniteness check: diagonal plus seeded random Rayleigh
    quotients.  Catches a grossly undersized Nitsche penalty; it is not a
    certificate of coercivity."""
    diag = mat.diagonal()
    if diag.min() <= 0.0:
        return False
    rng = np.random.default_rng(0)
    for _ in range(n_probes):
        x = rng.standard_normal(mat.shape[0])
        if x @ (mat @ x) <= 0.0:
            return False
    return True


def solve_poisson(f, mesh, basis=None, g=None, penalty=10.0):
    """Galerkin solve of -lap(u) = f on the unit square.

    Dirichlet data g (None means homogeneous) enters through symmetric
    Nitsche terms, so no basis function is eliminated at the boundary.
    """
    if basis is None:
        basis = HBBasis(mesh)
    if basis.dim != 2:
        raise ValueError("the Poisson driver is two-dimensional")
    p = basis.degree
    stiff = _assemble(basis, [((1, 0), (1, 0)), ((0, 1), (0, 1))], p + 1)
    b = assemble_rhs(basis, f, p + 3)
    bmat, br = _nitsche_terms(basis, g, penalty)
    mat = (stiff + bmat).tocsc()
    b = b + br
    if not _coercivity_probe(mat):
        raise PenaltyTooSmallError(
            "Nitsche form is not positive definite; raise the penalty"
        )
    coef = _direct_solve(mat, b, "stiffness")
    return SplineField(basis, coef)


def estimate_l2(f, field, gpts=None):
    """Per-cell indicators E_Q = ||f - s||_{L2(Q)} over the active cells."""
    basis = field.basis
    mesh = basis.mesh
    d = basis.dim
    t, w = _tensor_rule(gpts if gpts is not None else basis.degree + 3, d)
    est = {}
    for cell in mesh.active_cells():
        vol = (1.0 / mesh.grid(cell.level)) ** d
        entries, vals = basis.eval_on_cell(cell, t)
        s = field.coefficients[[e[0] for e in entries]] @ vals
        fv = np.asarray(f(_cell_points(mesh, cell, t)), float)
        err2 = float(((fv - s) ** 2 * w).sum() * vol)
        est[cell] = float(np.sqrt(max(err2, 0.0)))
    return est


def estimate_residual(f, field, gpts=None):
    """Per-cell indicators E_Q = h_Q ||f + lap(u_h)||_{L2(Q)}.

    Element residual only; see RESIDUAL_ESTIMATOR_TAG.
    """
    basis = field.basis
    mesh = basis.mesh
    d = basis.dim
    t, w = _tensor_rule(gpts if gpts is not None else basis.degree + 3, d)
    coef = field.coefficients
    est = {}
    for cell in mesh.active_cells():
        n = mesh.grid(cell.level)
        vol = (1.0 / n) ** d
        entries = basis.cell_dofs(cell)
        idx = [e[0] for e in entries]
        lap = np.zeros(t.shape[0])
        for axis in range(d):
            alpha = tuple(2 if j == axis else 0 for j in range(d))
            lap += coef[idx] @ basis.eval_on_cell(cell, t, alpha=alpha, entries=entries)[1]
        fv = np.asarray(f(_cell_points(mesh, cell, t)), float)
        r2 = float(((fv + lap) ** 2 * w).sum() * vol)
        est[cell] = float(np.sqrt(max(r2, 0.0)) / n)
    return est


def sum_estimators(estimates):
    """Root sum of squares of the per-cell indicators."""
    return float(np.sqrt(sum(e * e for e in estimates.values())))


def mark_maximum(estimates, theta):
    """Maximum strategy: mark every cell with E_Q >= theta * max E.

    theta = 1 selects exactly the cells attaining the maximum; theta -> 0+
    selects every cell with a positive indicator.  Marks are invariant
    under scaling all indicators by a positive constant.
    """
    if not estimates:
        raise ValueError("empty estimator map")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    mx = max(estimates.values())
    marks = rf.MarkSet()
    for cell, e in estimates.items():
        if e > 0.0 and e >= theta * mx:
            marks.add(cell)
    return marks


def aggregate_support(estimates, basis):
    """Per-function totals E_beta = sqrt(sum of E_Q^2 over Q in supp beta).

    Every dof returned by cell_dofs(Q) contains the whole of Q in its
    support (supports are unions of cells of the dof's own level), and no
    finer active function can overlap a coarser active cell, so the sum
    over cell_dofs is complete.
    """
    agg = np.zeros(basis.n_dofs)
    for cell, e in estimates.items():
        for dof, _, _ in basis.cell_dofs(cell):
            agg[dof] += e * e
    return np.sqrt(agg)


def _active_in(mesh, cell):
    """Active cells covering a (possibly deactivated) cell of any level."""
    if mesh.cell_is_active(cell):
        return [cell]
    out = []
    if cell.level + 1 < mesh.depth:
        for child in cg.children(cell):
            if mesh.cell_in_subdomain(child, child.level):
                out.extend(_active_in(mesh, child))
    return out


def mark_support_aggregated(estimates, basis, theta):
    """Support-aggregated maximum marking.

    Selects basis functions with E_beta >= theta * max E_beta and marks
    every active cell inside the support of each selected function.
    """
    if not estimates:
        raise ValueError("empty estimator map")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    agg = aggregate_support(estimates, basis)
    mx = agg.max()
    mesh = basis.mesh
    marks = rf.MarkSet()
    for dof in np.flatnonzero((agg > 0.0) & (agg >= theta * mx)):
        level, anchor = basis.dof_anchor(dof)
        for sup in basis.support_cells(level, anchor):
            for cell in _active_in(mesh, sup):
                marks.add(cell)
    return marks


def error_indices(e0, e1, dofs0, dofs1):
    """Decay indices between consecutive meshes, in base 10.

    I_err = log10(e0 / e1); I_eff = I_err / log10(dofs1 / dofs0).
    """
    if e0 <= 0.0 or e1 <= 0.0:
        raise ValueError("errors must be positive")
    if dofs1 <= dofs0:
        raise ValueError("refinement must increase the dof count")
    i_err = float(np.log10(e0 / e1))
    i_eff = float(i_err / np.log10(dofs1 / dofs0))
    return i_err, i_eff


@dataclass
class LoopRecord:
    """One row of the adaptive loop history.

    marked_error is the error restricted to the region marked at this
    iteration; i_err and i_eff compare it against the error over the same
    region after the refinement step.  The final record has no marking
    step, so those fields are None.  sum_estimators is the root sum of
    squares of the per-cell indicators.
    """

    iteration: int
    method: str
    dofs: int
    n_active: int
    global_error: float
    marked_error: Optional[float]
    i_err: Optional[float]
    i_eff: Optional[float]
    sum_estimators: float


@dataclass
class LoopResult:
    records: list
    meshes: list
    fields: list


def _require_admissible(mesh, method):
    if method == "wa":
        ok, report = hi.is_weakly_admissible(mesh)
        if not ok:
            raise rf.NotWeaklyAdmissibleError(str(report))
        if not hi.is_clustered(mesh):
            raise rf.NotWeaklyAdmissibleError("mesh subdomains are not clustered")
    elif method == "sa2":
        if not hi.is_strictly_admissible(mesh, 2):
            raise rf.NotStrictlyAdmissibleError("mesh is not strictly admissible of class 2")
    else:
        raise ValueError("method must be 'wa' or 'sa2'")


def _solve_state(problem, mesh):
    basis = HBBasis(mesh)
    if problem.kind == "l2":
        field = l2_projection(problem.f, mesh, basis)
        est = estimate_l2(problem.f, field)
    else:
        field = solve_poisson(problem.f, mesh, basis, g=problem.u)
        est = estimate_residual(problem.f, field)
    return basis, field, est


def _region_error(problem, field, region):
    """Error of the current solution over an arbitrary cell region.

    L2 norm of the data misfit for projection problems, energy seminorm of
    the solution error for Poisson.  The region may contain cells that are
    no longer active, which is exactly the case when re-measuring the
    marked region on the refined mesh.
    """
    mesh = field.basis.mesh
    p = field.basis.degree
    exact = problem.exact
    if problem.kind == "l2":
        return qi.qi_error(exact, field, region, n0=mesh.n0, gpts=p + 3)
    tot = 0.0
    for axis in range(field.basis.dim):
        alpha = tuple(1 if j == axis else 0 for j in range(field.basis.dim))
        tot += qi.qi_error(exact, field, region, alpha=alpha, n0=mesh.n0, gpts=p + 3) ** 2
    return float(np.sqrt(tot))


def global_error(problem, field):
    """Error of the solution over the whole domain (see _region_error)."""
    return _region_error(problem, field, field.basis.mesh.active_cells())


def run_adaptive_loop(problem, mesh=None, method="wa", theta=0.5, max_iter=8,
                      estimator="element", degree=3, n0=8, ledger=None):
    """Solve / estimate / mark / refine, recording decay indices.

    The initial mesh must satisfy the admissibility notion of the chosen
    method (weakly admissible and clustered for 'wa', strictly admissible
    of class 2 for 'sa2'), and every intermediate mesh is re-checked.
    max_iter = 0 records the initial state and stops.  Returns a
    LoopResult with max_iter + 1 records and the mesh/field per iteration.
    """
    if mesh is None:
        mesh = hi.HierarchicalMesh.uniform(2, degree, n0)
    if estimator not in ("element", "support-aggregated"):
        raise ValueError("estimator must be 'element' or 'support-aggregated'")
    _require_admissible(mesh, method)
    basis, field, est = _solve_state(problem, mesh)
    records = []
    meshes = [mesh]
    fields = [field]
    for it in range(max_iter):
        if estimator == "element":
            marks = mark_maximum(est, theta)
        else:
            marks = mark_support_aggregated(est, basis, theta)
        region = marks.all_cells()
        e0 = _region_error(problem, field, region)
        if method == "wa":
            closed = rf.adaptive_refinement_marks(mesh, marks)
        else:
            closed = rf.sa2_marking(mesh, marks, m=2)
        new_mesh = rf.refine_hierarchical_mesh(mesh, closed)
        _require_admissible(new_mesh, method)
        new_basis, new_field, new_est = _solve_state(problem, new_mesh)
        e1 = _region_error(problem, new_field, region)
        i_err, i_eff = error_indices(e0, e1, basis.n_dofs, new_basis.n_dofs)
        records.append(LoopRecord(
            iteration=it,
            method=method,
            dofs=basis.n_dofs,
            n_active=mesh.n_active(),
            global_error=global_error(problem, field),
            marked_error=e0,
            i_err=i_err,
            i_eff=i_eff,
            sum_estimators=sum_estimators(est),
        ))
        if ledger is not None:
            ledger.record(marks.total(), mesh.n_active(), new_mesh.n_active())
        mesh, basis, field, est = new_mesh, new_basis, new_field, new_est
        meshes.append(mesh)
        fields.append(field)
    records.append(LoopRecord(
        iteration=max_iter,
        method=method,
        dofs=basis.n_dofs,
        n_active=mesh.n_active(),
        global_error=global_error(problem, field),
        marked_error=None,
        i_err=None,
        i_eff=None,
        sum_estimators=sum_estimators(est),
    ))
    return LoopResult(records=records, meshes=meshes, fields=fields)
