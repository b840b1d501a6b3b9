"""Manufactured experiment problems and the graded meshes they run on.

Targets are wrapped sympy expressions so that exact derivatives of any order
are available for error norms, Sobolev seminorms and Poisson right-hand
sides without hand-coded formulas.
"""

import numpy as np

from . import hierarchy as hi
from . import refine as rf

_ALLOWED_FUNCTIONS = ("sin", "cos", "exp", "atan", "sqrt")


class ExactFunction:
    """Smooth closed-form function with derivative dispatch.

    f(pts) evaluates at an (n, d) point array; f(pts, alpha) evaluates
    D^alpha f.  Lambdified derivatives are cached per multi-index.
    """

    def __init__(self, expr, variables=None):
        import sympy as sp

        self.expr = expr
        if variables is None:
            variables = sp.symbols("x y")
        self.variables = tuple(variables)
        self._cache = {}

    @property
    def dim(self):
        return len(self.variables)

    def derivative(self, alpha):
        key = tuple(int(a) for a in alpha)
        if key not in self._cache:
            import sympy as sp

            e = self.expr
            for v, k in zip(self.variables, key):
                if k:
                    e = sp.diff(e, v, k)
            self._cache[key] = sp.lambdify(self.variables, e, modules="numpy")
        return self._cache[key]

    def __call__(self, pts, alpha=None):
        pts = np.atleast_2d(np.asarray(pts, float))
        if alpha is None:
            alpha = (0,) * self.dim
        fn = self.derivative(alpha)
        out = np.asarray(fn(*(pts[:, i] for i in range(self.dim))), float)
        if out.ndim == 0:
            out = np.full(len(pts), float(out))
        return out


def parse_expression(text):
    """ExactFunction from a small arithmetic grammar: + - * / ^, the
    functions sin cos exp atan sqrt, and the variables x y."""
    import sympy as sp
    from sympy.parsing.sympy_parser import (convert_xor, parse_expr,
                                            standard_transformations)

    xs, ys = sp.symbols("x y")
    local = {"x": xs, "y": ys}
    local.update({name: getattr(sp, name) for name in _ALLOWED_FUNCTIONS})
    # bare number/name constructors the tokenizer emits; anything else is out
    numbers = {n: getattr(sp, n) for n in ("Integer", "Float", "Rational", "Symbol", "Function")}
    try:
        expr = parse_expr(
            text,
            local_dict=local,
            global_dict=numbers,
            transformations=standard_transformations + (convert_xor,),
        )
    except Exception as exc:
        raise ValueError("cannot parse expression %r: %s" % (text, exc))
    if not isinstance(expr, sp.Expr):
        raise ValueError("expression %r is not arithmetic" % text)
    if not expr.free_symbols <= {xs, ys}:
        extra = expr.free_symbols - {xs, ys}
        raise ValueError("unknown symbols in expression: %r" % (extra,))
    allowed = (sp.sin, sp.cos, sp.exp, sp.atan)  # sqrt parses into Pow
    for node in expr.atoms(sp.Function):
        if not isinstance(node, allowed):
            raise ValueError("function not allowed: %s" % node.func)
    return ExactFunction(expr, (xs, ys))


class Problem:
    """An experiment target: either an L2-projection of `f`, or the Poisson
    problem -lap(u) = f with Dirichlet data g = u restricted to the boundary
    (manufactured from the exact solution `u`)."""

    def __init__(self, name, kind, f, u=None):
        assert kind in ("l2", "poisson")
        self.name = name
        self.kind = kind
        self.f = f
        self.u = u

    @property
    def exact(self):
        """The function the discrete solution is compared against."""
        return self.f if self.kind == "l2" else self.u


def make_problem(name, expression=None):
    import sympy as sp

    x, y = sp.symbols("x y")
    if name == "l2-arctan":
        return Problem(name, "l2", ExactFunction(sp.atan(25 * (x - y)), (x, y)))
    if name == "l2-gauss":
        expr = sp.exp(-((x - sp.Rational(1, 2)) ** 2 + (y - sp.Rational(1, 2)) ** 2)
                      / (2 * sp.Rational(1, 10) ** 2))
        return Problem(name, "l2", ExactFunction(expr, (x, y)))
    if name == "poisson-arctan":
        u = sp.atan(25 * (x - y))
        f = sp.simplify(-(sp.diff(u, x, 2) + sp.diff(u, y, 2)))
        return Problem(name, "poisson",
                       ExactFunction(f, (x, y)), ExactFunction(u, (x, y)))
    if name == "custom":
        if not expression:
            raise ValueError("custom problem needs an expression")
        return Problem("custom", "l2", parse_expression(expression))
    raise ValueError("unknown problem %r" % name)


PROBLEM_NAMES = ("l2-arctan", "l2-gauss", "poisson-arctan", "custom")


def diagonal_cells(mesh, width=1):
    """Active cells within `width` index steps of the line x = y."""
    out = []
    for c in mesh.active_cells():
        if abs(c.k[0] - c.k[1]) <= width:
            out.append(c)
    return out


def diagonal_band_mesh(degree, n0=8, rounds=2):
    """Graded mesh refined along the diagonal x = y, the layer location of
    the arctan targets.  Depth is rounds + 1.

    The band is wide enough (three cells to each side of the diagonal per
    round) that the result is strictly admissible of class 2 as well as
    clustered and weakly admissible, so it can seed either refinement
    method in a side-by-side comparison."""
    mesh = hi.HierarchicalMesh.uniform(2, degree, n0)
    for _ in range(rounds):
        marks = rf.adaptive_refinement_marks(mesh, diagonal_cells(mesh, width=2))
        mesh = rf.refine_hierarchical_mesh(mesh, marks)
    assert hi.is_weakly_admissible(mesh)[0] and hi.is_clustered(mesh)
    assert hi.is_strictly_admissible(mesh, 2)
    return mesh
