"""Command line driver: mesh inspection, experiment runs, SVG renderings,
and convergence tables.

Heavy modules are imported inside the command handlers so that the thread
environment (HSPLINES_THREADS) is applied before numpy loads its BLAS.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field


def _setup_threads():
    t = os.environ.get("HSPLINES_THREADS")
    if t:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, t)


def _schema(name):
    import importlib.resources as res

    with res.files("hsplines.schemas").joinpath(name).open() as fh:
        return json.load(fh)


def _read_json(path, schema_name):
    import jsonschema

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError("cannot read %s: %s" % (path, exc))
    try:
        jsonschema.validate(doc, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise CliError("%s does not match %s: %s" % (path, schema_name, exc.message))
    return doc


class CliError(Exception):
    """Bad input reported to the user without a traceback."""


def load_mesh(path):
    from hsplines import hierarchy as hi

    doc = _read_json(path, "mesh.schema.json")
    return hi.HierarchicalMesh(hi.SubdomainHierarchy.from_json(doc))


@dataclass
class RunConfig:
    """Experiment description; defaults follow the reference setups."""

    problem: str
    expression: str = None
    dim: int = 2
    degree: int = 3
    n0: int = 8
    theta: float = 0.5
    method: str = "wa"
    estimator: str = "element"
    max_iter: int = 8
    seed: int = 0
    output: str = "hsplines-run"
    initial_mesh: str = None

    @classmethod
    def from_file(cls, path):
        doc = _read_json(path, "config.schema.json")
        cfg = cls(**doc)
        if cfg.problem == "custom" and not cfg.expression:
            raise CliError("custom problem needs an 'expression' entry")
        return cfg

    def canonical(self):
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self):
        return hashlib.sha1(self.canonical().encode()).hexdigest()


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.12g" % value
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_check(args):
    from hsplines import hierarchy as hi

    mesh = load_mesh(args.mesh)
    weak, report = hi.is_weakly_admissible(mesh)
    m = args.strict if args.strict is not None else 2
    strict = hi.is_strictly_admissible(mesh, m)
    clustered = hi.is_clustered(mesh)
    print("mesh: dim %d degree %d coarse %d depth %d, %d active cells"
          % (mesh.dim, mesh.degree, mesh.n0, mesh.depth, mesh.n_active()))
    print("weakly admissible: %s" % ("yes" if weak else "no (%s)" % (report,)))
    print("strictly admissible (m=%d): %s" % (m, "yes" if strict else "no"))
    print("clustered: %s" % ("yes" if clustered else "no"))
    print("approximation powers:")
    for cell in mesh.active_cells():
        power = hi.approximation_power(mesh, cell)
        print("  level %d cell %s: %d" % (cell.level, tuple(cell.k), power))
    failed = []
    if args.weak and not weak:
        failed.append("weak")
    if args.strict is not None and not strict:
        failed.append("strict(%d)" % m)
    if args.clustered and not clustered:
        failed.append("clustered")
    if failed:
        print("FAILED: %s" % ", ".join(failed))
        return 1
    return 0


def cmd_render(args):
    from hsplines import refine as rf
    from hsplines.render_svg import render_mesh_svg

    mesh = load_mesh(args.mesh)
    overlay = None
    if args.overlay:
        doc = _read_json(args.overlay, "marks.schema.json")
        overlay = rf.MarkSet.from_json(doc)
    try:
        svg = render_mesh_svg(mesh, overlay)
    except ValueError as exc:
        raise CliError(str(exc))
    with open(args.output, "w") as fh:
        fh.write(svg)
    print("wrote %s" % args.output)
    return 0


RESULT_COLUMNS = ("iter", "method", "dofs", "n_active", "global_error",
                  "marked_error", "I_err", "I_eff", "sum_estimators")


def cmd_run(args):
    from hsplines import hierarchy as hi
    from hsplines import problems as pb
    from hsplines import solve as sv
    from hsplines.render_svg import render_mesh_svg

    cfg = RunConfig.from_file(args.config)
    problem = pb.make_problem(cfg.problem, cfg.expression)
    if cfg.initial_mesh:
        mesh = load_mesh(cfg.initial_mesh)
    else:
        mesh = hi.HierarchicalMesh.uniform(cfg.dim, cfg.degree, cfg.n0)
    res = sv.run_adaptive_loop(problem, mesh=mesh, method=cfg.method,
                               theta=cfg.theta, max_iter=cfg.max_iter,
                               estimator=cfg.estimator)
    os.makedirs(cfg.output, exist_ok=True)
    rows = [(r.iteration, r.method, r.dofs, r.n_active, r.global_error,
             r.marked_error, r.i_err, r.i_eff, r.sum_estimators)
            for r in res.records]
    _write_csv(os.path.join(cfg.output, "results.csv"), RESULT_COLUMNS, rows)
    for i, m in enumerate(res.meshes):
        m.h.dump(os.path.join(cfg.output, "mesh_%03d.json" % i))
        with open(os.path.join(cfg.output, "mesh_%03d.svg" % i), "w") as fh:
            fh.write(render_mesh_svg(m))
    manifest = asdict(cfg)
    manifest["config_hash"] = cfg.config_hash()
    manifest["records"] = len(res.records)
    if cfg.estimator == "support-aggregated" or cfg.problem.startswith("poisson"):
        manifest["estimator_note"] = sv.RESIDUAL_ESTIMATOR_TAG
    with open(os.path.join(cfg.output, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print("wrote %d records to %s" % (len(res.records), cfg.output))
    return 0


CONVERGENCE_COLUMNS = ("family", "operator", "depth", "dofs", "h",
                       "L2_error", "L2_EOC", "H1_seminorm_error", "H1_EOC",
                       "exact")


def _wahm_sequence(f, degree, n0, theta, count):
    """Adaptive weakly admissible meshes driven by local interpolation error."""
    from hsplines import hierarchy as hi
    from hsplines import quasi as qi
    from hsplines import refine as rf
    from hsplines import solve as sv

    mesh = hi.HierarchicalMesh.uniform(2, degree, n0)
    out = [mesh]
    for _ in range(count - 1):
        s = qi.multilevel_qi(f, mesh)
        est = {q: qi.qi_error(f, s, [q], n0=mesh.n0, gpts=degree + 3)
               for q in mesh.active_cells()}
        marks = sv.mark_maximum(est, theta)
        mesh = rf.refine_hierarchical_mesh(
            mesh, rf.adaptive_refinement_marks(mesh, marks))
        out.append(mesh)
    return out


def cmd_convergence(args):
    import numpy as np

    from hsplines import hierarchy as hi
    from hsplines import problems as pb
    from hsplines import quasi as qi
    from hsplines import solve as sv
    from hsplines.hbasis import HBBasis

    cfg = RunConfig.from_file(args.config)
    problem = pb.make_problem(cfg.problem, cfg.expression)
    f = problem.exact
    p = cfg.degree
    count = max(cfg.max_iter, 2)
    uniform = [hi.HierarchicalMesh.uniform(2, p, cfg.n0, levels=lv)
               for lv in range(1, count + 1)]
    graded = _wahm_sequence(f, p, cfg.n0, cfg.theta, count)
    rows = []
    for family, meshes in (("uniform", uniform), ("wahm", graded)):
        for op in ("qi", "l2"):
            prev = None
            for mesh in meshes:
                s = (qi.multilevel_qi(f, mesh) if op == "qi"
                     else sv.l2_projection(f, mesh))
                act = mesh.active_cells()
                el2 = qi.qi_error(f, s, act, n0=mesh.n0, gpts=p + 3)
                eh1 = np.sqrt(
                    qi.qi_error(f, s, act, alpha=(1, 0), n0=mesh.n0, gpts=p + 3) ** 2
                    + qi.qi_error(f, s, act, alpha=(0, 1), n0=mesh.n0, gpts=p + 3) ** 2)
                h = 1.0 / mesh.grid(mesh.depth - 1)
                exact = "exact" if max(el2, eh1) < 1e-12 else ""
                eoc_l2 = eoc_h1 = None
                if prev is not None and prev[0] > h and not exact:
                    scale = np.log(prev[0] / h)
                    if prev[1] > 0 and el2 > 0:
                        eoc_l2 = float(np.log(prev[1] / el2) / scale)
                    if prev[2] > 0 and eh1 > 0:
                        eoc_h1 = float(np.log(prev[2] / eh1) / scale)
                rows.append((family, op, mesh.depth, HBBasis(mesh).n_dofs, h,
                             el2, eoc_l2, eh1, eoc_h1, exact))
                prev = (h, el2, eh1)
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "convergence.csv")
    _write_csv(path, CONVERGENCE_COLUMNS, rows)
    print("wrote %s" % path)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="hsplines",
        description="hierarchical spline meshes: inspection and experiments")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="verify admissibility predicates")
    c.add_argument("mesh", help="mesh JSON file")
    c.add_argument("--weak", action="store_true",
                   help="require weak admissibility")
    c.add_argument("--strict", type=int, metavar="M", default=None,
                   help="require strict admissibility of class M")
    c.add_argument("--clustered", action="store_true",
                   help="require clustered subdomains")
    c.set_defaults(fn=cmd_check)

    r = sub.add_parser("run", help="run an adaptive experiment")
    r.add_argument("config", help="run configuration JSON file")
    r.set_defaults(fn=cmd_run)

    d = sub.add_parser("render", help="draw a mesh as SVG")
    d.add_argument("mesh", help="mesh JSON file")
    d.add_argument("--overlay", help="marks JSON file to shade", default=None)
    d.add_argument("-o", "--output", required=True, help="output SVG path")
    d.set_defaults(fn=cmd_render)

    v = sub.add_parser("convergence", help="EOC tables on mesh sequences")
    v.add_argument("config", help="run configuration JSON file")
    v.set_defaults(fn=cmd_convergence)
    return p


def main(argv=None):
    _setup_threads()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # invariant violations from the library
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
