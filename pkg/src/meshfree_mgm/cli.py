"""Command-line driver.

Exit codes: 0 success, 1 usage or input error, 2 when any run in a grid
fails or does not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .coarsen import wse_coarsen
from .discretize import DiscretizationConfig, assemble_lbo, shifted_operator
from .geometry import CYCLIDE_A, CYCLIDE_B, CYCLIDE_C, CYCLIDE_D, load_cloud, save_cloud
from .linalg import write_mtx, write_vector

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2

SURFACE_HELP = ("sphere:k=<refinement> (icosahedral, N = 10*4^k+2), cyclide:n=<N>,seed=<int> "
                f"(Dupin ring cyclide a={CYCLIDE_A:g}, b={CYCLIDE_B:g}, c={CYCLIDE_C:.6g}, d={CYCLIDE_D:g}) "
                "or file:<path> (.xyz, .obj, .ply)")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for failed runs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_discretization(p, with_problem=True):
    p.add_argument("--surface", required=True, help=SURFACE_HELP)
    p.add_argument("--method", choices=ex.METHODS, default="rbf-fd")
    p.add_argument("--ell", type=int, default=3, help="polynomial degree (PHS order k = ell)")
    p.add_argument("--alpha", type=float, default=4.0, help="GFD weight shape parameter")
    if with_problem:
        p.add_argument("--problem", choices=ex.PROBLEMS, default="shifted")
        p.add_argument("--mu", type=float, default=1.0, help="shift in I - mu*Laplacian")


def _add_solver(p, solver_list=False):
    if solver_list:
        p.add_argument("--solver", nargs="+", choices=ex.SOLVERS, default=["mgm-gmres"])
    else:
        p.add_argument("--solver", choices=ex.SOLVERS, default="mgm-gmres")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--maxit", type=int, default=200)
    p.add_argument("--restart", type=int, default=None, help="GMRES restart length (default: none)")
    p.add_argument("--seed", type=int, default=0, help="seed of the uniform[-1,1] right-hand side")
    p.add_argument("--n-min", type=int, default=250, help="minimum coarsest-level size")


def build_parser() -> Parser:
    p = Parser(prog="mgm", description="Meshfree geometric multilevel solver experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("nodes", help="generate a point cloud")
    s.add_argument("--surface", required=True, help=SURFACE_HELP)
    s.add_argument("--out", required=True, help="output .xyz (points and normals)")

    s = sub.add_parser("coarsen", help="thin a cloud by weighted sample elimination")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--n", type=int, required=True, help="target number of points")
    s.add_argument("--out", required=True)

    s = sub.add_parser("assemble", help="assemble the discrete Laplace-Beltrami matrix")
    _add_discretization(s, with_problem=False)
    s.add_argument("--mu", type=float, default=None, help="write I - mu*D instead of D")
    s.add_argument("--out", required=True, help="Matrix Market output")

    s = sub.add_parser("solve", help="solve one problem and print its result row as JSON")
    _add_discretization(s)
    _add_solver(s)
    s.add_argument("--rhs", choices=("random", "y54"), default="random")
    s.add_argument("--out", help="write the solution vector (.npy or text)")
    s.add_argument("--history", help="write the residual history CSV")
    s.add_argument("--hierarchy-json", help="write the hierarchy summary JSON")

    s = sub.add_parser("table", help="iteration-count table over a grid")
    s.add_argument("--surface", nargs="+", required=True, help=SURFACE_HELP)
    s.add_argument("--method", nargs="+", choices=ex.METHODS, default=["rbf-fd"])
    s.add_argument("--ell", nargs="+", type=int, default=[3])
    s.add_argument("--alpha", type=float, default=4.0)
    s.add_argument("--problem", choices=ex.PROBLEMS, default="shifted")
    s.add_argument("--mu", type=float, default=1.0)
    _add_solver(s, solver_list=True)
    s.add_argument("--jobs", type=int, default=1, help="worker processes over operator groups")
    s.add_argument("--curves-dir", help="dump one residual-history CSV per run here")
    s.add_argument("--out", required=True, help="output CSV (a .json metadata sidecar is written too)")

    s = sub.add_parser("accuracy", help="error versus capped MGM GMRES iterations on the sphere")
    s.add_argument("--ell", nargs="+", type=int, default=[3, 5])
    s.add_argument("--n", nargs="+", type=int, default=[2562, 10242, 40962], help="icosahedral sphere sizes")
    s.add_argument("--caps", nargs="+", type=int, default=[1, 5, 10, 15, 20, 25, 30])
    s.add_argument("--method", choices=ex.METHODS, default="rbf-fd")
    s.add_argument("--alpha", type=float, default=4.0)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--out", required=True)

    s = sub.add_parser("curves", help="residual history of one run as (iteration, relative residual)")
    _add_discretization(s)
    _add_solver(s)
    s.add_argument("--out", required=True)
    return p


def _spec(args, solver=None, rhs="random") -> ex.ExperimentSpec:
    return ex.ExperimentSpec(args.surface, args.method, args.ell, args.problem, args.mu, solver or args.solver,
                             args.tol, args.maxit, args.seed, getattr(args, "out", None), args.alpha,
                             args.restart, args.n_min, rhs)


def cmd_nodes(args):
    cloud = ex.SurfaceSpec.parse(args.surface).build()
    save_cloud(args.out, cloud)
    print(f"{len(cloud)} points -> {args.out}")
    return EXIT_OK


def cmd_coarsen(args):
    cloud = load_cloud(args.input)
    keep = wse_coarsen(cloud, args.n)
    save_cloud(args.out, cloud.subset(keep))
    print(f"{len(cloud)} -> {len(keep)} points -> {args.out}")
    return EXIT_OK


def cmd_assemble(args):
    cloud = ex.SurfaceSpec.parse(args.surface).build()
    D = assemble_lbo(cloud, DiscretizationConfig(args.method, args.ell, gfd_alpha=args.alpha))
    if args.mu is not None:
        D = shifted_operator(D, args.mu).matrix
    write_mtx(args.out, D)
    print(f"{D.shape[0]}x{D.shape[1]}, nnz {D.nnz} -> {args.out}")
    return EXIT_OK


def cmd_solve(args):
    spec = _spec(args, rhs=args.rhs)
    prob = ex.build_problem(spec)
    row, rep, x = ex.run_single(spec, prob)
    if args.hierarchy_json and prob.hierarchy is not None:
        Path(args.hierarchy_json).write_text(json.dumps(prob.hierarchy.summary(), indent=2, default=str) + "\n")
    if args.history and rep is not None:
        ex.emit_convergence_curves(rep, args.history)
    if args.out and x is not None:
        write_vector(args.out, x)
    print(json.dumps(ex.spec_dict(row)))
    return EXIT_OK if row.converged else EXIT_FAILED


def cmd_table(args):
    grid = ex.GridSpec(tuple(args.surface), tuple(args.ell), tuple(args.method), tuple(args.solver), args.problem,
                       args.mu, args.tol, args.maxit, args.seed, args.alpha, args.restart, args.n_min)
    grid.specs()  # validate everything before computing anything
    rows = ex.run_iteration_table(grid, args.out, args.curves_dir, args.jobs)
    ex.write_metadata(args.out, ex.spec_dict(grid))
    for r in rows:
        print(f"{r.surface:24s} N={r.N:<8d} {r.method:7s} ell={r.ell} {r.solver:13s} "
              f"iters={r.iterations:<4d} res={r.final_residual:.3e} {r.status}")
    return EXIT_OK if all(r.converged for r in rows) else EXIT_FAILED


def cmd_accuracy(args):
    for n in args.n:
        ex.sphere_refinement(n)
    rows = ex.run_accuracy_study(args.ell, args.n, args.caps, args.method, args.tol, args.alpha, args.out)
    ex.write_metadata(args.out, {"ell": args.ell, "n": args.n, "caps": args.caps, "method": args.method,
                                 "alpha": args.alpha, "tol": args.tol, "problem": "poisson", "rhs": "-30*Y54"})
    for r in rows:
        print(f"N={r.N:<8d} ell={r.ell} cap={r.cap:<4d} res={r.final_residual:.3e} err={r.error_2norm:.3e}")
    return EXIT_OK


def cmd_curves(args):
    spec = _spec(args)
    row, rep, _ = ex.run_single(spec)
    if rep is None:
        print(row.status, file=sys.stderr)
        return EXIT_FAILED
    ex.emit_convergence_curves(rep, args.out)
    ex.write_metadata(args.out, ex.spec_dict(spec))
    print(f"{len(rep.residual_history)} entries -> {args.out}")
    return EXIT_OK if row.converged else EXIT_FAILED


COMMANDS = {"nodes": cmd_nodes, "coarsen": cmd_coarsen, "assemble": cmd_assemble, "solve": cmd_solve,
            "table": cmd_table, "accuracy": cmd_accuracy, "curves": cmd_curves}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        # bad specs, unreadable inputs and the like
        print(f"mgm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, RuntimeError, MemoryError) as exc:
        print(f"mgm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
