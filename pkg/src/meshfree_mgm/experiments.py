"""Experiment drivers: iteration tables, accuracy studies and convergence curves.

Every CSV writes floats with ``%.17g`` and a '.' decimal point, so numeric
columns other than the wall-clock timings are reproducible from the run
arguments and seed.  Random right-hand sides are uniform on ``[-1, 1]``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .discretize import DiscretizationConfig, assemble_lbo, poisson_operator, shifted_operator
from .geometry import PointCloud, cyclide_nodes, icosahedral_sphere_nodes, load_cloud
from .krylov import KrylovBreakdown, bicgstab_right, gmres_right, mgm_preconditioner
from .mgm import Hierarchy, MgmConfig, augment_poisson, setup, solve_standalone
from .report import SolveReport

log = logging.getLogger(__name__)

SOLVERS = ("mgm", "mgm-gmres", "mgm-bicgstab", "gmres", "bicgstab")
PROBLEMS = ("shifted", "poisson")
METHODS = ("rbf-fd", "gfd")
RHS_DISTRIBUTION = "uniform[-1,1]"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def y54(points: np.ndarray) -> np.ndarray:
    """The spherical harmonic ``z (x^4 - 6 x^2 y^2 + y^4)``, eigenvalue -30."""
    x, y, z = points.T
    return z * (x**4 - 6 * x**2 * y**2 + y**4)


# surfaces ------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSpec:
    """Parsed ``sphere:k=5``, ``cyclide:n=8192,seed=7`` or ``file:path``."""

    kind: str
    k: int | None = None
    n: int | None = None
    seed: int | None = None
    path: str | None = None

    @classmethod
    def parse(cls, text: str) -> SurfaceSpec:
        kind, _, rest = text.partition(":")
        if kind == "file":
            if not rest:
                raise ValueError("file surface needs a path, e.g. file:cloud.xyz")
            return cls("file", path=rest)
        opts = {}
        for item in filter(None, rest.split(",")):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"malformed surface option {item!r} in {text!r}")
            try:
                opts[key.strip()] = int(val)
            except ValueError:
                raise ValueError(f"surface option {key!r} must be an integer, got {val!r}") from None
        if kind == "sphere":
            if set(opts) != {"k"}:
                raise ValueError(f"sphere surface takes exactly k=<refinement>, got {text!r}")
            if opts["k"] < 0:
                raise ValueError("sphere refinement k must be nonnegative")
            return cls("sphere", k=opts["k"])
        if kind == "cyclide":
            if set(opts) != {"n", "seed"}:
                raise ValueError(f"cyclide surface needs n=<points>,seed=<int>, got {text!r}")
            if opts["n"] < 12:
                raise ValueError("cyclide needs at least 12 points")
            return cls("cyclide", n=opts["n"], seed=opts["seed"])
        raise ValueError(f"unknown surface {kind!r}; expected sphere, cyclide or file")

    def __str__(self) -> str:
        if self.kind == "sphere":
            return f"sphere:k={self.k}"
        if self.kind == "cyclide":
            return f"cyclide:n={self.n},seed={self.seed}"
        return f"file:{self.path}"

    def build(self) -> PointCloud:
        if self.kind == "sphere":
            return icosahedral_sphere_nodes(self.k)
        if self.kind == "cyclide":
            return cyclide_nodes(self.n, self.seed)
        return load_cloud(self.path)


def sphere_refinement(n: int) -> int:
    """Inverse of ``N = 10 4^k + 2``."""
    for k in range(16):
        if 10 * 4**k + 2 == n:
            return k
    raise ValueError(f"{n} is not an icosahedral node count 10*4^k+2")


# single runs ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """One solve; all fields are validated on construction."""

    surface: str
    method: str = "rbf-fd"
    ell: int = 3
    problem: str = "shifted"
    mu: float = 1.0
    solver: str = "mgm-gmres"
    tol: float = 1e-12
    maxit: int = 200
    seed: int | None = 0
    out: str | None = None
    alpha: float = 4.0
    restart: int | None = None
    n_min: int = 250
    rhs: str = "random"

    def __post_init__(self):
        SurfaceSpec.parse(self.surface)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.rhs not in ("random", "y54"):
            raise ValueError(f"rhs must be 'random' or 'y54', got {self.rhs!r}")
        if self.rhs == "y54" and SurfaceSpec.parse(self.surface).kind != "sphere":
            raise ValueError("the Y_5^4 right-hand side is only defined on the sphere")
        if self.rhs == "random" and self.seed is None:
            raise ValueError("a seed is required for a random right-hand side")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValueError("tol must be positive")
        if self.maxit < 0:
            raise ValueError("maxit must be nonnegative")
        if self.mu < 0 or not math.isfinite(self.mu):
            raise ValueError("mu must be nonnegative")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be positive")
        DiscretizationConfig(self.method, self.ell, gfd_alpha=self.alpha)
        MgmConfig(n_min=self.n_min)

    @property
    def discretization(self) -> DiscretizationConfig:
        return DiscretizationConfig(self.method, self.ell, gfd_alpha=self.alpha)

    def operator_key(self) -> tuple:
        return (self.surface, self.method, self.ell, self.alpha, self.problem, self.mu, self.n_min)


@dataclass
class ResultRow:
    surface: str
    N: int
    ell: int
    method: str
    problem: str
    solver: str
    iterations: int
    final_residual: float
    setup_seconds: float
    solve_seconds: float
    error_2norm: float | None = None
    converged: bool = False
    status: str = ""

    def csv_values(self) -> list[str]:
        return [fmt(getattr(self, f.name)) for f in fields(self)]


ROW_FIELDS = [f.name for f in fields(ResultRow)]


@dataclass
class Problem:
    """Assembled system plus the (lazily built) hierarchy for one operator key."""

    cloud: PointCloud
    system: sp.csr_array  # bordered in Poisson mode
    mode: str
    hierarchy: Hierarchy | None = None
    assemble_seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.cloud)


def build_problem(spec: ExperimentSpec, cloud: PointCloud | None = None) -> Problem:
    cloud = SurfaceSpec.parse(spec.surface).build() if cloud is None else cloud
    t0 = time.perf_counter()
    D = assemble_lbo(cloud, spec.discretization)
    if spec.problem == "poisson":
        L = poisson_operator(D).matrix
        system = augment_poisson(L).matrix
    else:
        L = shifted_operator(D, spec.mu).matrix
        system = L
    return Problem(cloud, system, spec.problem, assemble_seconds=time.perf_counter() - t0,
                   extras={"L": L})


def ensure_hierarchy(prob: Problem, n_min: int = 250) -> Hierarchy:
    if prob.hierarchy is None:
        prob.hierarchy = setup(prob.extras["L"], prob.cloud, MgmConfig(n_min=n_min), prob.mode)
    return prob.hierarchy


def right_hand_side(spec: ExperimentSpec, prob: Problem) -> tuple[np.ndarray, np.ndarray | None]:
    """Right-hand side of ``prob.system`` and the exact solution when known."""
    N = prob.n
    exact = None
    if spec.rhs == "y54":
        ue = y54(prob.cloud.points)
        f = (1.0 + 30.0 * spec.mu) * ue if spec.problem == "shifted" else -30.0 * ue
        exact = ue
    else:
        f = np.random.default_rng(spec.seed).uniform(-1.0, 1.0, N)
    if spec.problem == "poisson":
        f = np.append(f, 0.0)
    return f, exact


def solution_error(u: np.ndarray, exact: np.ndarray, poisson: bool) -> float:
    """Relative 2-norm error; for Poisson both means are removed first."""
    u = u[: exact.shape[0]]
    if poisson:
        u = u - u.mean()
        exact = exact - exact.mean()
    return float(np.linalg.norm(u - exact) / np.linalg.norm(exact))


def solve(spec: ExperimentSpec, prob: Problem, f: np.ndarray,
          x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport, float]:
    """Run ``spec.solver``; returns ``(x, report, setup_seconds)``."""
    setup_seconds = 0.0
    M = None
    if spec.solver.startswith("mgm"):
        h = ensure_hierarchy(prob, spec.n_min)
        setup_seconds = h.setup_time
        M = mgm_preconditioner(h)
    if spec.solver == "mgm":
        x, rep = solve_standalone(prob.hierarchy, f, spec.tol, spec.maxit, x0)
    elif spec.solver in ("mgm-gmres", "gmres"):
        x, rep = gmres_right(prob.system, f, M, spec.tol, spec.maxit, spec.restart, x0)
    else:
        x, rep = bicgstab_right(prob.system, f, M, spec.tol, spec.maxit, x0)
    return x, rep, setup_seconds


def run_single(spec: ExperimentSpec, prob: Problem | None = None
               ) -> tuple[ResultRow, SolveReport | None, np.ndarray | None]:
    """One solve with failures captured in the returned row."""
    N = prob.n if prob is not None else 0
    setup_seconds = 0.0
    try:
        prob = build_problem(spec) if prob is None else prob
        N = prob.n
        f, exact = right_hand_side(spec, prob)
        x, rep, setup_seconds = solve(spec, prob, f)
    except (np.linalg.LinAlgError, RuntimeError, ValueError, MemoryError, OSError) as exc:
        log.error("run %s failed: %s", spec, exc)
        kind = "breakdown" if isinstance(exc, KrylovBreakdown) else "error"
        # nothing was updated, so the iterate is still x0 = 0 with relative residual 1
        row = ResultRow(spec.surface, N, spec.ell, spec.method, spec.problem, spec.solver, 0, 1.0,
                        setup_seconds, 0.0, None, False, f"{kind}: {exc}")
        return row, None, None
    final = rep.final_residual
    status = rep.status
    if not math.isfinite(final):
        finite = [r for r in rep.residual_history if math.isfinite(r)]
        final = finite[-1] if finite else 1.0
        status = "diverged"
    err = solution_error(x, exact, spec.problem == "poisson") if exact is not None else None
    row = ResultRow(spec.surface, N, spec.ell, spec.method, spec.problem, spec.solver, rep.iterations,
                    final, setup_seconds, rep.wall_time, err, rep.converged, status)
    return row, rep, x


# tables --------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Cartesian product of surfaces, degrees, methods and solvers."""

    surfaces: tuple[str, ...] = ()
    ells: tuple[int, ...] = (3,)
    methods: tuple[str, ...] = ("rbf-fd",)
    solvers: tuple[str, ...] = ("mgm-gmres",)
    problem: str = "shifted"
    mu: float = 1.0
    tol: float = 1e-12
    maxit: int = 200
    seed: int = 0
    alpha: float = 4.0
    restart: int | None = None
    n_min: int = 250

    def specs(self) -> list[ExperimentSpec]:
        """All combinations, validated up front, in a deterministic order."""
        out = []
        for surf, method, ell, solver in itertools.product(self.surfaces, self.methods, self.ells, self.solvers):
            out.append(ExperimentSpec(surf, method, ell, self.problem, self.mu, solver, self.tol, self.maxit,
                                      self.seed, None, self.alpha, self.restart, self.n_min))
        return out


def _run_group(specs: list[ExperimentSpec], history_dir: str | None):
    rows = []
    prob = None
    cloud = None
    failure = None
    try:
        cloud = SurfaceSpec.parse(specs[0].surface).build()
        prob = build_problem(specs[0], cloud)
    except (np.linalg.LinAlgError, RuntimeError, ValueError, MemoryError, OSError) as exc:
        failure = exc
    for spec in specs:
        if failure is not None:
            rows.append(ResultRow(spec.surface, len(cloud) if cloud is not None else 0, spec.ell, spec.method,
                                  spec.problem, spec.solver, 0, 1.0, 0.0, 0.0, None, False,
                                  f"error: {failure}"))
            continue
        row, rep, _ = run_single(spec, prob)
        rows.append(row)
        if history_dir is not None and rep is not None:
            Path(history_dir).mkdir(parents=True, exist_ok=True)
            emit_convergence_curves(rep, Path(history_dir) / f"{run_label(spec)}.csv")
    return rows


def run_label(spec: ExperimentSpec) -> str:
    surf = str(spec.surface).replace(":", "_").replace(",", "_").replace("=", "").replace("/", "_")
    return f"{surf}_{spec.method}_l{spec.ell}_{spec.problem}_{spec.solver}"


def run_iteration_table(grid: GridSpec, out=None, history_dir: str | None = None,
                        jobs: int = 1) -> list[ResultRow]:
    """Run every grid combination and write one CSV row per run.

    Runs sharing an operator reuse its assembly and hierarchy.  With
    ``jobs > 1`` operator groups run in separate processes; rows are merged
    back into grid order.
    """
    specs = grid.specs()
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(specs):
        groups.setdefault(s.operator_key(), []).append(i)
    ordered = sorted(groups.items(), key=lambda kv: kv[1][0])
    results: dict[int, ResultRow] = {}
    if jobs > 1 and len(ordered) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(idx, pool.submit(_run_group, [specs[i] for i in idx], history_dir)) for _, idx in ordered]
            for idx, fut in futures:
                results.update(zip(idx, fut.result()))
    else:
        for _, idx in ordered:
            results.update(zip(idx, _run_group([specs[i] for i in idx], history_dir)))
    rows = [results[i] for i in range(len(specs))]
    if out is not None:
        write_rows(out, ROW_FIELDS, [r.csv_values() for r in rows])
    return rows


def write_rows(out, header: list[str], rows: list[list[str]]) -> None:
    """Write CSV to a path or a text stream."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_rows(fh, header, rows)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def rows_to_csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    write_rows(buf, header, rows)
    return buf.getvalue()


# accuracy ------------------------------------------------------------------


@dataclass
class AccuracyRow:
    N: int
    ell: int
    method: str
    cap: int
    iterations: int
    final_residual: float
    error_2norm: float
    converged: bool

    def csv_values(self) -> list[str]:
        return [fmt(getattr(self, f.name)) for f in fields(self)]


ACCURACY_FIELDS = [f.name for f in fields(AccuracyRow)]


def run_accuracy_study(ells, sizes, caps, method: str = "rbf-fd", tol: float = 1e-12, alpha: float = 4.0,
                       out=None) -> list[AccuracyRow]:
    """Sphere Poisson with ``f = -30 Y_5^4`` solved by MGM GMRES capped at each count.

    Every capped run starts from zero, so the ``cap``-th row is exactly the
    iterate GMRES holds after ``cap`` iterations.
    """
    ks = [sphere_refinement(int(n)) for n in sizes]
    caps = [int(c) for c in caps]
    if any(c < 0 for c in caps):
        raise ValueError("iteration caps must be nonnegative")
    rows = []
    for ell in ells:
        for k in ks:
            spec = ExperimentSpec(f"sphere:k={k}", method, int(ell), "poisson", 0.0, "mgm-gmres", tol,
                                  max(caps, default=0), None, None, alpha, rhs="y54")
            prob = build_problem(spec)
            f, exact = right_hand_side(spec, prob)
            for cap in caps:
                capped = ExperimentSpec(spec.surface, method, int(ell), "poisson", 0.0, "mgm-gmres", tol, cap,
                                        None, None, alpha, rhs="y54")
                x, rep, _ = solve(capped, prob, f)
                rows.append(AccuracyRow(prob.n, int(ell), method, cap, rep.iterations, rep.final_residual,
                                        solution_error(x, exact, True), rep.converged))
    if out is not None:
        write_rows(out, ACCURACY_FIELDS, [r.csv_values() for r in rows])
    return rows


# curves and metadata -------------------------------------------------------


def emit_convergence_curves(report: SolveReport, out=None) -> str:
    """Two-column ``iteration, relative_residual`` CSV of a run's history."""
    rows = [[str(i), fmt(r)] for i, r in enumerate(report.residual_history)]
    text = rows_to_csv(["iteration", "relative_residual"], rows)
    if out is not None:
        Path(out).write_text(text)
    return text


def versions() -> dict:
    import numba
    import scipy

    return {"meshfree_mgm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_metadata(path, config: dict) -> Path:
    """JSON sidecar next to a CSV: ``table.csv`` gets ``table.json``."""
    path = Path(path)
    side = path.with_suffix(".json") if path.suffix != ".json" else path
    meta = {"config": config, "rhs_distribution": RHS_DISTRIBUTION, "versions": versions()}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return side


def spec_dict(obj) -> dict:
    return asdict(obj)
