"""Meshfree geometric multilevel solver for surface Poisson problems on point clouds.

Setting ``MGM_THREADS`` before the first import caps the BLAS, OpenMP and
numba thread pools.  It has no effect once numpy has been imported by
someone else.
"""

import os as _os

_threads = _os.environ.get("MGM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .coarsen import hierarchy_sizes, wse_coarsen  # noqa: E402
from .discretize import (DiscretizationConfig, ShiftedOperator, StencilError, assemble_lbo,  # noqa: E402
                         gfd_weights, poisson_operator, rbffd_weights, shifted_operator, stencil_radii)
from .geometry import (KdTree, PointCloud, StencilSet, build_stencils, cyclide_nodes,  # noqa: E402
                       estimate_normals, icosahedral_sphere_nodes, knn, load_cloud, save_cloud,
                       tangent_projection)
from .krylov import KrylovBreakdown, LinearOperator, bicgstab_right, gmres_right, mgm_preconditioner  # noqa: E402
from .linalg import (Permutation, SingularMatrixError, dense_lu_factor, dense_lu_solve, gs_sweep,  # noqa: E402
                     permute, rcm_ordering, spmm, spmv, transpose)
from .mgm import (ConstrainedSystem, Hierarchy, Level, MgmConfig, SetupError, augment_poisson,  # noqa: E402
                  setup, solve_standalone, vcycle)
from .report import SolveReport  # noqa: E402
from .transfer import TransferPair, build_interpolation  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConstrainedSystem", "DiscretizationConfig", "Hierarchy", "KdTree", "KrylovBreakdown", "Level",
    "LinearOperator", "MgmConfig", "Permutation", "PointCloud", "SetupError", "ShiftedOperator",
    "SingularMatrixError", "SolveReport", "StencilError", "StencilSet", "TransferPair",
    "assemble_lbo", "augment_poisson", "bicgstab_right", "build_interpolation", "build_stencils",
    "cyclide_nodes", "dense_lu_factor", "dense_lu_solve", "estimate_normals", "gfd_weights",
    "gmres_right", "gs_sweep", "hierarchy_sizes", "icosahedral_sphere_nodes", "knn", "load_cloud",
    "mgm_preconditioner", "permute", "poisson_operator", "rbffd_weights", "rcm_ordering",
    "save_cloud", "setup", "shifted_operator", "solve_standalone", "spmm", "spmv", "stencil_radii",
    "tangent_projection", "transpose", "vcycle", "wse_coarsen",
]
