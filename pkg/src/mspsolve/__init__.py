"""Randomized multi-level sketched preconditioning for large linear systems.

The library solves regularized positive-definite systems (A + lambda*I)x = b and
general normal-equation systems (A^T A + lambda*I)x = c by building a Nystrom
preconditioner from a sparse random sketch and applying its inverse *inexactly*
through nested levels of sketching, driven by an inexactness-tolerant
preconditioned Lanczos iteration.  On top of the two solvers sit kernel ridge
regression, sketch-and-precondition least squares, a ridge black-box contract
for spectral-sum estimation, and a benchmark / instance-generation CLI.
"""

from .config import Tunables
from .core import (
    MatrixHandle,
    SpectrumSummary,
    as_vector,
    dense_factor_solve,
    effective_dimension,
    matvec,
    norm_in,
    power_method_norm,
)
from .errors import (
    BreakdownError,
    DimensionMismatch,
    DomainError,
    InconsistentEstimate,
    MspError,
    NotPsdError,
    SingularMatrixError,
    SizeGuardError,
    SketchRankCollapse,
)
from .sketch import (
    OseSketch,
    SparseEmbedding,
    make_ose,
    make_sparse_embedding,
    sketch_apply_left,
    sketch_apply_right,
)
from .nystrom import (
    NystromPreconditioner,
    apply_minv_via_formula,
    build_nystrom_psd,
    estimate_lambda0,
    exact_minv_reference,
)
from .lanczos import (
    LanczosWorkspace,
    SolveMContract,
    TridiagonalMatrix,
    preconditioned_lanczos,
    symmetric_lanczos_reference,
    tridiag_solve_e1,
)
from .report import SolveReport
from .psd import PsdSolveConfig, solve_m1_psd, solve_psd
from .general import (
    GeneralMspState,
    GeneralSolveConfig,
    build_general,
    solve_m1_general,
    solve_m2,
    solve_normal,
    solve_normal_given_gram,
)
from .apps import (
    KernelSpec,
    RidgeBlackBox,
    hutchinson_trace,
    kernel_matrix,
    ridge_blackbox_solve,
    solve_krr,
    solve_least_squares,
)
from .instances import InstanceSpec, gen_instance
from .bench import BenchmarkReport, run_compare

__version__ = "0.1.0"

__all__ = [
    "Tunables",
    "MatrixHandle",
    "SpectrumSummary",
    "as_vector",
    "matvec",
    "norm_in",
    "effective_dimension",
    "power_method_norm",
    "dense_factor_solve",
    "MspError",
    "DimensionMismatch",
    "DomainError",
    "SingularMatrixError",
    "NotPsdError",
    "SketchRankCollapse",
    "SizeGuardError",
    "BreakdownError",
    "InconsistentEstimate",
    "SparseEmbedding",
    "OseSketch",
    "make_sparse_embedding",
    "sketch_apply_left",
    "sketch_apply_right",
    "make_ose",
    "NystromPreconditioner",
    "build_nystrom_psd",
    "estimate_lambda0",
    "apply_minv_via_formula",
    "exact_minv_reference",
    "TridiagonalMatrix",
    "LanczosWorkspace",
    "SolveMContract",
    "preconditioned_lanczos",
    "symmetric_lanczos_reference",
    "tridiag_solve_e1",
    "SolveReport",
    "PsdSolveConfig",
    "solve_psd",
    "solve_m1_psd",
    "GeneralMspState",
    "GeneralSolveConfig",
    "build_general",
    "solve_normal",
    "solve_normal_given_gram",
    "solve_m1_general",
    "solve_m2",
    "KernelSpec",
    "RidgeBlackBox",
    "kernel_matrix",
    "solve_krr",
    "solve_least_squares",
    "ridge_blackbox_solve",
    "hutchinson_trace",
    "InstanceSpec",
    "gen_instance",
    "BenchmarkReport",
    "run_compare",
]
