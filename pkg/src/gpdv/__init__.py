"""Per-datum data valuation for Gaussian-process regression.

Core pieces: bordered Kriging systems with O(k^2) add/remove inverse
updates, an integrated-variance cache that rides those updates, and
leave-one-out / Shapley valuation built on top, with a benchmark
harness and CLI around them.
"""

from .errors import (
    AssemblyError,
    IngestError,
    InputError,
    NumericalBreakdownError,
)
from .gp import (
    BorderedSystem,
    Prediction,
    assemble,
    condition_1norm,
    empty_system,
    loo_residual_system,
    predict,
    predict_means,
    residual_variances,
)
from .harness import (
    Dataset,
    RemovalCurve,
    gen_synthetic_sinus,
    ingest_csv,
    removal_benchmark,
    split,
)
from .incremental import (
    IncrementalState,
    QuadratureSet,
    ResetPolicy,
    add_point,
    condition_estimate,
    grid_quadrature,
    initial_state,
    integrated_variance,
    integrated_variance_of,
    iv_step,
    points_quadrature,
    rebuild,
)
from .kernels import KernelSpec, TrendBasis, eval_kernel, gram, kernel_matrix
from .valuation import (
    IntegratedVarianceUtility,
    TestMSEUtility,
    ValuationReport,
    loo_values,
    normalize,
    shapley_exact,
    shapley_mc,
    spearman,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "BorderedSystem",
    "Dataset",
    "IncrementalState",
    "IngestError",
    "InputError",
    "IntegratedVarianceUtility",
    "KernelSpec",
    "NumericalBreakdownError",
    "Prediction",
    "QuadratureSet",
    "RemovalCurve",
    "ResetPolicy",
    "TestMSEUtility",
    "TrendBasis",
    "ValuationReport",
    "add_point",
    "assemble",
    "condition_1norm",
    "condition_estimate",
    "empty_system",
    "eval_kernel",
    "gen_synthetic_sinus",
    "gram",
    "grid_quadrature",
    "ingest_csv",
    "initial_state",
    "integrated_variance",
    "integrated_variance_of",
    "iv_step",
    "kernel_matrix",
    "loo_residual_system",
    "loo_values",
    "normalize",
    "points_quadrature",
    "predict",
    "predict_means",
    "rebuild",
    "removal_benchmark",
    "residual_variances",
    "shapley_exact",
    "shapley_mc",
    "spearman",
    "split",
]
