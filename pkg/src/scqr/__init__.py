"""Sparse convex quantile regression.

Regularized, epsilon-insensitive convex quantile regression fitted by
delayed constraint generation, with cardinality-constrained feature
selection by generalized Benders decomposition and a Hamming-ball local
search.
"""

__version__ = "0.1.0"

from .types import (  # noqa: E402
    CqrModel,
    Dataset,
    DegenerateColumnError,
    InstanceSizeError,
    ParameterError,
    QuantileConfig,
    ScqrError,
    SolveReport,
    SolverError,
    SupportVector,
    Termination,
    pinball_loss,
    standardize,
)
from .qp import QpProblem, QpSolution, QpStatus, solve_lp, solve_qp  # noqa: E402
from .cqr import fit_cqr, predict, primal_infeasibility, quantile_property_check, separate  # noqa: E402
from .benders import (  # noqa: E402
    BendersCut,
    DualSolution,
    GbdState,
    SubproblemOracle,
    WarmStartMode,
    dual_objective,
    eval_subproblem,
    run_gbd,
    solve_master,
    warm_start,
)
from .lsb import LsbSchedule, SelectionResult, run_lsb, select_support  # noqa: E402
from .synth import DgpKind, DgpSpec, Truth, gen_dgp, train_test_split  # noqa: E402
from .evaluation import (  # noqa: E402
    BenchResult,
    CvGrid,
    brute_force_subset,
    cross_validate,
    fdr,
    mae_quantile,
    run_benchmark,
    selection_accuracy,
)
from . import kernels  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
