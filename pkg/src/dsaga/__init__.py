"""SAGA and distributed SAGA with a synchronous cluster simulator,
quadratic-case theory checks and convergence diagnostics."""

from .baselines import gd_run, lbfgs_run, sgd_warmstart
from .cluster import (
    ClusterConfig,
    NodeState,
    SyncMessage,
    dsaga_step,
    local_gradient_pass,
    run_dsaga,
    run_inner_round,
    synchronize,
)
from .data import (
    Dataset,
    Example,
    ParseError,
    Shard,
    dump_libsvm,
    generate_gaussian,
    parse_libsvm,
    partition,
)
from .diagnostics import (
    MetricReport,
    decompose_error,
    rate_report,
    read_csv,
    reference_optimum,
    write_csv,
)
from .losses import (
    GradientStat,
    LeastSquaresLoss,
    LinearPerturbation,
    LogisticLoss,
    QuadraticObjective,
    example_gradient,
    full_gradient,
    objective_value,
    reconstruct_gradient,
    smoothness_constants,
)
from .records import TraceRecord
from .saga import SagaState, init_saga, run_saga, saga_step
from .theory import (
    ShardHessian,
    TheoryParams,
    rho_bound,
    shard_hessians,
    spectral_norm,
    wishart_empirics,
    wishart_limit,
)

__version__ = "0.1.0"
