"""Tabular multivariate distributional RL over energy-distance MMD geometry.

Discrete weighted atom sets represent per-state return distributions;
dynamic programming and TD learning operate on categorical (fixed
support) and equally weighted particle representations, with MMD
projections solved by in-house QP routines.
"""

from .dp import (
    CategoricalEngine,
    DpReport,
    EwpConfig,
    categorical_dp_solve,
    categorical_dp_step,
    ewp_init,
    ewp_random_solve,
    ewp_random_step,
    exact_bellman,
    point_init,
)
from .errors import (
    ConsistencyError,
    InvalidInputError,
    SolverError,
    SupportBlowupError,
)
from .evaluation import (
    MeshReport,
    ScalarDist,
    cramer_distance,
    mc_oracle,
    mc_oracle_fn,
    mesh_and_bound,
    mmd_u_statistic,
    sup_mmd,
    zeroshot_scalar,
)
from .kernels import (
    KernelSpec,
    SemimetricSpec,
    energy_kernel,
    gram,
    kernel_eval,
    mmd,
    mmd_squared,
    semimetric_eval,
)
from .measures import (
    DiscreteMeasure,
    ReturnDistFn,
    SupportMap,
    as_probability,
    categorical,
    empirical,
    mixture,
    pushforward,
    weights_on_support,
)
from .mdp import (
    TabularMDP,
    Transition,
    dsm_mdp,
    random_mdp,
    rng_stream,
    rollout_return,
    rollout_returns,
    sample_transition,
    successor_feature_means,
)
from .projections import (
    ProjectionResult,
    QpProblem,
    SignedProjector,
    SimplexProjector,
    build_qp,
    project_signed,
    project_simplex,
)
from .td import (
    StepSchedule,
    TdReport,
    TdState,
    categorical_td_run,
    categorical_td_step,
    ewp_mmd_sq_gradient,
    ewp_mmd_sq_objective,
    ewp_td_run,
    ewp_td_step,
    init_td_state,
    make_schedule,
    stochastic_backup,
)

__version__ = "0.1.0"
