"""Cooperative covariance-based activity detection for cell-free random access.

A library plus simulator and CLI covering the full pipeline: network and
signal synthesis, the decentralized proximal-splitting detector, the
tree-coded unsourced codec built on top of it, convergence diagnostics, and a
seeded Monte-Carlo sweep harness.
"""

from .covariance import (
    CovarianceModel,
    GradientSample,
    coordinate_gradient,
    downdate,
    full_gradient,
    ml_cost,
    probabilistic_gradient,
    rank1_update,
)
from .diagnostics import (
    ConvergenceTrace,
    bregman_divergence,
    check_step_band,
    convergence_trace,
    estimate_lipschitz,
    lyapunov,
    rate_check,
    reference_solution,
)
from .errors import (
    CadError,
    ConfigurationError,
    DomainError,
    NumericalDomainError,
    TrialAbort,
)
from .experiments import (
    ExperimentConfig,
    RunRecord,
    compute_aer,
    desk_sourced,
    desk_unsourced,
    run_sweep,
)
from .network import (
    ActivityPattern,
    NetworkTopology,
    ReceivedSignal,
    SignatureMatrix,
    TopologyConfig,
    build_topology,
    generate_signatures,
    sample_activity,
    sample_covariance,
    synthesize_received,
    true_state_vector,
)
from .regularizers import (
    SubgradientBank,
    similarity_prox,
    similarity_value,
    sparsity_prox_step,
    sparsity_value,
    update_aggregate_subgradient,
    update_neighbor_subgradient,
)
from .solver import (
    ApSolverState,
    DetectionProblem,
    RoundTrace,
    SolverConfig,
    SolverResult,
    adaptive_combiners,
    adaptive_step,
    ap_iteration,
    exchange_round,
    run,
    threshold_activity,
)
from .unsourced import (
    MessageList,
    TreeCodeConfig,
    UnsourcedMetrics,
    inner_decode,
    select_active_slots,
    synthesize_subblock,
    tree_decode,
    tree_encode,
    unsourced_metrics,
)

__version__ = "0.1.0"
