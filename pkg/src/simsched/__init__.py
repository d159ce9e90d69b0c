"""simsched: learn structural replicas of an expensive stochastic system and
use the replica ensemble as a cheap testbed to learn a phased schedule of
simulation-optimization algorithms before touching the real system.
"""

from . import optimizers as _optimizers  # noqa: F401  (registers baselines)
from .core import (
    AlgoState,
    BudgetLedger,
    CountingSystem,
    DecisionVector,
    Observation,
    StochasticSystem,
    Trajectory,
    algorithm_ids,
    best_so_far,
    negated,
    record_step,
    register_algorithm,
    run_algorithm,
    write_trajectory_csv,
)
from .ensemble import (
    EnsemblePoint,
    EnsembleSystem,
    MetaDataset,
    ReplicaSet,
    build_meta_dataset,
    ensemble_predict,
    importance_weights,
    kl_divergence,
    optimal_weights,
    sample_weights,
    select_top_k,
    stratified_split,
)
from .gp import AcquisitionKind, GPSurrogate, acquisition, gp_fit, gp_posterior, propose_next_bo
from .meta import (
    MetaConfig,
    RevisionHistory,
    RevisionOperator,
    collect_baseline_reference,
    init_schedule,
    learn_schedule,
    llm_revision_operator,
    repair_schedule,
    run_epoch,
    scripted_revision_operator,
)
from .metrics import (
    MetricVector,
    PointSystem,
    ReferenceBank,
    SeedPolicy,
    compute_metrics,
    delta_star,
    heavy_reference,
    robust_range,
    score,
    score_and_log,
)
from .replica import (
    Dataset,
    LatentAssignment,
    ReplicaSystem,
    StructuralModel,
    TrainConfig,
    e_step,
    forward,
    learn_oar,
    m_step,
    stage0_fit,
)
from .schedule import Schedule, execute_schedule, format_schedule, parse_schedule
from .skeleton import (
    Advisor,
    CausalSkeleton,
    DiscoveryHistory,
    VariableSpec,
    compact_history,
    discover_skeleton,
    remote_advisor,
    scripted_advisor,
    try_insert_edge,
)

__version__ = "0.1.0"
