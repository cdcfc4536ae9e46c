"""Distributed GM-PHD multi-target tracking with resilient reconfiguration."""

from .formation import (
    AnnealingSchedule,
    FormationProblem,
    InfeasibleFormationError,
    coverage_objective,
    feasible,
    synthesize,
)
from .fusion import (
    FusionWeights,
    amf_fuse,
    consensus_step,
    fusion_round,
    gmf_component_product,
    gmf_fuse,
    gmr_reduce,
    rescale_to_cardinality,
)
from .metrics import nmse, ospa
from .mixture import (
    GaussianComponent,
    GaussianMixture,
    NotPositiveDefiniteError,
    expected_cardinality,
    mahalanobis_sq,
    merge,
    prune,
    select_tgcs,
)
from .network import (
    NonConvergenceError,
    StrategyInput,
    TeamConfiguration,
    connectivity_lmi,
    enumerate_topologies,
    generate_configuration,
    lemma1_gap,
    metropolis_weights,
    solve_weights,
)
from .phd import BirthModel, MotionModel, SensorModel, innovate, predict
from .scenario import (
    ScenarioConfig,
    TargetTruth,
    TrialLog,
    deteriorate,
    run_trial,
    sense,
    step_targets,
)
from .experiment import (
    ConfigError,
    ExperimentMatrix,
    load_experiment_config,
    plot_aggregates,
    run_matrix,
)

__version__ = "0.1.0"
