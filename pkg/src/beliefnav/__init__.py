"""Competence-aware path planning with Bayesian failure beliefs.

The library plans over directed topological maps with a stochastic
shortest path model whose transition probabilities come from per-edge
failure beliefs, maintained online as log-odds Bayesian filters fed by
perception consensus triggers and intervention signals. A seeded
deployment simulator benchmarks the belief-driven planner against
frequentist, competence-unaware, and oracle baselines.
"""

from .belief import BeliefPrior, FailureBelief, Intervention, Perception, init_beliefs
from .envgen import EnvParams, generate_environment
from .failures import FailureClass, FailureKind, FailureTaxonomy, default_taxonomy
from .metrics import Metrics, compute_metrics, emit_report
from .predictor import (
    CompetenceEstimate,
    Detection,
    FrameEstimate,
    PredictorConfig,
    PredictorState,
    ingest_frame,
)
from .sensor_sim import (
    Hazard,
    RngStream,
    SensorFidelity,
    SimEnvironment,
    frames_for_traversal,
    intervention_for_failure,
    load_environment,
    save_environment,
)
from .simulate import (
    AgentKind,
    DeploymentLog,
    EpisodeLog,
    SimConfig,
    Task,
    frequentist_estimate,
    generate_tasks,
    load_deployment_log,
    run_deployment,
    run_task,
)
from .ssp import (
    CostParams,
    FailureState,
    NodeState,
    Policy,
    Recover,
    SspModel,
    Traverse,
    build_ssp,
    expected_cost,
    value_iteration,
)
from .topo_map import Edge, TopoMap, load_map, save_map

__version__ = "0.1.0"
