"""Probabilistic swarm density guidance on a binned workspace.

Each agent independently estimates the swarm distribution by local
averaging, builds a row-stochastic transition matrix whose stationary
distribution is the target density, folds in motion constraints, and moves
by inverse-CDF sampling — so the ensemble converges to, maintains, and
repairs the target formation with few wasted transitions.
"""

__version__ = "0.1.0"

from .consensus import (
    BinGroupedConsensus,
    CommGraph,
    GraphDisconnectedError,
    build_comm_graph,
    disagreement,
    linop_round,
    metropolis_weights,
    required_loops,
    second_singular_value,
)
from .engine import (
    AgentState,
    ConvergencePlan,
    DamageEvent,
    EngineError,
    MonteCarloResult,
    RunResult,
    ScenarioConfig,
    StepMetrics,
    SwarmState,
    baseline_step,
    init_swarm,
    inject_damage,
    lln_check,
    min_agents,
    run,
    run_monte_carlo,
    step,
)
from .grid import (
    Formation,
    FormationError,
    Grid,
    bin_distance,
    check_pi_connectivity,
    load_formation,
    parse_formation_raster,
)
from .guidance import (
    ConstraintMatrix,
    ErgodicityFloor,
    alpha_vector,
    apply_constraints,
    build_markov,
    chain_product,
    ergodicity_floor,
    escape_matrix,
    escape_targets,
    hellinger,
    max_row_l1_to,
    reachability_constraint,
    select_transition,
    trapping_set,
    xi_quantization_floor,
)
from .orbit import (
    OrbitGridAdapter,
    bin_centroid_at,
    orbit_alpha_vector,
    orbit_distances,
)
