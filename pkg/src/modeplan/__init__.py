"""Multi-modal game-theoretic trajectory planning.

Enumerates the local generalized Nash equilibria (interaction modes) of
constrained two-agent trajectory games by filtering an optimization-as-
inference reformulation, clustering the filtered trajectories, and refining
one representative per cluster; the resulting mode library then drives an
online, partner-adaptive model-predictive planner.
"""
from .clustering import (
    Cluster,
    ClusterConfig,
    ModeSet,
    cluster_modes,
    discrete_frechet,
    pairwise_distances,
    position_layout,
)
from .filtering import (
    FilterConfig,
    FilterResult,
    Particle,
    UkfConfig,
    implicit_sample,
    run_filter,
    ukf_moments,
    ukf_step,
)
from .game import (
    AgentSpec,
    ConfigurationError,
    GameSpec,
    JointTrajectory,
    NumericError,
    PotentialProblem,
    assemble_potential,
    eval_agent_cost,
    eval_constraints,
    eval_potential,
    rollout,
)
from .planner import (
    BaselineResult,
    InteractionLog,
    ModeBelief,
    MpcConfig,
    MpcStep,
    baseline_random_init,
    enumerate_modes,
    mode_belief_update,
    mode_follower_policy,
    mpc_step,
    simulate_interaction,
)
from .refine import (
    EquilibriumSet,
    GneCertificate,
    RefinedEquilibrium,
    RefinerConfig,
    check_local_gne,
    dedup_equilibria,
    solve_constrained,
)
from .scenarios import (
    ScenarioConfig,
    UnicycleState,
    build_scenario,
    constraint_stack,
    load_scenario,
    preset,
    save_scenario,
    unicycle_step,
)
from .virtual import (
    BarrierConfig,
    VirtualModel,
    build_virtual_model,
    negative_log_posterior,
    softplus_barrier,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "BarrierConfig",
    "BaselineResult",
    "Cluster",
    "ClusterConfig",
    "ConfigurationError",
    "EquilibriumSet",
    "FilterConfig",
    "FilterResult",
    "GameSpec",
    "GneCertificate",
    "InteractionLog",
    "JointTrajectory",
    "ModeBelief",
    "ModeSet",
    "MpcConfig",
    "MpcStep",
    "NumericError",
    "Particle",
    "PotentialProblem",
    "RefinedEquilibrium",
    "RefinerConfig",
    "ScenarioConfig",
    "UkfConfig",
    "UnicycleState",
    "VirtualModel",
    "assemble_potential",
    "baseline_random_init",
    "build_scenario",
    "build_virtual_model",
    "check_local_gne",
    "cluster_modes",
    "constraint_stack",
    "dedup_equilibria",
    "discrete_frechet",
    "enumerate_modes",
    "eval_agent_cost",
    "eval_constraints",
    "eval_potential",
    "implicit_sample",
    "load_scenario",
    "mode_belief_update",
    "mode_follower_policy",
    "mpc_step",
    "negative_log_posterior",
    "pairwise_distances",
    "position_layout",
    "preset",
    "rollout",
    "run_filter",
    "save_scenario",
    "simulate_interaction",
    "softplus_barrier",
    "solve_constrained",
    "ukf_moments",
    "ukf_step",
    "unicycle_step",
]
