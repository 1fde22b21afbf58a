"""End-to-end mode enumeration, the random-restart baseline, and online MPC.

The enumeration pipeline chains the pieces: assemble the potential problem,
build its virtual model, filter for coarse mode estimates, cluster them,
refine one representative per cluster, and deduplicate. The online loop
watches a partner's path, scores it against each mode's partner trajectory
with the Frechet metric, locks a mode once the gap between the two closest
scores exceeds a threshold, and replans against the chosen mode's reference
in a receding horizon.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .clustering import ClusterConfig, cluster_modes, discrete_frechet, position_layout
from .filtering import FilterConfig, run_filter
from .game import (
    AgentSpec,
    ConfigurationError,
    GameSpec,
    JointTrajectory,
    NumericError,
    assemble_potential,
)
from .refine import (
    EquilibriumSet,
    RefinedEquilibrium,
    RefinerConfig,
    dedup_equilibria,
    solve_constrained,
)
from .virtual import BarrierConfig, build_virtual_model

DEFAULT_Q_ETA = 600.0
DEFAULT_DEDUP_DISTANCE = 1.0


def enumerate_modes(
    game: GameSpec,
    filter_cfg: FilterConfig = FilterConfig(),
    cluster_cfg: Optional[ClusterConfig] = None,
    refiner_cfg: RefinerConfig = RefinerConfig(),
    barrier: BarrierConfig = BarrierConfig(),
    q_eta: float = DEFAULT_Q_ETA,
    dedup_distance: float = DEFAULT_DEDUP_DISTANCE,
) -> EquilibriumSet:
    """Enumerate local equilibria: filter, cluster, refine, deduplicate.

    Exactly one refinement runs per surviving cluster. An empty result always
    carries diagnostics explaining which stage came up empty.
    """
    from .serialize import config_hash

    layout = position_layout(game)
    if cluster_cfg is None:
        cluster_cfg = ClusterConfig(layout=layout)
    elif cluster_cfg.layout is None:
        cluster_cfg = replace(cluster_cfg, layout=layout)

    timings: dict[str, float] = {}
    diagnostics: list[str] = []

    pp = assemble_potential(game)
    vm = build_virtual_model(pp, q_eta, barrier)

    tic = time.perf_counter()
    fres = run_filter(vm, filter_cfg)
    timings["filter_s"] = time.perf_counter() - tic
    diagnostics.extend(fres.warnings)

    tic = time.perf_counter()
    modeset = cluster_modes(fres.trajectories, fres.weights, cluster_cfg)
    timings["cluster_s"] = time.perf_counter() - tic
    if len(modeset) == 0:
        diagnostics.append("clustering produced no clusters")

    tic = time.perf_counter()
    refined: list[RefinedEquilibrium] = []
    invocations = 0
    for k, cluster in enumerate(modeset.clusters):
        invocations += 1
        eq = solve_constrained(pp, cluster.representative, refiner_cfg)
        eq.provenance = {
            "warm_start": f"cluster_{k}",
            "cluster_members": len(cluster.members),
            "seed": filter_cfg.seed,
        }
        if eq.converged:
            refined.append(eq)
        else:
            diagnostics.append(
                f"refinement of cluster {k} did not converge "
                f"(violation {eq.max_violation:.2e}, "
                f"stationarity {eq.stationarity.max():.2e})"
            )
    timings["refine_s"] = time.perf_counter() - tic
    if invocations and not refined:
        diagnostics.append("no refinement converged; returning empty mode set")

    result = dedup_equilibria(refined, dedup_distance, layout=layout)
    timings["total_s"] = sum(timings.values())
    return EquilibriumSet(
        modes=result.modes,
        scenario_hash=config_hash(game),
        timings=timings,
        diagnostics=tuple(diagnostics),
        refiner_invocations=invocations,
        cluster_count=len(modeset),
    )


@dataclass(frozen=True)
class BaselineResult:
    modes: EquilibriumSet
    invocations: int
    wall_s: float
    exhausted: bool


def baseline_random_init(
    game: GameSpec,
    refiner_cfg: RefinerConfig,
    target_modes: int,
    budget: int,
    rng: np.random.Generator,
    sigma_b: float = 0.3,
    dedup_distance: float = DEFAULT_DEDUP_DISTANCE,
) -> BaselineResult:
    """Random-restart search: perturb reference controls, refine, repeat.

    Stops once ``target_modes`` distinct equilibria are found or the budget
    is spent (the result is then flagged exhausted).
    """
    if target_modes < 1 or budget < target_modes:
        raise ConfigurationError("need target_modes >= 1 and budget >= target_modes")
    from .game import rollout

    layout = position_layout(game)
    pp = assemble_potential(game)
    found: list[RefinedEquilibrium] = []
    invocations = 0
    tic = time.perf_counter()
    while invocations < budget:
        controls = sigma_b * rng.standard_normal((game.horizon + 1, game.m))
        try:
            warm = rollout(game, game.x0, controls)
        except NumericError:
            invocations += 1
            continue
        invocations += 1
        eq = solve_constrained(pp, warm, refiner_cfg)
        if not eq.converged:
            continue
        eq.provenance = {"warm_start": f"random_{invocations}"}
        candidate = dedup_equilibria(found + [eq], dedup_distance, layout=layout)
        if len(candidate) > len(dedup_equilibria(found, dedup_distance, layout=layout)):
            found.append(eq)
        if len(dedup_equilibria(found, dedup_distance, layout=layout)) >= target_modes:
            break
    final = dedup_equilibria(found, dedup_distance, layout=layout)
    return BaselineResult(
        modes=final,
        invocations=invocations,
        wall_s=time.perf_counter() - tic,
        exhausted=len(final) < target_modes,
    )


# ---------------------------------------------------------------------------
# Online mode selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeBelief:
    """Frechet distances of the observed partner prefix to each mode.

    The lock is sticky: once the gap between the two closest modes exceeds
    the threshold, the closest mode stays selected for the rest of the run.
    """

    distances: np.ndarray
    dstar: float = 1.0
    locked: Optional[int] = None
    lock_step: Optional[int] = None
    lock_gap: float = 0.0

    @property
    def is_locked(self) -> bool:
        return self.locked is not None

    def selected(self) -> int:
        if self.locked is not None:
            return self.locked
        return int(np.argmin(self.distances))


def mode_belief_update(
    belief: ModeBelief,
    observed: np.ndarray,
    modes: EquilibriumSet,
    t: int,
    game: GameSpec,
    partner: int = 0,
) -> ModeBelief:
    """Rescore the partner prefix against each mode and apply the lock rule."""
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    if observed.shape[0] != t + 1:
        raise ConfigurationError(
            f"observed prefix must have t+1={t + 1} rows, got {observed.shape[0]}"
        )
    if len(modes) == 0:
        raise ConfigurationError("belief update needs at least one mode")
    sl = game.agent_state_slice(partner)
    end = min(t, game.horizon) + 1
    dists = np.array(
        [
            discrete_frechet(
                observed, m.trajectory.states[:end, sl][:, :2]
            )
            for m in modes.modes
        ]
    )
    locked = belief.locked
    lock_step = belief.lock_step
    lock_gap = belief.lock_gap
    if locked is None:
        if len(dists) == 1:
            gap = np.inf
        else:
            two = np.partition(dists, 1)[:2]
            gap = float(two[1] - two[0])
        if gap > belief.dstar:
            locked = int(np.argmin(dists))
            lock_step = t
            lock_gap = gap
    return ModeBelief(
        distances=dists,
        dstar=belief.dstar,
        locked=locked,
        lock_step=lock_step,
        lock_gap=lock_gap,
    )


@dataclass(frozen=True)
class MpcConfig:
    """Receding-horizon settings for the online loop.

    ``collision_margin`` inflates the collision radius inside the planning
    window only, absorbing the prediction error between the planned partner
    and the real one so the executed trajectory honors the true radius.
    """

    plan_horizon: float = 5.0       # seconds
    dt: float = 0.1
    replan_period: int = 1          # steps between refinements
    total_time: float = 10.0        # seconds of interaction
    nominal_speed: Optional[float] = None
    prelock_speed_fraction: float = 0.8
    collision_margin: float = 0.25

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.plan_horizon > self.total_time:
            raise ConfigurationError("plan horizon cannot exceed total time")
        if self.replan_period < 1:
            raise ConfigurationError("replan period must be >= 1")
        if self.collision_margin < 0:
            raise ConfigurationError("collision margin must be >= 0")

    @property
    def horizon_steps(self) -> int:
        return max(1, round(self.plan_horizon / self.dt))

    @property
    def total_steps(self) -> int:
        return max(1, round(self.total_time / self.dt))


def _mode_reference_window(mode: RefinedEquilibrium, t0: int, steps: int) -> np.ndarray:
    """Mode states indexed by global time, extended by the terminal state."""
    states = mode.trajectory.states
    idx = np.clip(np.arange(t0, t0 + steps + 1), 0, states.shape[0] - 1)
    return states[idx]


def truncated_game(game: GameSpec, mode: RefinedEquilibrium,
                   x_now: np.ndarray, t_now: int, steps: int,
                   collision_margin: float = 0.0) -> GameSpec:
    """A window of the game anchored at the current state with mode references."""
    window = _mode_reference_window(mode, t_now, steps)
    agents = []
    for i, a in enumerate(game.agents):
        agents.append(
            AgentSpec(
                Q=a.Q,
                Q_tau=a.Q_tau,
                R=a.R,
                reference=window[:, game.agent_state_slice(i)],
                dynamics_id=a.dynamics_id,
            )
        )
    params = dict(game.constraint_params)
    if collision_margin > 0.0 and "r_col" in params:
        params["r_col"] = float(params["r_col"]) + collision_margin
    return GameSpec(
        agents=tuple(agents),
        horizon=steps,
        dt=game.dt,
        x0=np.asarray(x_now, dtype=float),
        constraint_id=game.constraint_id,
        constraint_params=params,
    )


@dataclass(frozen=True)
class MpcStep:
    control: np.ndarray             # ego control for the next step
    plan: JointTrajectory           # full planned joint trajectory
    mode_index: int
    tentative: bool                 # planned against an unlocked mode
    fallback: bool                  # refinement failed; previous plan shifted


def _shift_plan(plan: JointTrajectory) -> np.ndarray:
    controls = np.vstack([plan.controls[1:], plan.controls[-1:]])
    return controls


def mpc_step(
    game: GameSpec,
    modes: EquilibriumSet,
    belief: ModeBelief,
    x_now: np.ndarray,
    cfg: MpcConfig,
    refiner_cfg: RefinerConfig,
    prev_plan: Optional[JointTrajectory] = None,
    t_now: int = 0,
    ego: int = 1,
) -> MpcStep:
    """One receding-horizon replan against the currently selected mode."""
    cfg.validate()
    if len(modes) == 0:
        raise ConfigurationError("cannot plan without modes")
    selected = belief.selected()
    steps = cfg.horizon_steps
    window_game = truncated_game(game, modes.modes[selected], x_now, t_now, steps,
                                 collision_margin=cfg.collision_margin)
    pp = assemble_potential(window_game)

    if prev_plan is not None and prev_plan.controls.shape == (steps + 1, game.m):
        warm_controls = _shift_plan(prev_plan)
    else:
        mode_controls = modes.modes[selected].trajectory.controls
        idx = np.clip(np.arange(t_now, t_now + steps + 1), 0, mode_controls.shape[0] - 1)
        warm_controls = mode_controls[idx]

    fallback = False
    try:
        from .game import rollout_controls

        warm_states = rollout_controls(window_game.joint_dynamics(),
                                       window_game.x0, warm_controls)
        eq = solve_constrained(pp, JointTrajectory(warm_states, warm_controls),
                               refiner_cfg)
        plan = eq.trajectory
    except NumericError:
        fallback = True
        if prev_plan is None:
            raise
        controls = _shift_plan(prev_plan)
        states = rollout_controls(window_game.joint_dynamics(), window_game.x0, controls)
        plan = JointTrajectory(states, controls)

    u_ego = plan.controls[0, game.agent_input_slice(ego)].copy()
    tentative = not belief.is_locked
    if tentative and cfg.nominal_speed is not None:
        # hedge before committing: keep ego speed under a fraction of nominal
        nu_now = float(x_now[game.agent_state_slice(ego)][3])
        cap = cfg.prelock_speed_fraction * cfg.nominal_speed
        u_ego[0] = min(u_ego[0], cap - nu_now)
    return MpcStep(
        control=u_ego,
        plan=plan,
        mode_index=selected,
        tentative=tentative,
        fallback=fallback,
    )


# ---------------------------------------------------------------------------
# Closed-loop simulation (scripted partner)
# ---------------------------------------------------------------------------

@dataclass
class InteractionLog:
    """Trace of one closed-loop run."""

    states: np.ndarray              # (steps+1, n)
    ego_controls: np.ndarray
    partner_controls: np.ndarray
    beliefs: list
    plans: list
    min_distance: float
    collided: bool
    lock_step: Optional[int]
    locked_mode: Optional[int]


def simulate_interaction(
    game: GameSpec,
    modes: EquilibriumSet,
    partner_policy: Callable[[int, np.ndarray], np.ndarray],
    cfg: MpcConfig,
    refiner_cfg: RefinerConfig,
    dstar: float = 1.0,
    ego: int = 1,
    partner: int = 0,
    x_init: Optional[np.ndarray] = None,
    collision_radius: Optional[float] = None,
) -> InteractionLog:
    """Run the belief/MPC loop against a scripted partner policy."""
    cfg.validate()
    dyn = game.joint_dynamics()
    x = np.asarray(game.x0 if x_init is None else x_init, dtype=float).copy()
    steps = cfg.total_steps
    n_modes = len(modes)
    belief = ModeBelief(distances=np.zeros(n_modes), dstar=dstar)
    if collision_radius is None:
        collision_radius = float(game.constraint_params.get("r_col", 0.0))

    psl = game.agent_state_slice(partner)
    esl = game.agent_input_slice(ego)
    usl_p = game.agent_input_slice(partner)

    states = np.empty((steps + 1, game.n))
    states[0] = x
    ego_controls = np.zeros((steps, esl.stop - esl.start))
    partner_controls = np.zeros((steps, usl_p.stop - usl_p.start))
    beliefs: list[ModeBelief] = []
    plans: list[JointTrajectory] = []
    observed = [x[psl][:2].copy()]
    plan: Optional[JointTrajectory] = None
    min_dist = np.inf
    if game.num_agents == 2:
        other = game.agent_state_slice(1 - partner)
        min_dist = float(np.linalg.norm(x[psl][:2] - x[other][:2]))

    for t in range(steps):
        belief = mode_belief_update(belief, np.array(observed), modes, t, game, partner)
        beliefs.append(belief)
        if plan is None or t % cfg.replan_period == 0:
            step_result = mpc_step(
                game, modes, belief, x, cfg, refiner_cfg,
                prev_plan=plan, t_now=t, ego=ego,
            )
            plan = step_result.plan
            u_ego = step_result.control
        else:
            k = t % cfg.replan_period
            u_ego = plan.controls[min(k, plan.controls.shape[0] - 1), esl].copy()
        u_partner = np.asarray(partner_policy(t, x), dtype=float)

        u = np.zeros(game.m)
        u[esl] = u_ego
        u[usl_p] = u_partner
        x = dyn.step(x, u)
        states[t + 1] = x
        ego_controls[t] = u_ego
        partner_controls[t] = u_partner
        plans.append(plan)
        observed.append(x[psl][:2].copy())

        if game.num_agents == 2:
            other = game.agent_state_slice(1 - partner)
            dist = float(np.linalg.norm(x[psl][:2] - x[other][:2]))
            min_dist = min(min_dist, dist)

    belief = mode_belief_update(belief, np.array(observed), modes, steps, game, partner)
    beliefs.append(belief)
    return InteractionLog(
        states=states,
        ego_controls=ego_controls,
        partner_controls=partner_controls,
        beliefs=beliefs,
        plans=plans,
        min_distance=float(min_dist),
        collided=bool(min_dist < collision_radius),
        lock_step=belief.lock_step,
        locked_mode=belief.locked,
    )


def mode_follower_policy(game: GameSpec, modes: EquilibriumSet, mode_index: int,
                         partner: int = 0) -> Callable[[int, np.ndarray], np.ndarray]:
    """Scripted partner that replays a mode's own control sequence."""
    controls = modes.modes[mode_index].trajectory.controls
    sl = game.agent_input_slice(partner)

    def policy(t: int, x: np.ndarray) -> np.ndarray:
        if t < controls.shape[0]:
            return controls[t, sl]
        return np.zeros(sl.stop - sl.start)

    return policy
