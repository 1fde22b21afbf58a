"""Trajectory game definitions, potential assembly, and cost evaluation.

A game couples N agents through shared inequality constraints while each
agent tracks its own reference under quadratic stage, terminal, and control
costs. Because the costs are separable per agent, the sum of agent costs is
a potential for the game: a unilateral change in one agent's trajectory
moves the sum by exactly that agent's cost change, so local minimizers of
the single constrained problem are local generalized Nash equilibria.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .registry import ConstraintModel, DynamicsModel, get_constraints, get_dynamics


class ConfigurationError(ValueError):
    """A game, scenario, or solver configuration is internally inconsistent."""


class NumericError(RuntimeError):
    """A numeric operation produced non-finite values or an impossible factorization."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


def _check_symmetric(M: np.ndarray, name: str, tol: float = 1e-9) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=tol, rtol=0.0):
        raise ConfigurationError(f"{name} must be symmetric")


def check_psd(M: np.ndarray, name: str, tol: float = 1e-9) -> None:
    _check_symmetric(M, name, tol)
    eigmin = float(np.linalg.eigvalsh(M)[0])
    if eigmin < -tol * max(1.0, float(np.abs(M).max())):
        raise ConfigurationError(f"{name} must be positive semidefinite (min eig {eigmin:.3e})")


def check_pd(M: np.ndarray, name: str, tol: float = 1e-12) -> None:
    _check_symmetric(M, name)
    eigmin = float(np.linalg.eigvalsh(M)[0])
    if eigmin <= tol * max(1.0, float(np.abs(M).max())):
        raise ConfigurationError(f"{name} must be positive definite (min eig {eigmin:.3e})")


@dataclass(frozen=True)
class AgentSpec:
    """One agent's cost weights, reference trajectory, and dynamics binding."""

    Q: np.ndarray          # stage state weight, PSD (n_i x n_i)
    Q_tau: np.ndarray      # terminal state weight, PSD (n_i x n_i)
    R: np.ndarray          # control weight, PD (m_i x m_i)
    reference: np.ndarray  # (horizon+1, n_i) reference states
    dynamics_id: str

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q_tau", np.asarray(self.Q_tau, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def input_dim(self) -> int:
        return self.R.shape[0]

    def validate(self, horizon: int) -> None:
        check_psd(self.Q, "Q")
        check_psd(self.Q_tau, "Q_tau")
        check_pd(self.R, "R")
        if self.Q_tau.shape != self.Q.shape:
            raise ConfigurationError("Q and Q_tau must have matching shapes")
        if self.reference.ndim != 2 or self.reference.shape != (horizon + 1, self.state_dim):
            raise ConfigurationError(
                f"reference must have shape ({horizon + 1}, {self.state_dim}), "
                f"got {self.reference.shape}"
            )


@dataclass(frozen=True)
class GameSpec:
    """A constrained trajectory game: agents, horizon, and shared constraints."""

    agents: tuple[AgentSpec, ...]
    horizon: int
    dt: float
    x0: np.ndarray                      # initial joint state, length sum(n_i)
    constraint_id: Optional[str] = None
    constraint_params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def n(self) -> int:
        return sum(a.state_dim for a in self.agents)

    @property
    def m(self) -> int:
        return sum(a.input_dim for a in self.agents)

    @property
    def state_offsets(self) -> tuple[int, ...]:
        return tuple(np.cumsum([0] + [a.state_dim for a in self.agents])[:-1])

    @property
    def input_offsets(self) -> tuple[int, ...]:
        return tuple(np.cumsum([0] + [a.input_dim for a in self.agents])[:-1])

    def agent_state_slice(self, i: int) -> slice:
        off = self.state_offsets[i]
        return slice(off, off + self.agents[i].state_dim)

    def agent_input_slice(self, i: int) -> slice:
        off = self.input_offsets[i]
        return slice(off, off + self.agents[i].input_dim)

    def validate(self) -> None:
        if self.num_agents < 1:
            raise ConfigurationError("a game needs at least one agent")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        for a in self.agents:
            a.validate(self.horizon)
        if self.x0.shape != (self.n,):
            raise ConfigurationError(
                f"initial state must have length {self.n}, got shape {self.x0.shape}"
            )

    def joint_dynamics(self) -> "JointDynamics":
        models = tuple(get_dynamics(a.dynamics_id, self.dt) for a in self.agents)
        for a, mdl in zip(self.agents, models):
            if (mdl.state_dim, mdl.input_dim) != (a.state_dim, a.input_dim):
                raise ConfigurationError(
                    f"dynamics {a.dynamics_id!r} has dims ({mdl.state_dim},{mdl.input_dim}), "
                    f"agent declares ({a.state_dim},{a.input_dim})"
                )
        return JointDynamics(models)

    def constraints(self) -> Optional[ConstraintModel]:
        if self.constraint_id is None:
            return None
        return get_constraints(self.constraint_id, **self.constraint_params)

    def joint_reference(self) -> np.ndarray:
        return np.concatenate([a.reference for a in self.agents], axis=1)


@dataclass(frozen=True)
class JointTrajectory:
    """States and controls of all agents over the full horizon.

    Both arrays have horizon+1 rows; the final control enters costs and
    constraints but is never propagated through the dynamics.
    """

    states: np.ndarray    # (horizon+1, n)
    controls: np.ndarray  # (horizon+1, m)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        if states.ndim != 2 or controls.ndim != 2:
            raise ConfigurationError("states and controls must be 2-D arrays")
        if states.shape[0] != controls.shape[0]:
            raise ConfigurationError(
                f"states ({states.shape[0]} rows) and controls ({controls.shape[0]} rows) "
                "must cover the same number of steps"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def agent_states(self, game: GameSpec, i: int) -> np.ndarray:
        return self.states[:, game.agent_state_slice(i)]

    def agent_controls(self, game: GameSpec, i: int) -> np.ndarray:
        return self.controls[:, game.agent_input_slice(i)]

    def with_agent(self, game: GameSpec, i: int,
                   states_i: np.ndarray, controls_i: np.ndarray) -> "JointTrajectory":
        """A copy with agent i's slices replaced (everyone else frozen)."""
        states = self.states.copy()
        controls = self.controls.copy()
        states[:, game.agent_state_slice(i)] = states_i
        controls[:, game.agent_input_slice(i)] = controls_i
        return JointTrajectory(states, controls)


class JointDynamics:
    """Stacks per-agent transition maps into one joint map.

    When every agent shares the same dynamics model the joint step reshapes
    the trailing axis to (N, n_i) and applies the model once; otherwise it
    loops over per-agent slices. Both paths are elementwise-identical.
    """

    def __init__(self, models: Sequence[DynamicsModel]):
        self.models = tuple(models)
        self.state_dims = tuple(m.state_dim for m in self.models)
        self.input_dims = tuple(m.input_dim for m in self.models)
        self.n = sum(self.state_dims)
        self.m = sum(self.input_dims)
        self._x_off = np.cumsum([0] + list(self.state_dims))
        self._u_off = np.cumsum([0] + list(self.input_dims))
        first = self.models[0]
        self._homogeneous = all(
            m.name == first.name
            and m.state_dim == first.state_dim
            and m.input_dim == first.input_dim
            for m in self.models
        )

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self._homogeneous:
            N = len(self.models)
            mdl = self.models[0]
            xs = x.reshape(x.shape[:-1] + (N, mdl.state_dim))
            us = u.reshape(u.shape[:-1] + (N, mdl.input_dim))
            out = mdl.step(xs, us)
            return out.reshape(x.shape)
        parts = []
        for i, mdl in enumerate(self.models):
            xi = x[..., self._x_off[i]:self._x_off[i + 1]]
            ui = u[..., self._u_off[i]:self._u_off[i + 1]]
            parts.append(mdl.step(xi, ui))
        return np.concatenate(parts, axis=-1)

    def jacobian(self, x: np.ndarray, u: np.ndarray):
        """Block-diagonal joint Jacobians (A, B), batched over leading dims."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = x.shape[:-1]
        A = np.zeros(batch + (self.n, self.n))
        B = np.zeros(batch + (self.n, self.m))
        for i, mdl in enumerate(self.models):
            xi = x[..., self._x_off[i]:self._x_off[i + 1]]
            ui = u[..., self._u_off[i]:self._u_off[i + 1]]
            if mdl.jacobian is not None:
                Ai, Bi = mdl.jacobian(xi, ui)
            else:
                from .registry import finite_difference_jacobian
                if batch:
                    raise NotImplementedError("batched finite-difference dynamics jacobian")
                Ai, Bi = finite_difference_jacobian(mdl.step, xi, ui)
            sx = slice(self._x_off[i], self._x_off[i + 1])
            su = slice(self._u_off[i], self._u_off[i + 1])
            A[..., sx, sx] = Ai
            B[..., sx, su] = Bi
        return A, B


@dataclass(frozen=True)
class PotentialProblem:
    """The single constrained problem whose local minima are local equilibria.

    Cost blocks are exact block-diagonal embeddings of the agents' weights in
    agent-index order, so its objective on any joint trajectory equals the sum
    of per-agent costs.
    """

    Q: np.ndarray
    Q_tau: np.ndarray
    R: np.ndarray
    reference: np.ndarray      # (horizon+1, n) joint reference
    x0: np.ndarray
    dynamics: JointDynamics
    constraints: Optional[ConstraintModel]
    horizon: int
    dt: float

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def constraint_dim(self) -> int:
        return self.constraints.dim if self.constraints is not None else 0


def assemble_potential(game: GameSpec) -> PotentialProblem:
    """Build the joint potential problem from a validated game."""
    game.validate()
    Q = scipy.linalg.block_diag(*[a.Q for a in game.agents])
    Q_tau = scipy.linalg.block_diag(*[a.Q_tau for a in game.agents])
    R = scipy.linalg.block_diag(*[a.R for a in game.agents])
    return PotentialProblem(
        Q=Q,
        Q_tau=Q_tau,
        R=R,
        reference=game.joint_reference(),
        x0=game.x0.copy(),
        dynamics=game.joint_dynamics(),
        constraints=game.constraints(),
        horizon=game.horizon,
        dt=game.dt,
    )


def _quad_rows(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Row-wise weighted squared norms x_t' M x_t."""
    return np.einsum("ti,ij,tj->t", X, M, X)


def eval_agent_cost(game: GameSpec, traj: JointTrajectory, i: int) -> float:
    """Agent i's tracking + control cost along a joint trajectory."""
    if not 0 <= i < game.num_agents:
        raise IndexError(f"agent index {i} out of range for {game.num_agents} agents")
    agent = game.agents[i]
    xs = traj.agent_states(game, i)
    us = traj.agent_controls(game, i)
    if xs.shape[0] != game.horizon + 1:
        raise ConfigurationError("trajectory horizon does not match game horizon")
    err = xs - agent.reference
    stage = float(np.sum(_quad_rows(err[:-1], agent.Q)))
    terminal = float(err[-1] @ agent.Q_tau @ err[-1])
    control = float(np.sum(_quad_rows(us, agent.R)))
    return stage + terminal + control


def eval_potential(pp: PotentialProblem, traj: JointTrajectory) -> float:
    """Joint-cost evaluation; equals the sum of per-agent costs."""
    if traj.states.shape != (pp.horizon + 1, pp.n):
        raise ConfigurationError(
            f"states must have shape ({pp.horizon + 1}, {pp.n}), got {traj.states.shape}"
        )
    err = traj.states - pp.reference
    stage = float(np.sum(_quad_rows(err[:-1], pp.Q)))
    terminal = float(err[-1] @ pp.Q_tau @ err[-1])
    control = float(np.sum(_quad_rows(traj.controls, pp.R)))
    return stage + terminal + control


def rollout_controls(dynamics: JointDynamics, x0: np.ndarray,
                     controls: np.ndarray) -> np.ndarray:
    """Propagate a control sequence; returns the (horizon+1, n) state array.

    The last control row is carried along for cost and constraint evaluation
    but does not drive a further state.
    """
    controls = np.asarray(controls, dtype=float)
    steps = controls.shape[0] - 1
    states = np.empty((steps + 1, dynamics.n))
    states[0] = x0
    for t in range(steps):
        states[t + 1] = dynamics.step(states[t], controls[t])
    if not np.isfinite(states).all():
        bad = int(np.argmin(np.isfinite(states).all(axis=1)))
        raise NumericError("rollout produced a non-finite state", step=bad)
    return states


def rollout(game: GameSpec, x0: np.ndarray, controls: np.ndarray) -> JointTrajectory:
    """Roll the joint dynamics out from x0 under a (horizon+1, m) control sequence."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (game.horizon + 1, game.m):
        raise ConfigurationError(
            f"controls must have shape ({game.horizon + 1}, {game.m}), got {controls.shape}"
        )
    states = rollout_controls(game.joint_dynamics(), np.asarray(x0, dtype=float), controls)
    return JointTrajectory(states, controls)


def eval_constraints(game: GameSpec, traj: JointTrajectory) -> np.ndarray:
    """Constraint values g(x_t, u_t) per step, shape (horizon+1, c).

    Feasibility means every entry is <= 0. Games without a constraint stack
    return an empty (horizon+1, 0) array.
    """
    model = game.constraints()
    if model is None:
        return np.zeros((traj.states.shape[0], 0))
    return np.asarray(model.fn(traj.states, traj.controls), dtype=float)
