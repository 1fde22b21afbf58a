"""Unicycle dynamics, two-agent constraint stacks, and benchmark scenarios.

Two presets ship with the package: ``head_on`` (two agents swap positions and
must dodge each other) and ``obstacle_swap`` (the swap happens around a
central circular obstacle whose radius exceeds the collision radius, which
splits the interaction into six distinct modes). Scenario configurations are
plain data and round-trip losslessly through YAML files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import yaml

from .game import AgentSpec, ConfigurationError, GameSpec
from .registry import (
    ConstraintModel,
    DynamicsModel,
    register_constraints,
    register_dynamics,
)

POSITION_DIMS = 2  # (p, q) lead every agent state used by the presets


@dataclass(frozen=True)
class UnicycleState:
    """Planar unicycle: position (p, q), heading, speed, and turn rate.

    The heading is stored unwrapped because costs track a reference heading;
    wrapping would create artificial tracking error across +-pi.
    """

    p: float
    q: float
    theta: float
    nu: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.q, self.theta, self.nu, self.omega])

    @staticmethod
    def from_array(x: np.ndarray) -> "UnicycleState":
        p, q, theta, nu, omega = (float(v) for v in x)
        return UnicycleState(p, q, theta, nu, omega)


def unicycle_advance(state: np.ndarray, control: np.ndarray, dt: float) -> np.ndarray:
    """Advance unicycle states one step; batched over leading dimensions.

    Position integrates the current speed and heading, heading integrates the
    current turn rate, and speed/turn-rate integrate their commanded deltas.
    """
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    out = np.empty_like(state)
    theta = state[..., 2]
    nu = state[..., 3]
    out[..., 0] = state[..., 0] + dt * nu * np.cos(theta)
    out[..., 1] = state[..., 1] + dt * nu * np.sin(theta)
    out[..., 2] = theta + dt * state[..., 4]
    out[..., 3] = nu + control[..., 0]
    out[..., 4] = state[..., 4] + control[..., 1]
    return out


def unicycle_step(s: UnicycleState, u, dt: float) -> UnicycleState:
    """Single-state wrapper around :func:`unicycle_advance`."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    nxt = unicycle_advance(s.as_array(), np.asarray(u, dtype=float), dt)
    return UnicycleState.from_array(nxt)


def _unicycle_jacobian(state: np.ndarray, control: np.ndarray, dt: float):
    state = np.asarray(state, dtype=float)
    batch = state.shape[:-1]
    theta = state[..., 2]
    nu = state[..., 3]
    A = np.zeros(batch + (5, 5))
    for k in range(5):
        A[..., k, k] = 1.0
    A[..., 0, 2] = -dt * nu * np.sin(theta)
    A[..., 0, 3] = dt * np.cos(theta)
    A[..., 1, 2] = dt * nu * np.cos(theta)
    A[..., 1, 3] = dt * np.sin(theta)
    A[..., 2, 4] = dt
    B = np.zeros(batch + (5, 2))
    B[..., 3, 0] = 1.0
    B[..., 4, 1] = 1.0
    return A, B


def _unicycle_factory(dt: float) -> DynamicsModel:
    def step(x, u):
        return unicycle_advance(x, u, dt)

    def jacobian(x, u):
        return _unicycle_jacobian(x, u, dt)

    return DynamicsModel("unicycle", 5, 2, step, jacobian)


register_dynamics("unicycle", _unicycle_factory)


# ---------------------------------------------------------------------------
# Two-agent constraint stack
# ---------------------------------------------------------------------------

def _pair_constraints_factory(
    r_col: float,
    u_b1: tuple,
    u_b2: tuple,
    r_obs: float | None = None,
    x_obs: tuple | None = None,
) -> ConstraintModel:
    """Collision, optional obstacle, and speed/input-bound constraints.

    Component order: inter-agent collision, per-agent obstacle clearance
    (when configured), then bounds [-nu1, -nu2, |u1| - u_b1, |u2| - u_b2].
    """
    ub1 = np.asarray(u_b1, dtype=float)
    ub2 = np.asarray(u_b2, dtype=float)
    obs = None if x_obs is None else np.asarray(x_obs, dtype=float)
    has_obstacle = r_obs is not None
    dim = (3 if has_obstacle else 1) + 6

    def fn(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        p1 = x[..., 0:2]
        p2 = x[..., 5:7]
        d12 = np.linalg.norm(p1 - p2, axis=-1)
        rows = [r_col - d12]
        if has_obstacle:
            rows.append(r_obs - np.linalg.norm(p1 - obs, axis=-1))
            rows.append(r_obs - np.linalg.norm(p2 - obs, axis=-1))
        rows.append(-x[..., 3])
        rows.append(-x[..., 8])
        au = np.abs(u)
        rows.append(au[..., 0] - ub1[0])
        rows.append(au[..., 1] - ub1[1])
        rows.append(au[..., 2] - ub2[0])
        rows.append(au[..., 3] - ub2[1])
        return np.stack(rows, axis=-1)

    def jacobian(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = x.shape[:-1]
        Gx = np.zeros(batch + (dim, 10))
        Gu = np.zeros(batch + (dim, 4))
        p1 = x[..., 0:2]
        p2 = x[..., 5:7]
        diff = p1 - p2
        d12 = np.maximum(np.linalg.norm(diff, axis=-1), 1e-12)
        unit = diff / d12[..., None]
        Gx[..., 0, 0:2] = -unit
        Gx[..., 0, 5:7] = unit
        row = 1
        if has_obstacle:
            for pos_off, r in ((0, row), (5, row + 1)):
                dv = x[..., pos_off:pos_off + 2] - obs
                dd = np.maximum(np.linalg.norm(dv, axis=-1), 1e-12)
                Gx[..., r, pos_off:pos_off + 2] = -dv / dd[..., None]
            row += 2
        Gx[..., row, 3] = -1.0
        Gx[..., row + 1, 8] = -1.0
        sgn = np.sign(u)
        for k in range(4):
            Gu[..., row + 2 + k, k] = sgn[..., k]
        return Gx, Gu

    def _neg_dist_hessian(dv, d):
        # Hessian of -||dv|| in the 2-D position block: -(I - uu')/d
        u_hat = dv / d[..., None]
        eye = np.eye(2)
        return -(eye - u_hat[..., :, None] * u_hat[..., None, :]) / d[..., None, None]

    def hessian_contract(x, u, w):
        """Sum of w_k * hess(g_k); only the distance rows carry curvature."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        Hxx = np.zeros(batch + (10, 10))
        Huu = np.zeros(batch + (4, 4))
        Hux = np.zeros(batch + (4, 10))
        diff = x[..., 0:2] - x[..., 5:7]
        d12 = np.maximum(np.linalg.norm(diff, axis=-1), 1e-12)
        H = w[..., 0, None, None] * _neg_dist_hessian(diff, d12)
        Hxx[..., 0:2, 0:2] += H
        Hxx[..., 5:7, 5:7] += H
        Hxx[..., 0:2, 5:7] -= H
        Hxx[..., 5:7, 0:2] -= H
        if has_obstacle:
            for pos_off, r in ((0, 1), (5, 2)):
                dv = x[..., pos_off:pos_off + 2] - obs
                dd = np.maximum(np.linalg.norm(dv, axis=-1), 1e-12)
                Hxx[..., pos_off:pos_off + 2, pos_off:pos_off + 2] += (
                    w[..., r, None, None] * _neg_dist_hessian(dv, dd)
                )
        return Hxx, Huu, Hux

    return ConstraintModel("two_unicycle_stack", dim, fn, jacobian, hessian_contract)


register_constraints("two_unicycle_stack", _pair_constraints_factory)


# ---------------------------------------------------------------------------
# Scenario configuration and presets
# ---------------------------------------------------------------------------

HEAD_ON = "head_on"
OBSTACLE_SWAP = "obstacle_swap"


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, bounds, horizon, and cost scales for a two-agent scenario."""

    kind: str
    starts: tuple = ((-8.0, 0.0), (8.0, 0.0))
    goals: tuple = ((8.0, 0.0), (-8.0, 0.0))
    r_col: float = 3.0
    r_obs: Optional[float] = None
    x_obs: tuple = (0.0, 0.0)
    u_bounds: tuple = ((0.15, 0.75), (0.15, 0.75))
    horizon: int = 60
    dt: float = 0.1
    q_base: tuple = (50.0, 10.0, 5.0, 5.0, 2.0)
    stage_scale: float = 0.6
    terminal_scale: float = 100.0
    r_diag: tuple = (8.0, 4.0)

    def validate(self) -> None:
        if self.kind not in (HEAD_ON, OBSTACLE_SWAP):
            raise ConfigurationError(f"unknown scenario kind {self.kind!r}")
        if self.r_col <= 0:
            raise ConfigurationError("r_col must be positive")
        if self.kind == OBSTACLE_SWAP:
            if self.r_obs is None:
                raise ConfigurationError("obstacle_swap requires r_obs")
            if self.r_obs <= self.r_col:
                raise ConfigurationError(
                    "obstacle radius must exceed the collision radius "
                    "(that gap is what creates the six interaction modes)"
                )
        if len(self.starts) != 2 or len(self.goals) != 2:
            raise ConfigurationError("presets define exactly two agents")
        for ub in self.u_bounds:
            if not all(b > 0 for b in ub):
                raise ConfigurationError("control bounds must be positive")
        if self.horizon < 1 or self.dt <= 0:
            raise ConfigurationError("horizon must be >= 1 and dt > 0")
        for s, g in zip(self.starts, self.goals):
            if math.dist(s, g) < 1e-9:
                raise ConfigurationError("start and goal coincide")


def straight_line_reference(start, goal, horizon: int, dt: float) -> np.ndarray:
    """Constant-speed straight-line unicycle reference from start to goal."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    dist = float(np.linalg.norm(goal - start))
    heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
    speed = dist / (horizon * dt)
    ref = np.zeros((horizon + 1, 5))
    frac = np.linspace(0.0, 1.0, horizon + 1)
    ref[:, 0] = start[0] + frac * (goal[0] - start[0])
    ref[:, 1] = start[1] + frac * (goal[1] - start[1])
    ref[:, 2] = heading
    ref[:, 3] = speed
    return ref


def build_scenario(cfg: ScenarioConfig) -> GameSpec:
    """Instantiate the two-agent game for a scenario configuration."""
    cfg.validate()
    q_base = np.diag(np.asarray(cfg.q_base, dtype=float))
    Q = cfg.stage_scale * q_base
    Q_tau = cfg.terminal_scale * q_base
    R = np.diag(np.asarray(cfg.r_diag, dtype=float))
    agents = []
    for start, goal in zip(cfg.starts, cfg.goals):
        ref = straight_line_reference(start, goal, cfg.horizon, cfg.dt)
        agents.append(AgentSpec(Q=Q, Q_tau=Q_tau, R=R, reference=ref, dynamics_id="unicycle"))
    x0 = np.concatenate([a.reference[0] for a in agents])
    params = {
        "r_col": cfg.r_col,
        "u_b1": tuple(float(v) for v in cfg.u_bounds[0]),
        "u_b2": tuple(float(v) for v in cfg.u_bounds[1]),
    }
    if cfg.kind == OBSTACLE_SWAP:
        params["r_obs"] = float(cfg.r_obs)
        params["x_obs"] = tuple(float(v) for v in cfg.x_obs)
    return GameSpec(
        agents=tuple(agents),
        horizon=cfg.horizon,
        dt=cfg.dt,
        x0=x0,
        constraint_id="two_unicycle_stack",
        constraint_params=params,
    )


def constraint_stack(cfg: ScenarioConfig) -> ConstraintModel:
    """The bound constraint stack for a scenario, applied as g(x_t, u_t)."""
    cfg.validate()
    kwargs = dict(
        r_col=cfg.r_col,
        u_b1=tuple(cfg.u_bounds[0]),
        u_b2=tuple(cfg.u_bounds[1]),
    )
    if cfg.kind == OBSTACLE_SWAP:
        kwargs["r_obs"] = cfg.r_obs
        kwargs["x_obs"] = tuple(cfg.x_obs)
    return _pair_constraints_factory(**kwargs)


PRESETS = {
    HEAD_ON: ScenarioConfig(kind=HEAD_ON),
    OBSTACLE_SWAP: ScenarioConfig(kind=OBSTACLE_SWAP, r_obs=4.0),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; available: {sorted(PRESETS)}"
        )


def nominal_speed(cfg: ScenarioConfig, agent: int = 0) -> float:
    return math.dist(cfg.starts[agent], cfg.goals[agent]) / (cfg.horizon * cfg.dt)


# ---------------------------------------------------------------------------
# Scenario files (YAML, lossless round-trip)
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["starts"] = [list(s) for s in cfg.starts]
    d["goals"] = [list(g) for g in cfg.goals]
    d["u_bounds"] = [list(b) for b in cfg.u_bounds]
    d["q_base"] = list(cfg.q_base)
    d["r_diag"] = list(cfg.r_diag)
    d["x_obs"] = list(cfg.x_obs)
    return d


def scenario_from_dict(d: dict) -> ScenarioConfig:
    known = {f for f in ScenarioConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
    kwargs = dict(d)
    for key in ("starts", "goals", "u_bounds"):
        if key in kwargs:
            kwargs[key] = tuple(tuple(float(v) for v in row) for row in kwargs[key])
    for key in ("q_base", "r_diag", "x_obs"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in kwargs[key])
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(cfg), fh, sort_keys=True)


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigurationError(f"scenario file {path} does not hold a mapping")
    return scenario_from_dict(data)
