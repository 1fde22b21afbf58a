"""Registries binding dynamics and constraint identifiers to callables.

Game and scenario objects stay pure data: they reference transition maps and
constraint stacks by string identifier, and the registry resolves those
identifiers into bound numerical models. All registered callables accept
arrays with arbitrary leading batch dimensions (the trailing axis is the
state/input axis) so filters and optimizers can evaluate them in bulk.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class DynamicsModel:
    """A discrete-time transition map for one agent, bound to a step size dt.

    ``step(x, u)`` maps (..., state_dim) x (..., input_dim) -> (..., state_dim).
    ``jacobian(x, u)`` returns (A, B) with shapes (..., n, n) and (..., n, m);
    it may be None, in which case callers fall back to finite differences.
    """

    name: str
    state_dim: int
    input_dim: int
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None


@dataclass(frozen=True)
class ConstraintModel:
    """A joint inequality constraint stack g(x, u) <= 0.

    ``fn(x, u)`` maps (..., n) x (..., m) -> (..., dim). ``jacobian`` returns
    (Gx, Gu) with shapes (..., dim, n) and (..., dim, m), or None for a
    finite-difference fallback. ``hessian_contract(x, u, w)`` returns the
    weighted sum of constraint Hessians (Hxx, Huu, Hux) for a weight vector
    w over constraint components; solvers that have it converge with Newton
    quality near strongly active constraints, and fall back to a
    Gauss-Newton model when it is None.
    """

    name: str
    dim: int
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None
    hessian_contract: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]] = None


_DYNAMICS_FACTORIES: dict[str, Callable[..., DynamicsModel]] = {}
_CONSTRAINT_FACTORIES: dict[str, Callable[..., ConstraintModel]] = {}


def register_dynamics(name: str, factory: Callable[..., DynamicsModel]) -> None:
    """Register a dynamics factory; ``factory(dt)`` must return a DynamicsModel."""
    _DYNAMICS_FACTORIES[name] = factory


def register_constraints(name: str, factory: Callable[..., ConstraintModel]) -> None:
    """Register a constraint factory; ``factory(**params)`` returns a ConstraintModel."""
    _CONSTRAINT_FACTORIES[name] = factory


def get_dynamics(name: str, dt: float) -> DynamicsModel:
    try:
        factory = _DYNAMICS_FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown dynamics id {name!r}; registered: {sorted(_DYNAMICS_FACTORIES)}")
    return factory(dt)


def get_constraints(name: str, **params) -> ConstraintModel:
    try:
        factory = _CONSTRAINT_FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown constraint id {name!r}; registered: {sorted(_CONSTRAINT_FACTORIES)}")
    return factory(**params)


def finite_difference_jacobian(fn, x, u, h: float = 1e-6):
    """Central-difference Jacobians of ``fn(x, u)`` for unbatched inputs."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    y0 = np.asarray(fn(x, u), dtype=float)
    jx = np.empty((y0.shape[-1], x.shape[-1]))
    ju = np.empty((y0.shape[-1], u.shape[-1]))
    for k in range(x.shape[-1]):
        dx = np.zeros_like(x)
        dx[k] = h
        jx[:, k] = (fn(x + dx, u) - fn(x - dx, u)) / (2.0 * h)
    for k in range(u.shape[-1]):
        du = np.zeros_like(u)
        du[k] = h
        ju[:, k] = (fn(x, u + du) - fn(x, u - du)) / (2.0 * h)
    return jx, ju


# ---------------------------------------------------------------------------
# Built-in dynamics
# ---------------------------------------------------------------------------

def _double_integrator_factory(dt: float) -> DynamicsModel:
    """1-D double integrator: state (position, velocity), input acceleration."""
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])

    def step(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x @ A.T + u @ B.T

    def jacobian(x, u):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        return (
            np.broadcast_to(A, shape + A.shape).copy(),
            np.broadcast_to(B, shape + B.shape).copy(),
        )

    return DynamicsModel("double_integrator", 2, 1, step, jacobian)


register_dynamics("double_integrator", _double_integrator_factory)
