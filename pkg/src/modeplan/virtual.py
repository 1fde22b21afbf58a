"""Virtual state-space model turning the potential problem into inference.

The trick: augment the state with the control, treat the reference as a noisy
measurement of the state, and treat a softplus barrier over the constraint
stack as a noisy measurement whose target is zero. With Gaussian noise whose
covariances are the inverses of the cost weights, the negative log posterior
of the resulting state-space model reproduces the soft-constrained potential
objective, so posterior modes sit at the problem's local minima and a filter
can hunt for all of them at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .game import ConfigurationError, JointTrajectory, PotentialProblem


@dataclass(frozen=True)
class BarrierConfig:
    """Softplus sharpness; larger values enforce constraints more strictly."""

    alpha: float = 5.0

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ConfigurationError("barrier alpha must be positive")


def softplus_barrier(g_vals: np.ndarray, alpha: float) -> np.ndarray:
    """Componentwise log(1 + exp(g)) / alpha, overflow-safe for any g.

    Vanishes as g -> -inf and approaches g / alpha as g -> +inf, so feasible
    constraint values map to near-zero virtual measurements.
    """
    if alpha <= 0:
        raise ConfigurationError("barrier alpha must be positive")
    return np.logaddexp(0.0, np.asarray(g_vals, dtype=float)) / alpha


def _inverse_psd(M: np.ndarray, name: str, jitter: float = 1e-8) -> np.ndarray:
    """Inverse of a PD matrix; pseudoinverse plus jitter when only PSD."""
    M = np.asarray(M, dtype=float)
    try:
        np.linalg.cholesky(M)
        return np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(M) + jitter * np.eye(M.shape[0])


@dataclass(frozen=True)
class VirtualModel:
    """Augmented-state system whose posterior modes match potential minima.

    The augmented state is [x; u]. The transition carries x through the joint
    dynamics and zeroes the control block, whose next value is injected as
    process noise with covariance R^-1 (the state block of the process noise
    is exactly zero: state propagation is deterministic). Measurements stack
    the state itself and the softplus of the constraint values; their targets
    are the reference state and the zero vector.
    """

    n: int
    m: int
    c: int
    horizon: int
    fbar: Callable[[np.ndarray], np.ndarray]
    hbar: Callable[[np.ndarray], np.ndarray]
    Qbar: np.ndarray        # measurement noise covariance, stage
    Qbar_tau: np.ndarray    # measurement noise covariance, terminal
    Rbar: np.ndarray        # process noise covariance (state block exactly 0)
    targets: np.ndarray     # (horizon+1, n+c) virtual measurement targets
    Q: np.ndarray
    Q_tau: np.ndarray
    R: np.ndarray
    Q_eta: np.ndarray
    alpha: float
    constraint_fn: Optional[Callable] = None

    @property
    def aug_dim(self) -> int:
        return self.n + self.m

    @property
    def meas_dim(self) -> int:
        return self.n + self.c


def build_virtual_model(
    pp: PotentialProblem,
    Q_eta: np.ndarray,
    barrier: BarrierConfig = BarrierConfig(),
) -> VirtualModel:
    """Assemble the virtual system for a potential problem.

    ``Q_eta`` weights constraint slack (a PD c x c matrix, or a scalar that
    is expanded to a multiple of the identity).
    """
    barrier.validate()
    n, m = pp.n, pp.m
    c = pp.constraint_dim
    Q_eta = np.asarray(Q_eta, dtype=float)
    if Q_eta.ndim == 0:
        Q_eta = float(Q_eta) * np.eye(c)
    if Q_eta.shape != (c, c):
        raise ConfigurationError(f"Q_eta must be {c}x{c}, got {Q_eta.shape}")

    try:
        R_inv = np.linalg.inv(pp.R)
        np.linalg.cholesky(pp.R)
    except np.linalg.LinAlgError:
        raise ConfigurationError("R must be positive definite")
    if c > 0:
        try:
            Q_eta_inv = np.linalg.inv(Q_eta)
            np.linalg.cholesky(Q_eta)
        except np.linalg.LinAlgError:
            raise ConfigurationError("Q_eta must be positive definite")
    else:
        Q_eta_inv = np.zeros((0, 0))

    Q_inv = _inverse_psd(pp.Q, "Q")
    Q_tau_inv = _inverse_psd(pp.Q_tau, "Q_tau")

    Qbar = np.zeros((n + c, n + c))
    Qbar[:n, :n] = Q_inv
    Qbar[n:, n:] = Q_eta_inv
    Qbar_tau = np.zeros((n + c, n + c))
    Qbar_tau[:n, :n] = Q_tau_inv
    Qbar_tau[n:, n:] = Q_eta_inv
    Rbar = np.zeros((n + m, n + m))
    Rbar[n:, n:] = R_inv

    dynamics = pp.dynamics
    constraints = pp.constraints
    alpha = barrier.alpha

    def fbar(xa: np.ndarray) -> np.ndarray:
        xa = np.asarray(xa, dtype=float)
        out = np.zeros_like(xa)
        out[..., :n] = dynamics.step(xa[..., :n], xa[..., n:])
        return out

    if constraints is not None:
        cons_fn = constraints.fn

        def hbar(xa: np.ndarray) -> np.ndarray:
            xa = np.asarray(xa, dtype=float)
            g = cons_fn(xa[..., :n], xa[..., n:])
            return np.concatenate(
                [xa[..., :n], softplus_barrier(g, alpha)], axis=-1
            )
    else:
        cons_fn = None

        def hbar(xa: np.ndarray) -> np.ndarray:
            xa = np.asarray(xa, dtype=float)
            return xa[..., :n].copy()

    targets = np.zeros((pp.horizon + 1, n + c))
    targets[:, :n] = pp.reference

    return VirtualModel(
        n=n,
        m=m,
        c=c,
        horizon=pp.horizon,
        fbar=fbar,
        hbar=hbar,
        Qbar=Qbar,
        Qbar_tau=Qbar_tau,
        Rbar=Rbar,
        targets=targets,
        Q=pp.Q.copy(),
        Q_tau=pp.Q_tau.copy(),
        R=pp.R.copy(),
        Q_eta=Q_eta,
        alpha=alpha,
        constraint_fn=cons_fn,
    )


def negative_log_posterior(vm: VirtualModel, traj: JointTrajectory) -> float:
    """Soft-constrained objective: tracking + control + barrier slack terms.

    Residuals are weighted by the original cost matrices (the inverses of the
    virtual noise covariances); Gaussian normalizing constants are dropped.
    Without constraints this equals the potential objective exactly.
    """
    if traj.states.shape != (vm.horizon + 1, vm.n):
        raise ConfigurationError(
            f"states must have shape ({vm.horizon + 1}, {vm.n}), got {traj.states.shape}"
        )
    err = traj.states - vm.targets[:, :vm.n]
    stage = float(np.einsum("ti,ij,tj->", err[:-1], vm.Q, err[:-1]))
    terminal = float(err[-1] @ vm.Q_tau @ err[-1])
    control = float(np.einsum("ti,ij,tj->", traj.controls, vm.R, traj.controls))
    slack = 0.0
    if vm.c > 0 and vm.constraint_fn is not None:
        psi = softplus_barrier(vm.constraint_fn(traj.states, traj.controls), vm.alpha)
        slack = float(np.einsum("ti,ij,tj->", psi, vm.Q_eta, psi))
    return stage + terminal + control + slack
