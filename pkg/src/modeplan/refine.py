"""Constrained refinement of warm starts into exact local equilibria.

A single-shooting augmented-Lagrangian method polishes each cluster
representative: states are eliminated through the rollout, and inequality
constraints enter through multiplier estimates plus a quadratic penalty.
Each smooth subproblem goes to a Riccati-sweep Gauss-Newton descent with
backtracking line search (the natural quasi-Newton scheme for tracking
costs; it absorbs the huge terminal-weight conditioning that defeats
generic first-order inner solvers). A sampled-deviation certificate then
checks the defining equilibrium property directly: no agent can cut its own
cost by a feasible unilateral change near the solution.

Filter output is averaged per cluster, so a representative's control
sequence need not reproduce its state sequence under the dynamics; when it
does not, the solver first projects the warm start onto the rollout
manifold by tracking the representative's states, which preserves the basin
the cluster identified.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .clustering import discrete_frechet, position_layout
from .game import (
    ConfigurationError,
    GameSpec,
    JointTrajectory,
    NumericError,
    PotentialProblem,
    eval_agent_cost,
    eval_constraints,
    eval_potential,
    rollout_controls,
)

MU_MAX = 1e8


@dataclass(frozen=True)
class RefinerConfig:
    outer_iterations: int = 15
    inner_iterations: int = 100
    penalty_growth: float = 5.0
    mu0: float = 10.0
    eps_constraint: float = 1e-4
    eps_stationarity: float = 1e-5
    fd_step: float = 1e-6

    def validate(self) -> None:
        if self.penalty_growth <= 1.0:
            raise ConfigurationError("penalty growth factor must exceed 1")
        if min(self.eps_constraint, self.eps_stationarity, self.fd_step) <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.outer_iterations < 1 or self.inner_iterations < 1:
            raise ConfigurationError("iteration budgets must be >= 1")


@dataclass
class RefinedEquilibrium:
    """A refined trajectory with its feasibility and optimality evidence."""

    trajectory: JointTrajectory
    potential: float
    max_violation: float
    stationarity: np.ndarray        # per-agent residuals (inf-norm)
    converged: bool
    iterations: int
    multipliers: Optional[np.ndarray] = None   # (horizon+1, c) final estimates
    merit_history: tuple = ()                  # (start, end) merit per outer pass
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EquilibriumSet:
    """Deduplicated refined equilibria: the planner's mode library."""

    modes: tuple[RefinedEquilibrium, ...]
    scenario_hash: str = ""
    timings: dict = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()
    refiner_invocations: int = 0
    cluster_count: int = 0

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def potentials(self) -> np.ndarray:
        return np.array([m.potential for m in self.modes])


class _ShootingProblem:
    """Merit, gradient, and Gauss-Newton expansions in control space."""

    def __init__(self, pp: PotentialProblem, fd_step: float = 1e-6):
        self.pp = pp
        self.fd_step = fd_step
        self.tau = pp.horizon
        self.n, self.m = pp.n, pp.m
        self.c = pp.constraint_dim
        self._cons = pp.constraints

    def states_of(self, U: np.ndarray) -> np.ndarray:
        return rollout_controls(self.pp.dynamics, self.pp.x0, U)

    def constraints_of(self, states: np.ndarray, U: np.ndarray) -> np.ndarray:
        if self._cons is None:
            return np.zeros((self.tau + 1, 0))
        return np.asarray(self._cons.fn(states, U), dtype=float)

    def potential_of(self, states: np.ndarray, U: np.ndarray) -> float:
        pp = self.pp
        err = states - pp.reference
        stage = float(np.einsum("ti,ij,tj->", err[:-1], pp.Q, err[:-1]))
        terminal = float(err[-1] @ pp.Q_tau @ err[-1])
        control = float(np.einsum("ti,ij,tj->", U, pp.R, U))
        return stage + terminal + control

    def merit_of(self, states: np.ndarray, U: np.ndarray,
                 lam: np.ndarray, mu: float) -> float:
        value = self.potential_of(states, U)
        if self.c > 0:
            gvals = self.constraints_of(states, U)
            active = np.maximum(lam + mu * gvals, 0.0)
            value += float(np.sum(active * active - lam * lam)) / (2.0 * mu)
        return value

    def _constraint_jacobians(self, states, U):
        if self._cons.jacobian is not None:
            return self._cons.jacobian(states, U)
        from .registry import finite_difference_jacobian
        rows_x, rows_u = [], []
        for t in range(self.tau + 1):
            jx, ju = finite_difference_jacobian(
                self._cons.fn, states[t], U[t], self.fd_step
            )
            rows_x.append(jx)
            rows_u.append(ju)
        return np.stack(rows_x), np.stack(rows_u)

    def expand(self, U: np.ndarray, lam: np.ndarray, mu: float) -> dict:
        """Everything one Gauss-Newton iteration needs, in one pass.

        Constraint contributions use the Gauss-Newton curvature
        ``G' diag(mu * active) G`` (second derivatives of the constraint
        functions are dropped).
        """
        pp = self.pp
        tau, n, m = self.tau, self.n, self.m
        states = self.states_of(U)
        err = states - pp.reference
        value = self.potential_of(states, U)

        lx = 2.0 * err @ pp.Q.T
        lx[-1] = 2.0 * pp.Q_tau @ err[-1]
        lu = 2.0 * U @ pp.R.T
        lxx = np.broadcast_to(2.0 * pp.Q, (tau + 1, n, n)).copy()
        lxx[-1] = 2.0 * pp.Q_tau
        luu = np.broadcast_to(2.0 * pp.R, (tau + 1, m, m)).copy()
        lux = np.zeros((tau + 1, m, n))

        gvals = None
        if self.c > 0:
            gvals = self.constraints_of(states, U)
            shifted = lam + mu * gvals
            active = np.maximum(shifted, 0.0)
            value += float(np.sum(active * active - lam * lam)) / (2.0 * mu)
            curv = mu * (shifted > 0.0)
            Gx, Gu = self._constraint_jacobians(states, U)
            lx += np.einsum("tcn,tc->tn", Gx, active)
            lu += np.einsum("tcm,tc->tm", Gu, active)
            lxx += np.einsum("tka,tk,tkb->tab", Gx, curv, Gx)
            luu += np.einsum("tka,tk,tkb->tab", Gu, curv, Gu)
            lux += np.einsum("tka,tk,tkb->tab", Gu, curv, Gx)
            if self._cons.hessian_contract is not None:
                Hxx, Huu, Hux = self._cons.hessian_contract(states, U, active)
                lxx += Hxx
                luu += Huu
                lux += Hux
        if not np.isfinite(value):
            raise NumericError("merit function is not finite")

        A, B = pp.dynamics.jacobian(states[:-1], U[:-1])
        grad_u = lu.copy()
        adj = lx[-1]
        for t in range(tau - 1, -1, -1):
            grad_u[t] += B[t].T @ adj
            adj = lx[t] + A[t].T @ adj
        return {
            "value": value,
            "grad": grad_u,
            "states": states,
            "gvals": gvals,
            "lx": lx,
            "lu": lu,
            "lxx": lxx,
            "luu": luu,
            "lux": lux,
            "A": A,
            "B": B,
        }

    def value_and_grad(self, U: np.ndarray, lam: np.ndarray, mu: float):
        """Augmented-Lagrangian merit and its adjoint gradient."""
        ex = self.expand(U, lam, mu)
        return ex["value"], ex["grad"], ex["states"], ex["gvals"]

    def lagrangian_grad(self, U: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Gradient of potential + lam' g(U) with fixed multipliers."""
        pp = self.pp
        states = self.states_of(U)
        err = states - pp.reference
        gx_extra = np.zeros((self.tau + 1, self.n))
        gu_extra = np.zeros((self.tau + 1, self.m))
        if self.c > 0:
            Gx, Gu = self._constraint_jacobians(states, U)
            gx_extra = np.einsum("tcn,tc->tn", Gx, lam)
            gu_extra = np.einsum("tcm,tc->tm", Gu, lam)
        cost_x = 2.0 * err @ pp.Q.T
        cost_x[-1] = 2.0 * pp.Q_tau @ err[-1]
        cost_x += gx_extra
        grad_u = 2.0 * U @ pp.R.T + gu_extra
        A, B = pp.dynamics.jacobian(states[:-1], U[:-1])
        adj = cost_x[-1]
        for t in range(self.tau - 1, -1, -1):
            grad_u[t] += B[t].T @ adj
            adj = cost_x[t] + A[t].T @ adj
        return grad_u


def _chol_solve(M: np.ndarray, rhs: np.ndarray):
    """Solve M x = rhs through Cholesky; raises LinAlgError when indefinite."""
    L = np.linalg.cholesky(M)
    return scipy.linalg.cho_solve((L, True), rhs, check_finite=False)


def _descend(
    prob: _ShootingProblem,
    U: np.ndarray,
    lam: np.ndarray,
    mu: float,
    gtol: float,
    maxiter: int,
) -> tuple[np.ndarray, float, float, int]:
    """Minimize the augmented-Lagrangian merit over the control sequence.

    Riccati backward sweep over the Gauss-Newton cost expansion gives a
    feedforward/feedback update; a backtracking line search on the nonlinear
    forward rollout accepts it. Levenberg regularization handles indefinite
    expansions near constraint kinks.
    """
    tau, n, m = prob.tau, prob.n, prob.m
    dyn = prob.pp.dynamics
    reg = 0.0
    eye_m = np.eye(m)
    ex = prob.expand(U, lam, mu)
    value = ex["value"]
    grad_inf = float(np.abs(ex["grad"]).max())
    iters = 0
    value_window: list[float] = []

    while iters < maxiter and grad_inf > gtol:
        # plateau exit: ten iterations without meaningful merit progress
        value_window.append(value)
        if len(value_window) > 10:
            old = value_window.pop(0)
            if old - value <= 1e-9 * (1.0 + abs(value)):
                break
        iters += 1
        A, B = ex["A"], ex["B"]
        lx, lu, lxx, luu, lux = ex["lx"], ex["lu"], ex["lxx"], ex["luu"], ex["lux"]
        states = ex["states"]

        backward_ok = False
        while not backward_ok:
            try:
                k = np.empty((tau + 1, m))
                K = np.empty((tau + 1, m, n))
                # final control only shapes the last stage cost
                rhs = np.column_stack([lu[tau], lux[tau]])
                sol = _chol_solve(luu[tau] + reg * eye_m, rhs)
                k[tau], K[tau] = -sol[:, 0], -sol[:, 1:]
                Vx = lx[tau] + K[tau].T @ lu[tau] + lux[tau].T @ k[tau] \
                    + K[tau].T @ luu[tau] @ k[tau]
                Vxx = lxx[tau] + K[tau].T @ luu[tau] @ K[tau] \
                    + K[tau].T @ lux[tau] + lux[tau].T @ K[tau]
                Vxx = 0.5 * (Vxx + Vxx.T)
                d1 = float(k[tau] @ lu[tau])
                d2 = float(k[tau] @ luu[tau] @ k[tau])
                for t in range(tau - 1, -1, -1):
                    Qx = lx[t] + A[t].T @ Vx
                    Qu = lu[t] + B[t].T @ Vx
                    Qxx = lxx[t] + A[t].T @ Vxx @ A[t]
                    Quu = luu[t] + B[t].T @ Vxx @ B[t]
                    Qux = lux[t] + B[t].T @ Vxx @ A[t]
                    rhs = np.column_stack([Qu, Qux])
                    sol = _chol_solve(Quu + reg * eye_m, rhs)
                    k[t], K[t] = -sol[:, 0], -sol[:, 1:]
                    Vx = Qx + K[t].T @ Quu @ k[t] + K[t].T @ Qu + Qux.T @ k[t]
                    Vxx = Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t]
                    Vxx = 0.5 * (Vxx + Vxx.T)
                    d1 += float(k[t] @ Qu)
                    d2 += float(k[t] @ Quu @ k[t])
                backward_ok = True
            except np.linalg.LinAlgError:
                reg = max(reg * 10.0, 1e-6)
                if reg > 1e10:
                    return U, value, grad_inf, iters

        def forward(alpha: float):
            U_new = np.empty_like(U)
            x = prob.pp.x0.copy()
            x_traj = np.empty((tau + 1, n))
            x_traj[0] = x
            for t in range(tau):
                du = alpha * k[t] + K[t] @ (x - states[t])
                U_new[t] = U[t] + du
                x = dyn.step(x, U_new[t])
                x_traj[t + 1] = x
            U_new[tau] = U[tau] + alpha * k[tau] + K[tau] @ (x - states[tau])
            return U_new, x_traj

        # near the optimum the merit's float resolution hides real progress;
        # switch from an Armijo test to plain gradient descent on full steps
        expected_full = d1 + 0.5 * d2
        if abs(expected_full) <= 1e-10 * (1.0 + abs(value)):
            U_new, x_traj = forward(1.0)
            if not np.isfinite(x_traj).all():
                break
            ex_new = prob.expand(U_new, lam, mu)
            new_grad = float(np.abs(ex_new["grad"]).max())
            if new_grad < grad_inf:
                U, ex = U_new, ex_new
                value, grad_inf = ex["value"], new_grad
                continue
            break

        accepted = False
        alpha = 1.0
        for _ in range(8):
            U_new, x_traj = forward(alpha)
            if not np.isfinite(x_traj).all():
                alpha *= 0.5
                continue
            value_new = prob.merit_of(x_traj, U_new, lam, mu)
            expected = alpha * d1 + 0.5 * alpha * alpha * d2
            if value_new <= value + 1e-4 * min(expected, 0.0) and np.isfinite(value_new):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            reg = max(reg * 5.0, 1e-4)
            if reg > 1e10:
                break
            continue

        if alpha == 1.0:
            reg *= 0.5
            if reg < 1e-12:
                reg = 0.0
        U = U_new
        ex = prob.expand(U, lam, mu)
        value = ex["value"]
        grad_inf = float(np.abs(ex["grad"]).max())
    return U, value, grad_inf, iters


def project_to_rollout(pp: PotentialProblem, target: JointTrajectory,
                       maxiter: int = 30) -> np.ndarray:
    """Controls whose rollout best tracks a (possibly inconsistent) trajectory.

    The tracking residual cannot reach zero for targets off the rollout
    manifold, so the solve stops at a moderate gradient tolerance; basin
    fidelity is what matters here, not precision.
    """
    track = PotentialProblem(
        Q=np.eye(pp.n),
        Q_tau=np.eye(pp.n),
        R=1e-6 * np.eye(pp.m),
        reference=target.states,
        x0=pp.x0,
        dynamics=pp.dynamics,
        constraints=None,
        horizon=pp.horizon,
        dt=pp.dt,
    )
    prob = _ShootingProblem(track)
    lam = np.zeros((pp.horizon + 1, 0))
    U, _, _, _ = _descend(prob, target.controls.copy(), lam, 1.0,
                          gtol=1e-3, maxiter=maxiter)
    return U


def solve_constrained(
    pp: PotentialProblem,
    warm_start: JointTrajectory,
    cfg: RefinerConfig = RefinerConfig(),
) -> RefinedEquilibrium:
    """Refine a warm start to a local minimizer of the potential problem.

    Returns the best iterate with ``converged=False`` rather than raising
    when the budget runs out; callers decide what a failed polish means.
    """
    cfg.validate()
    prob = _ShootingProblem(pp, cfg.fd_step)
    tau, m, c = pp.horizon, pp.m, pp.constraint_dim
    if warm_start.controls.shape != (tau + 1, m):
        raise ConfigurationError(
            f"warm start controls must be ({tau + 1}, {m}), got {warm_start.controls.shape}"
        )

    U = warm_start.controls.copy()
    rolled = prob.states_of(U)
    if float(np.abs(rolled - warm_start.states).max()) > 1e-6:
        U = project_to_rollout(pp, warm_start)

    lam = np.zeros((tau + 1, c))
    mu = cfg.mu0
    merit_history: list[tuple[float, float]] = []
    converged = False
    prev_violation = np.inf
    outer_used = 0

    for outer in range(cfg.outer_iterations):
        outer_used = outer + 1
        # loose inner tolerance while infeasible, tight once feasibility is near
        feasibility_phase = prev_violation > 10.0 * cfg.eps_constraint
        gtol = 1e-2 if feasibility_phase else 0.5 * cfg.eps_stationarity
        start_val = prob.merit_of(prob.states_of(U), U, lam, mu)
        U, end_val, _, _ = _descend(prob, U, lam, mu, gtol, cfg.inner_iterations)
        merit_history.append((float(start_val), float(end_val)))

        states = prob.states_of(U)
        gvals = prob.constraints_of(states, U)
        violation = float(gvals.max()) if c > 0 else 0.0
        if c > 0:
            lam = np.maximum(0.0, lam + mu * gvals)
        grad_inf = float(np.abs(prob.lagrangian_grad(U, lam)).max())
        if violation <= cfg.eps_constraint and grad_inf <= cfg.eps_stationarity:
            converged = True
            break
        if violation > cfg.eps_constraint and violation > 0.1 * prev_violation:
            # double the growth while still far from feasible
            factor = cfg.penalty_growth * (2.0 if violation > 1e-1 else 1.0)
            mu = min(mu * factor, MU_MAX)
        prev_violation = max(violation, 0.0)

    states = prob.states_of(U)
    traj = JointTrajectory(states, U)
    gvals = prob.constraints_of(states, U)
    stationarity = _per_agent_stationarity(pp, prob, U, lam)
    return RefinedEquilibrium(
        trajectory=traj,
        potential=prob.potential_of(states, U),
        max_violation=float(gvals.max()) if c > 0 else 0.0,
        stationarity=stationarity,
        converged=converged and bool(np.all(stationarity <= cfg.eps_stationarity)),
        iterations=outer_used,
        multipliers=lam if c > 0 else None,
        merit_history=tuple(merit_history),
    )


def _per_agent_stationarity(pp, prob, U, lam) -> np.ndarray:
    """Per-agent blocks of the Lagrangian gradient at the final iterate.

    Unilateral changes move the potential by exactly the changing agent's
    cost, so each block doubles as that agent's own stationarity residual.
    """
    grad = prob.lagrangian_grad(U, lam)
    dims = pp.dynamics.input_dims
    offsets = np.cumsum([0] + list(dims))
    return np.array(
        [
            float(np.abs(grad[:, offsets[i]:offsets[i + 1]]).max())
            for i in range(len(dims))
        ]
    )


def merit_monotone(eq: RefinedEquilibrium, tol: float = 1e-8) -> bool:
    """Health check: every inner solve decreased its merit (up to tolerance)."""
    return all(end <= start + tol * (1.0 + abs(start)) for start, end in eq.merit_history)


# ---------------------------------------------------------------------------
# Local-equilibrium certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentCheck:
    worst_improvement: float
    feasible_samples: int
    stationarity: float


@dataclass(frozen=True)
class GneCertificate:
    """Evidence from sampled unilateral deviations and first-order residuals."""

    agents: tuple[AgentCheck, ...]
    radius: float
    samples: int
    improvement_tol: float
    stationarity_tol: float

    @property
    def worst_improvement(self) -> float:
        return max(a.worst_improvement for a in self.agents)

    @property
    def max_stationarity(self) -> float:
        return max(a.stationarity for a in self.agents)

    @property
    def passed(self) -> bool:
        return all(
            a.feasible_samples > 0
            and a.worst_improvement <= self.improvement_tol
            and a.stationarity <= self.stationarity_tol
            for a in self.agents
        )

    def describe(self) -> str:
        rows = [
            f"agent {i}: worst improvement {a.worst_improvement:.3e} "
            f"({a.feasible_samples} feasible samples), "
            f"stationarity {a.stationarity:.3e}"
            for i, a in enumerate(self.agents)
        ]
        verdict = "PASS" if self.passed else "FAIL"
        return f"local equilibrium certificate: {verdict}\n" + "\n".join(rows)


def _agent_rollout(model, x0_i, controls_i):
    steps = controls_i.shape[0] - 1
    out = np.empty((steps + 1, x0_i.shape[-1]))
    out[0] = x0_i
    for t in range(steps):
        out[t + 1] = model.step(out[t], controls_i[t])
    return out


def _deviation_norm(base: JointTrajectory, other: JointTrajectory) -> float:
    dx = base.states - other.states
    du = base.controls - other.controls
    return float(np.sqrt(np.sum(dx * dx) + np.sum(du * du)))


def _agent_cost_arrays(agent, states_i, controls_i) -> float:
    err = states_i - agent.reference
    stage = float(np.einsum("ti,ij,tj->", err[:-1], agent.Q, err[:-1]))
    terminal = float(err[-1] @ agent.Q_tau @ err[-1])
    control = float(np.einsum("ti,ij,tj->", controls_i, agent.R, controls_i))
    return stage + terminal + control


def check_local_gne(
    game: GameSpec,
    eq: RefinedEquilibrium,
    radius: float = 0.5,
    samples: int = 200,
    rng: Optional[np.random.Generator] = None,
    improvement_tol: float = 1e-4,
    stationarity_tol: float = 1e-4,
    feasibility_tol: float = 0.0,
    active_tol: float = 1e-3,
    precondition_tol: float = 1e-3,
) -> GneCertificate:
    """Probe the no-profitable-unilateral-deviation property of a solution.

    For each agent: draw feasible random control deviations whose combined
    state+control displacement stays within ``radius`` (everyone else frozen)
    and record the best cost reduction found, then measure a first-order
    stationarity residual from finite differences, projecting the cost
    gradient onto the active constraint gradients with nonnegative
    multipliers. Both probes are deliberately independent of the refiner's
    own gradients.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    base = eq.trajectory
    gvals = eval_constraints(game, base)
    if gvals.size and float(gvals.max()) > precondition_tol:
        raise ConfigurationError(
            f"certificate requires a feasible base trajectory "
            f"(max violation {float(gvals.max()):.3e} > {precondition_tol:.1e})"
        )

    from .registry import get_dynamics

    checks = []
    cons = game.constraints()
    for i, agent in enumerate(game.agents):
        model = get_dynamics(agent.dynamics_id, game.dt)
        xs_i = base.agent_states(game, i)
        us_i = base.agent_controls(game, i)
        base_cost = _agent_cost_arrays(agent, xs_i, us_i)

        worst = -np.inf
        feasible = 0
        for _ in range(samples):
            delta = rng.standard_normal(us_i.shape)
            delta *= radius / max(np.linalg.norm(delta), 1e-12)
            delta *= rng.uniform(0.05, 1.0)
            trial_u = us_i + delta
            trial_x = _agent_rollout(model, xs_i[0], trial_u)
            mixed = base.with_agent(game, i, trial_x, trial_u)
            dev = _deviation_norm(base, mixed)
            for _ in range(4):
                if dev <= radius:
                    break
                delta *= 0.9 * radius / dev
                trial_u = us_i + delta
                trial_x = _agent_rollout(model, xs_i[0], trial_u)
                mixed = base.with_agent(game, i, trial_x, trial_u)
                dev = _deviation_norm(base, mixed)
            if dev > radius:
                continue
            if cons is not None:
                g_mixed = np.asarray(cons.fn(mixed.states, mixed.controls))
                if float(g_mixed.max()) > feasibility_tol:
                    continue
            feasible += 1
            improvement = base_cost - _agent_cost_arrays(agent, trial_x, trial_u)
            worst = max(worst, improvement)
        if feasible == 0:
            worst = np.inf  # inconclusive probe counts as failure
        stat = _fd_agent_stationarity(game, base, i, model, active_tol)
        checks.append(
            AgentCheck(
                worst_improvement=float(worst),
                feasible_samples=feasible,
                stationarity=float(stat),
            )
        )
    return GneCertificate(
        agents=tuple(checks),
        radius=radius,
        samples=samples,
        improvement_tol=improvement_tol,
        stationarity_tol=stationarity_tol,
    )


def _fd_agent_stationarity(game, base, i, model, active_tol, h: float = 1e-6):
    """Finite-difference projected-gradient residual for one agent's problem."""
    agent = game.agents[i]
    xs_i = base.agent_states(game, i).copy()
    us_i = base.agent_controls(game, i).copy()
    cons = game.constraints()

    def agent_cost_of(controls_i):
        states_i = _agent_rollout(model, xs_i[0], controls_i)
        return _agent_cost_arrays(agent, states_i, controls_i)

    def constraints_of(controls_i):
        states_i = _agent_rollout(model, xs_i[0], controls_i)
        mixed = base.with_agent(game, i, states_i, controls_i)
        return np.asarray(cons.fn(mixed.states, mixed.controls))

    dim = us_i.size
    grad = np.empty(dim)
    flat = us_i.ravel().copy()
    for k in range(dim):
        bump = np.zeros(dim)
        bump[k] = h
        grad[k] = (
            agent_cost_of((flat + bump).reshape(us_i.shape))
            - agent_cost_of((flat - bump).reshape(us_i.shape))
        ) / (2.0 * h)

    if cons is None:
        return np.abs(grad).max()

    g0 = constraints_of(us_i)
    active = np.argwhere(g0 >= -active_tol)
    if len(active) == 0:
        return np.abs(grad).max()
    jac = np.empty((len(active), dim))
    for k in range(dim):
        bump = np.zeros(dim)
        bump[k] = h
        gp = constraints_of((flat + bump).reshape(us_i.shape))
        gm = constraints_of((flat - bump).reshape(us_i.shape))
        diff = (gp - gm) / (2.0 * h)
        jac[:, k] = diff[tuple(active.T)]
    # KKT residual: min over multipliers >= 0 of ||grad + jac' mult||
    mult, _ = scipy.optimize.nnls(jac.T, -grad)
    return np.abs(grad + jac.T @ mult).max()


# ---------------------------------------------------------------------------
# Deduplication
# ---------------------------------------------------------------------------

def dedup_equilibria(
    eqs: Sequence[RefinedEquilibrium],
    dedup_distance: float = 1.0,
    layout: Optional[tuple] = None,
) -> EquilibriumSet:
    """Greedy dedup under the joint-position Frechet metric.

    The lowest-potential member of each ball survives; output is ordered by
    potential value.
    """
    if not eqs:
        return EquilibriumSet(modes=())

    def polyline(eq):
        states = eq.trajectory.states
        if layout is None:
            return states
        return np.concatenate(
            [states[:, off:off + width] for off, width in layout], axis=1
        )

    order = sorted(range(len(eqs)), key=lambda k: eqs[k].potential)
    kept: list[int] = []
    for k in order:
        pk = polyline(eqs[k])
        if all(
            discrete_frechet(pk, polyline(eqs[j])) > dedup_distance for j in kept
        ):
            kept.append(k)
    return EquilibriumSet(modes=tuple(eqs[k] for k in kept))
