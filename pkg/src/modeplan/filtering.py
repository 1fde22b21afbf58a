"""Unscented implicit particle filter over the virtual model.

Each particle carries a complete augmented-state trajectory plus a local
Gaussian (mean, covariance) maintained by an unscented Kalman recursion
around its own sampled path. New states are drawn through the closed-form
implicit map m + sqrt(Sigma) * gamma with gamma standard normal, which puts
samples in high-posterior regions and keeps importance weights healthy, so
distinct posterior modes stay populated without aggressive resampling.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .game import ConfigurationError, JointTrajectory, NumericError
from .virtual import VirtualModel

INIT_STATE_VAR = 1e-6  # variance assigned to the pinned initial state block

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class UkfConfig:
    """Unscented-transform spread parameters and the covariance jitter floor."""

    alpha: float = 0.5
    beta: float = 2.0
    kappa: float = 0.0
    jitter: float = 1e-10

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("ukf alpha must be in (0, 1]")
        if self.kappa < 0:
            raise ConfigurationError("ukf kappa must be >= 0")
        if self.jitter < 0:
            raise ConfigurationError("jitter must be >= 0")

    def weights(self, dim: int) -> tuple[float, np.ndarray, np.ndarray]:
        """(scaling c, mean weights, covariance weights) for 2*dim+1 points."""
        lam = self.alpha ** 2 * (dim + self.kappa) - dim
        c = dim + lam
        wm = np.full(2 * dim + 1, 1.0 / (2.0 * c))
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + (1.0 - self.alpha ** 2 + self.beta)
        return c, wm, wc


@dataclass(frozen=True)
class FilterConfig:
    """Particle count, seeding, resampling policy, and initial control spread."""

    particles: int = 50
    seed: int = 0
    resample: str = "never"           # "never" | "ess_threshold"
    resample_ratio: float = 0.5
    sigma0: float = 0.5
    ukf: UkfConfig = field(default_factory=UkfConfig)
    record_moments: bool = False

    def validate(self) -> None:
        if self.particles < 1:
            raise ConfigurationError("particle count must be >= 1")
        if self.resample not in ("never", "ess_threshold"):
            raise ConfigurationError(f"unknown resample policy {self.resample!r}")
        if not 0.0 < self.resample_ratio <= 1.0:
            raise ConfigurationError("resample ratio must be in (0, 1]")
        if self.sigma0 <= 0:
            raise ConfigurationError("sigma0 must be positive")
        self.ukf.validate()


@dataclass
class Particle:
    """One trajectory-in-progress with its local Gaussian and log-weight."""

    history: np.ndarray   # (t+1, n+m) sampled augmented states
    mean: np.ndarray      # (n+m,) posterior mean at the current step
    cov: np.ndarray       # (n+m, n+m) posterior covariance
    log_weight: float = 0.0

    @property
    def state(self) -> np.ndarray:
        return self.history[-1]


def safe_cholesky(P: np.ndarray, jitter: float, max_escalations: int = 8) -> np.ndarray:
    """Lower Cholesky factor; jitter is added only when the clean attempt fails."""
    P = np.asarray(P, dtype=float)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(P.shape[-1])
    bump = max(jitter, np.finfo(float).tiny)
    for _ in range(max_escalations):
        try:
            return np.linalg.cholesky(P + bump * eye)
        except np.linalg.LinAlgError:
            bump *= 10.0
    raise NumericError("covariance square root failed after jitter escalation")


def _safe_cholesky_batch(P: np.ndarray, jitter: float) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return np.stack([safe_cholesky(Pj, jitter) for Pj in P])


def _sigma_points(mean: np.ndarray, chol: np.ndarray, c: float) -> np.ndarray:
    """(..., 2L+1, L) sigma point set from mean and lower Cholesky factor."""
    scaled = np.sqrt(c) * np.swapaxes(chol, -1, -2)  # rows are scaled columns
    center = mean[..., None, :]
    return np.concatenate([center, center + scaled, center - scaled], axis=-2)


def ukf_moments(
    mean: np.ndarray,
    cov: np.ndarray,
    fn: Callable[[np.ndarray], np.ndarray],
    noise_cov: np.ndarray,
    cfg: UkfConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unscented transform of a Gaussian through ``fn`` with additive noise.

    Returns the transformed mean, covariance (noise included), and the
    input-output cross covariance needed for a Kalman update. Exact for
    linear maps.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    dim = mean.shape[-1]
    c, wm, wc = cfg.weights(dim)
    S = safe_cholesky(cov, cfg.jitter)
    pts = _sigma_points(mean, S, c)
    out = np.asarray(fn(pts), dtype=float)
    mean_out = wm @ out
    d_out = out - mean_out
    cov_out = np.einsum("s,sa,sb->ab", wc, d_out, d_out) + noise_cov
    d_in = pts - mean
    cross = np.einsum("s,sa,sb->ab", wc, d_in, d_out)
    return mean_out, cov_out, cross


def ukf_step(
    p: Particle,
    vm: VirtualModel,
    y_t: np.ndarray,
    terminal: bool,
    cfg: UkfConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One predict + measurement update around a particle's last sample.

    Returns (posterior mean, posterior covariance, predicted mean, predicted
    covariance). The prediction centers on the particle's sampled state, not
    its previous posterior mean: the local Gaussian tracks each particle.
    """
    L = vm.aug_dim
    process_noise = vm.Rbar + cfg.jitter * np.eye(L)
    m_pred, P_pred, _ = ukf_moments(p.state, p.cov, vm.fbar, process_noise, cfg)
    meas_cov = vm.Qbar_tau if terminal else vm.Qbar
    y_pred, S_y, C = ukf_moments(m_pred, P_pred, vm.hbar, meas_cov, cfg)
    K = np.linalg.solve(S_y, C.T).T
    mean = m_pred + K @ (np.asarray(y_t, dtype=float) - y_pred)
    cov = P_pred - K @ S_y @ K.T
    cov = 0.5 * (cov + cov.T)
    return mean, cov, m_pred, P_pred


def implicit_sample(mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator,
                    jitter: float = 1e-12) -> np.ndarray:
    """Draw from N(mean, cov) through the closed-form map mean + sqrt(cov) * gamma."""
    mean = np.asarray(mean, dtype=float)
    S = safe_cholesky(np.asarray(cov, dtype=float), jitter)
    gamma = rng.standard_normal(mean.shape[-1])
    return mean + S @ gamma


def _logpdf_chol(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Gaussian log-density given a lower Cholesky factor; batched over rows."""
    diff = x - mean
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    k = x.shape[-1]
    return -0.5 * (k * LOG_2PI + logdet + np.sum(z * z, axis=-1))


def effective_sample_size(log_weights: np.ndarray) -> float:
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w * w))


def normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    shifted = log_weights - np.max(log_weights)
    w = np.exp(shifted)
    return w / np.sum(w)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling indices for a normalized weight vector."""
    J = len(weights)
    positions = (rng.uniform() + np.arange(J)) / J
    return np.searchsorted(np.cumsum(weights), positions).clip(max=J - 1)


@dataclass
class FilterResult:
    """Filtered trajectories plus weights and run diagnostics."""

    trajectories: list
    log_weights: np.ndarray
    ess_trace: np.ndarray
    resample_steps: list
    warnings: list
    step_ms: np.ndarray
    means: Optional[np.ndarray] = None   # (horizon+1, J, n+m) posterior means
    covs: Optional[np.ndarray] = None    # (horizon+1, J, n+m, n+m)
    pred_means: Optional[np.ndarray] = None
    pred_covs: Optional[np.ndarray] = None

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    def best_index(self) -> int:
        return int(np.argmax(self.log_weights))

    def to_report(self) -> str:
        """Structured text report of filter health."""
        lines = [
            "filter diagnostics v1",
            f"particles: {len(self.trajectories)}",
            f"steps: {len(self.ess_trace)}",
            f"final_ess: {self.ess_trace[-1]:.3f}",
            f"min_ess: {self.ess_trace.min():.3f}",
            f"resample_steps: {','.join(map(str, self.resample_steps)) or 'none'}",
            f"total_ms: {self.step_ms.sum():.2f}",
        ]
        hist, edges = np.histogram(self.weights, bins=10, range=(0.0, 1.0))
        lines.append("weight_histogram:")
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            lines.append(f"  [{lo:.1f},{hi:.1f}): {count}")
        lines.append("ess_trace: " + ",".join(f"{e:.2f}" for e in self.ess_trace))
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def run_filter(vm: VirtualModel, cfg: FilterConfig) -> FilterResult:
    """Run the filter over the whole horizon; returns J complete trajectories.

    Particles initialize with the exact pinned initial state and controls
    drawn from N(0, sigma0^2). Step 0 applies the first virtual measurement
    through the weights only; every later step runs predict, update, implicit
    sampling, and the importance-weight correction
    log p(y | x) + log p(x | pred) - log q(x | posterior).
    """
    cfg.validate()
    J = cfg.particles
    n, m, L = vm.n, vm.m, vm.aug_dim
    tau = vm.horizon
    ukf = cfg.ukf

    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(J + 1)
    rngs = [np.random.default_rng(s) for s in streams[:J]]
    resample_rng = np.random.default_rng(streams[J])

    c_scale, wm, wc = ukf.weights(L)
    eyeL = np.eye(L)
    process_noise = vm.Rbar + ukf.jitter * eyeL
    chol_meas = safe_cholesky(vm.Qbar, 0.0)
    chol_meas_tau = safe_cholesky(vm.Qbar_tau, 0.0)

    # --- initialization -----------------------------------------------------
    x0 = vm.targets[0, :n]
    X = np.empty((J, L))
    X[:, :n] = x0
    for j in range(J):
        X[j, n:] = cfg.sigma0 * rngs[j].standard_normal(m)
    P0 = np.zeros((L, L))
    P0[:n, :n] = INIT_STATE_VAR * np.eye(n)
    P0[n:, n:] = cfg.sigma0 ** 2 * np.eye(m)
    P = np.broadcast_to(P0, (J, L, L)).copy()
    chol0 = chol_meas_tau if tau == 0 else chol_meas
    logw = _logpdf_chol(vm.hbar(X), vm.targets[0], chol0)

    hist = np.empty((tau + 1, J, L))
    hist[0] = X
    ess_trace = np.empty(tau + 1)
    ess_trace[0] = effective_sample_size(logw)
    step_ms = np.zeros(tau + 1)
    resample_steps: list[int] = []
    means = covs = pred_means = pred_covs = None
    if cfg.record_moments:
        means = np.empty((tau + 1, J, L))
        covs = np.empty((tau + 1, J, L, L))
        pred_means = np.empty((tau + 1, J, L))
        pred_covs = np.empty((tau + 1, J, L, L))
        means[0], covs[0] = X, P
        pred_means[0], pred_covs[0] = X, P

    # --- filtering recursion ------------------------------------------------
    for t in range(1, tau + 1):
        tic = time.perf_counter()
        terminal = t == tau
        y_t = vm.targets[t]
        chol_y = chol_meas_tau if terminal else chol_meas
        meas_cov = vm.Qbar_tau if terminal else vm.Qbar

        # predict through the virtual dynamics
        S_prev = _safe_cholesky_batch(P, ukf.jitter)
        pts = _sigma_points(X, S_prev, c_scale)          # (J, 2L+1, L)
        fpts = vm.fbar(pts)
        m_pred = np.einsum("s,jsl->jl", wm, fpts)
        df = fpts - m_pred[:, None, :]
        P_pred = np.einsum("s,jsa,jsb->jab", wc, df, df) + process_noise
        P_pred = 0.5 * (P_pred + np.swapaxes(P_pred, -1, -2))

        # measurement update against the virtual target
        S_pred = _safe_cholesky_batch(P_pred, ukf.jitter)
        pts2 = _sigma_points(m_pred, S_pred, c_scale)
        hpts = vm.hbar(pts2)
        y_hat = np.einsum("s,jsd->jd", wm, hpts)
        dh = hpts - y_hat[:, None, :]
        S_y = np.einsum("s,jsa,jsb->jab", wc, dh, dh) + meas_cov
        dx2 = pts2 - m_pred[:, None, :]
        C = np.einsum("s,jsa,jsb->jab", wc, dx2, dh)
        K = np.swapaxes(np.linalg.solve(S_y, np.swapaxes(C, -1, -2)), -1, -2)
        innov = y_t - y_hat
        m_post = m_pred + np.einsum("jab,jb->ja", K, innov)
        P_post = P_pred - K @ S_y @ np.swapaxes(K, -1, -2)
        P_post = 0.5 * (P_post + np.swapaxes(P_post, -1, -2))

        # implicit sampling through the closed-form map
        S_post = _safe_cholesky_batch(P_post, ukf.jitter)
        gamma = np.stack([rngs[j].standard_normal(L) for j in range(J)])
        X = m_post + np.einsum("jab,jb->ja", S_post, gamma)

        # importance correction: target likelihood and prior vs. proposal
        logw = logw + _logpdf_chol(vm.hbar(X), y_t, chol_y)
        logw = logw + _logpdf_chol(X, m_pred, S_pred)
        logw = logw - _logpdf_chol(X, m_post, S_post)

        P = P_post
        hist[t] = X
        if cfg.record_moments:
            means[t], covs[t] = m_post, P_post
            pred_means[t], pred_covs[t] = m_pred, P_pred

        ess = effective_sample_size(logw)
        if (
            cfg.resample == "ess_threshold"
            and J > 1
            and ess < cfg.resample_ratio * J
        ):
            idx = systematic_resample(normalized_weights(logw), resample_rng)
            X = X[idx].copy()
            P = P[idx].copy()
            hist[: t + 1] = hist[: t + 1, idx]
            if cfg.record_moments:
                means[: t + 1] = means[: t + 1, idx]
                covs[: t + 1] = covs[: t + 1, idx]
                pred_means[: t + 1] = pred_means[: t + 1, idx]
                pred_covs[: t + 1] = pred_covs[: t + 1, idx]
            logw = np.zeros(J)
            resample_steps.append(t)
            ess = float(J)
        ess_trace[t] = ess
        step_ms[t] = (time.perf_counter() - tic) * 1e3

    warnings = []
    final_w = normalized_weights(logw)
    if float(final_w.max()) > 0.999 and effective_sample_size(logw) < 2.0 and J > 1:
        warnings.append(
            "particle degeneracy: one particle carries nearly all weight "
            f"(max weight {final_w.max():.4f}, ESS {effective_sample_size(logw):.2f})"
        )

    trajectories = [
        JointTrajectory(states=hist[:, j, :n].copy(), controls=hist[:, j, n:].copy())
        for j in range(J)
    ]
    return FilterResult(
        trajectories=trajectories,
        log_weights=logw,
        ess_trace=ess_trace,
        resample_steps=resample_steps,
        warnings=warnings,
        step_ms=step_ms,
        means=means,
        covs=covs,
        pred_means=pred_means,
        pred_covs=pred_covs,
    )
