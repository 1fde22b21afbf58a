"""Trajectory clustering: discrete Frechet metric plus agglomerative grouping.

Filtered trajectories bunch around each posterior mode; grouping them under
the discrete Frechet distance and averaging each group yields one warm-start
candidate per mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.cluster.hierarchy as sch
import scipy.spatial.distance as ssd

from .game import ConfigurationError, GameSpec, JointTrajectory

POSITION_DIMS = 2


def discrete_frechet(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Frechet distance between two polylines (Euclidean ground metric).

    Dynamic program over the monotone-coupling lattice, swept along
    antidiagonals so each wavefront vectorizes.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigurationError("polylines must be nonempty")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    na, nb = d.shape
    C = np.empty_like(d)
    C[:, 0] = np.maximum.accumulate(d[:, 0])
    C[0, :] = np.maximum.accumulate(d[0, :])
    for k in range(2, na + nb - 1):
        lo = max(1, k - nb + 1)
        hi = min(na - 1, k - 1)
        if lo > hi:
            continue
        i = np.arange(lo, hi + 1)
        j = k - i
        reach = np.minimum(C[i - 1, j], np.minimum(C[i - 1, j - 1], C[i, j - 1]))
        C[i, j] = np.maximum(d[i, j], reach)
    return float(C[-1, -1])


def position_layout(game: GameSpec) -> tuple[tuple[int, int], ...]:
    """(offset, width) of each agent's position block inside the joint state."""
    return tuple(
        (off, min(POSITION_DIMS, game.agents[i].state_dim))
        for i, off in enumerate(game.state_offsets)
    )


@dataclass(frozen=True)
class ClusterConfig:
    """Linkage rule, dendrogram cut distance, and the distance basis.

    ``layout`` lists (offset, width) position blocks per agent; None treats
    the whole state row as one point. With ``basis="joint"`` all agents'
    positions concatenate into one polyline point per step; ``per_agent``
    takes the worst per-agent distance instead.
    """

    linkage: str = "average"          # average | single | complete
    cut_distance: float = 2.5
    min_cluster_size: int = 2
    basis: str = "joint"              # joint | per_agent
    layout: Optional[tuple] = None

    def validate(self) -> None:
        if self.linkage not in ("average", "single", "complete"):
            raise ConfigurationError(f"unknown linkage {self.linkage!r}")
        if self.cut_distance <= 0:
            raise ConfigurationError("cut distance must be positive")
        if self.min_cluster_size < 1:
            raise ConfigurationError("min cluster size must be >= 1")
        if self.basis not in ("joint", "per_agent"):
            raise ConfigurationError(f"unknown distance basis {self.basis!r}")


def _polylines(traj: JointTrajectory, cfg: ClusterConfig) -> list[np.ndarray]:
    if cfg.layout is None:
        return [traj.states]
    blocks = [traj.states[:, off:off + width] for off, width in cfg.layout]
    if cfg.basis == "joint":
        return [np.concatenate(blocks, axis=1)]
    return blocks


def trajectory_distance(a: JointTrajectory, b: JointTrajectory,
                        cfg: ClusterConfig) -> float:
    pa = _polylines(a, cfg)
    pb = _polylines(b, cfg)
    return max(discrete_frechet(x, y) for x, y in zip(pa, pb))


def pairwise_distances(trajs: Sequence[JointTrajectory],
                       cfg: ClusterConfig) -> np.ndarray:
    """Symmetric zero-diagonal matrix of trajectory distances."""
    cfg.validate()
    if len(trajs) == 0:
        raise ConfigurationError("need at least one trajectory")
    polys = [_polylines(t, cfg) for t in trajs]
    J = len(trajs)
    D = np.zeros((J, J))
    for i in range(J):
        for j in range(i + 1, J):
            D[i, j] = D[j, i] = max(
                discrete_frechet(x, y) for x, y in zip(polys[i], polys[j])
            )
    return D


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    representative: JointTrajectory
    max_intra_distance: float
    total_weight: float


@dataclass(frozen=True)
class ModeSet:
    """Clusters (largest total weight first) plus indices of dropped outliers."""

    clusters: tuple[Cluster, ...]
    outliers: tuple[int, ...]

    @property
    def representatives(self) -> list[JointTrajectory]:
        return [c.representative for c in self.clusters]

    def __len__(self) -> int:
        return len(self.clusters)


def _mean_trajectory(trajs: Sequence[JointTrajectory]) -> JointTrajectory:
    # anchored mean: identical members reproduce themselves bit-for-bit
    s0, c0 = trajs[0].states, trajs[0].controls
    states = s0 + np.mean([t.states - s0 for t in trajs], axis=0)
    controls = c0 + np.mean([t.controls - c0 for t in trajs], axis=0)
    return JointTrajectory(states, controls)


def cluster_modes(
    trajs: Sequence[JointTrajectory],
    weights: Optional[np.ndarray],
    cfg: ClusterConfig,
) -> ModeSet:
    """Agglomerative clustering cut at ``cut_distance``; mean per cluster.

    Weights only order clusters (heaviest first); representatives are plain
    pointwise means of member trajectories.
    """
    cfg.validate()
    if len(trajs) == 0:
        return ModeSet(clusters=(), outliers=())
    horizons = {t.horizon for t in trajs}
    if len(horizons) != 1:
        raise ConfigurationError("trajectories must share one horizon")
    if weights is None:
        weights = np.full(len(trajs), 1.0 / len(trajs))
    weights = np.asarray(weights, dtype=float)

    if len(trajs) == 1:
        labels = np.array([1])
        D = np.zeros((1, 1))
    else:
        D = pairwise_distances(trajs, cfg)
        Z = sch.linkage(ssd.squareform(D, checks=False), method=cfg.linkage)
        labels = sch.fcluster(Z, t=cfg.cut_distance, criterion="distance")

    clusters = []
    outliers: list[int] = []
    for label in np.unique(labels):
        members = tuple(int(i) for i in np.flatnonzero(labels == label))
        if len(members) < cfg.min_cluster_size:
            outliers.extend(members)
            continue
        sub = [trajs[i] for i in members]
        intra = max(
            (D[i, j] for i in members for j in members if i < j), default=0.0
        )
        clusters.append(
            Cluster(
                members=members,
                representative=_mean_trajectory(sub),
                max_intra_distance=float(intra),
                total_weight=float(weights[list(members)].sum()),
            )
        )
    clusters.sort(key=lambda cl: (-cl.total_weight, cl.members))
    return ModeSet(clusters=tuple(clusters), outliers=tuple(sorted(outliers)))
