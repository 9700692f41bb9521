"""Reconstruction, velocity-coherence, and acceleration losses over KNN
neighborhoods.

The velocity loss penalizes squared velocity differences between each point
and its k nearest canonical-space neighbors, weighted by normalized inverse
distance. The acceleration loss is the mean absolute component of the
analytic acceleration (an L2-norm alternative is available via `mode`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splinefield import autodiff as ad
from splinefield.autodiff import Var

DIST_EPS = 1e-8        # distance floor; also guards duplicate points
_BRUTE_MAX = 4096      # below this, use the exhaustive scan with stable ties


@dataclass(frozen=True)
class NeighborGraph:
    """k nearest neighbors per point with normalized inverse-distance weights."""

    k: int
    indices: np.ndarray   # [N_p, k] int
    weights: np.ndarray   # [N_p, k] float, rows sum to 1

    def subgraph_closure(self, rows: np.ndarray):
        """Close a batch over its neighbors for batched loss evaluation.

        Returns (needed_global_ids, local_rows, local_nbrs, weight_rows):
        velocities evaluated for `needed_global_ids` can be indexed with the
        local arrays to reproduce the loss restricted to `rows`.
        """
        rows = np.asarray(rows)
        needed = np.unique(np.concatenate([rows, self.indices[rows].ravel()]))
        remap = np.full(int(needed.max()) + 1, -1, dtype=np.int64)
        remap[needed] = np.arange(len(needed))
        return needed, remap[rows], remap[self.indices[rows]], self.weights[rows]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0    # weight of the velocity-coherence term
    beta: float = 0.01    # weight of the acceleration term
    k: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Exact k nearest neighbors (self excluded), ties broken by ascending index."""
    n = points.shape[0]
    if n <= k:
        raise ValueError(f"need more points than neighbors: N={n}, k={k}")
    if n <= _BRUTE_MAX:
        d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        order = np.lexsort((np.broadcast_to(np.arange(n), (n, n)), d2), axis=1)
        return order[:, :k]
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = idx[i][idx[i] != i][:k]
        out[i] = row
    return out


def build_knn(points: np.ndarray, k: int) -> NeighborGraph:
    """KNN graph with row-normalized inverse-distance weights."""
    points = np.asarray(points, dtype=np.float64)
    idx = knn_indices(points, k)
    d = np.linalg.norm(points[:, None, :] - points[idx], axis=2)
    w = 1.0 / (d + DIST_EPS)
    w /= w.sum(axis=1, keepdims=True)
    return NeighborGraph(k=k, indices=idx, weights=w)


def velocity_loss(velocities, graph: NeighborGraph):
    """Mean over points of sum_j w_ij ||v_i - v_j||^2 over the full graph."""
    rows = np.arange(graph.indices.shape[0])
    return velocity_loss_rows(velocities, rows, graph.indices, graph.weights)


def velocity_loss_rows(velocities, rows, nbrs, weights):
    """Velocity loss restricted to `rows`; `velocities` is [N, 3] (Var or
    array) covering both the rows and their neighbor indices `nbrs`."""
    rows = np.asarray(rows)
    if isinstance(velocities, Var):
        vi = ad.reshape(ad.take(velocities, rows), (len(rows), 1, 3))
        vn = ad.take(velocities, nbrs)
        diff = ad.add(vi, ad.scale(vn, -1.0))
        sq = ad.vsum(ad.mul(diff, diff), axis=2)
        return ad.vmean(ad.vsum(ad.mul(sq, weights), axis=1))
    v = np.asarray(velocities, dtype=np.float64)
    diff = v[rows][:, None, :] - v[nbrs]
    return float(np.mean(np.sum(weights * np.sum(diff ** 2, axis=2), axis=1)))


def acceleration_loss(accels, mode: str = "l1"):
    """Mean |a|: per-component absolute mean ('l1', default) or mean norm ('l2')."""
    if isinstance(accels, Var):
        if mode == "l1":
            return ad.vmean(ad.absolute(accels))
        if mode == "l2":
            return ad.vmean(ad.sqrt(ad.vsum(ad.mul(accels, accels), axis=1), eps=1e-24))
        raise ValueError(f"unknown mode {mode!r}")
    a = np.asarray(accels, dtype=np.float64)
    if mode == "l1":
        return float(np.mean(np.abs(a)))
    if mode == "l2":
        return float(np.mean(np.linalg.norm(a, axis=1)))
    raise ValueError(f"unknown mode {mode!r}")


def recon_loss_l1(pred, gt):
    """Mean absolute componentwise error."""
    gt = np.asarray(gt, dtype=np.float64)
    pv = pred.value if isinstance(pred, Var) else np.asarray(pred, dtype=np.float64)
    if pv.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pv.shape} vs gt {gt.shape}")
    if isinstance(pred, Var):
        return ad.vmean(ad.absolute(ad.add(pred, -gt)))
    return float(np.mean(np.abs(pv - gt)))


def total_loss(recon, lv, lacc, cfg: LossConfig):
    """recon + alpha * lv + beta * lacc (works on Vars and floats)."""
    out = recon
    if cfg.alpha != 0.0:
        out = out + cfg.alpha * lv
    if cfg.beta != 0.0:
        out = out + cfg.beta * lacc
    return out
