"""Evaluation metrics: end-point error and Moran's-I spatial coherence.

The coherence score measures spatial autocorrelation of frame-to-frame
motion vectors. For each point we gather the K nearest points at the
frame's start positions (the point itself is always its own nearest
neighbor, so a neighborhood holds K points including the center), weight
pairs by inverse distance, and normalize by the neighborhood's motion
energy:

    I_i = (K / sum_jk w_jk) * (sum_jk w_jk <v_j, v_k>) / (sum_j ||v_j||^2)

This yields exactly 1 for uniform motion and ~0 for independent noise.
The classical mean-centered global Moran's I is available separately for
sensitivity analysis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

ZERO_MOTION_EPS = 1e-12


@dataclass(frozen=True)
class CoherenceReport:
    per_frame: list          # mean I per non-skipped frame transition
    frame_ids: list          # transition start frames that were scored
    skipped: list            # transitions skipped for zero motion
    k: int

    @property
    def mean(self) -> float:
        if not self.per_frame:
            return float("nan")
        return float(np.mean(self.per_frame))

    @property
    def no_motion(self) -> bool:
        return not self.per_frame


def motion_vectors(positions: np.ndarray) -> np.ndarray:
    """Consecutive-frame differences of a [T, N_p, 3] trajectory."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[0] < 2:
        raise ValueError(f"need [T>=2, N_p, 3] positions, got {positions.shape}")
    return positions[1:] - positions[:-1]


def _neighborhoods(positions: np.ndarray, k: int, brute: bool) -> np.ndarray:
    """K-point neighborhoods (self included) per point."""
    n = positions.shape[0]
    if n <= k:
        raise ValueError(f"need more points than K: N={n}, K={k}")
    if brute:
        d2 = np.sum((positions[:, None, :] - positions[None, :, :]) ** 2, axis=2)
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    tree = cKDTree(positions)
    _, idx = tree.query(positions, k=k)
    return idx


def morans_i_frame(positions: np.ndarray, vectors: np.ndarray, k: int = 10,
                   brute_force: bool = False):
    """Mean Moran's I of one frame's motion vectors, or None if the frame
    has no motion (all vectors below 1e-12)."""
    positions = np.asarray(positions, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    if positions.shape != vectors.shape or positions.ndim != 2:
        raise ValueError("positions and vectors must both be [N_p, 3]")
    if np.all(np.linalg.norm(vectors, axis=1) < ZERO_MOTION_EPS):
        return None
    nbhd = _neighborhoods(positions, k, brute_force)   # [N, K]
    p = positions[nbhd]                                # [N, K, 3]
    v = vectors[nbhd]                                  # [N, K, 3]
    dist = np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=3)
    with np.errstate(divide="ignore"):
        w = 1.0 / dist
    eye = np.eye(k, dtype=bool)
    w[:, eye] = 0.0
    w[~np.isfinite(w)] = 0.0   # coincident points contribute no pair weight
    dots = np.einsum("nkc,nlc->nkl", v, v)
    num = np.einsum("nkl,nkl->n", w, dots)
    wsum = w.sum(axis=(1, 2))
    energy = np.einsum("nkc,nkc->n", v, v)
    valid = (wsum > 0) & (energy > ZERO_MOTION_EPS ** 2)
    scores = (k / wsum[valid]) * num[valid] / energy[valid]
    if scores.size == 0:
        return None
    return float(np.mean(scores))


def morans_i_sequence(positions: np.ndarray, k: int = 10,
                      brute_force: bool = False) -> CoherenceReport:
    """Mean Moran's I over all frame transitions of a [T, N_p, 3] trajectory."""
    vectors = motion_vectors(positions)
    per_frame, frame_ids, skipped = [], [], []
    for t in range(vectors.shape[0]):
        score = morans_i_frame(positions[t], vectors[t], k, brute_force)
        if score is None:
            skipped.append(t)
        else:
            per_frame.append(score)
            frame_ids.append(t)
    return CoherenceReport(per_frame=per_frame, frame_ids=frame_ids,
                           skipped=skipped, k=k)


def global_morans_i(positions: np.ndarray, values: np.ndarray, k: int = 10) -> float:
    """Classical mean-centered global Moran's I, applied per component and
    averaged; kept for sensitivity analysis against the ratio above."""
    positions = np.asarray(positions, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = positions.shape[0]
    tree = cKDTree(positions)
    d, idx = tree.query(positions, k=k + 1)
    d, idx = d[:, 1:], idx[:, 1:]
    w = 1.0 / np.maximum(d, 1e-12)
    scores = []
    for c in range(values.shape[1]):
        z = values[:, c] - values[:, c].mean()
        denom = np.sum(z ** 2)
        if denom < 1e-30:
            continue
        num = np.sum(w * z[:, None] * z[idx])
        scores.append((n / w.sum()) * num / denom)
    return float(np.mean(scores)) if scores else float("nan")


def epe(pred: np.ndarray, gt: np.ndarray, scale: float = 1e4) -> float:
    """Mean Euclidean end-point error over all (point, frame) pairs, scaled."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1))) * scale


def write_report(path, rows) -> None:
    """CSV metric report: frame_idx, mean_I, epe, n_points."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_idx", "mean_I", "epe", "n_points"])
        for r in rows:
            writer.writerow([r["frame_idx"],
                             "" if r.get("mean_I") is None else repr(float(r["mean_I"])),
                             repr(float(r["epe"])), r["n_points"]])
