"""Trajectory container, frame splits, synthetic scenes, and file formats.

Trajectory files use a small binary layout: an 8-byte magic "SDFTRAJ1",
a u32 frame count T, a u32 point count N_p, then T*N_p*3 little-endian
f32 positions ordered frame-major. Total size is 16 + 4*T*N_p*3 bytes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .encoders import FormatError

TRAJ_MAGIC = b"SDFTRAJ1"

SYNTHETIC_KINDS = ("rigid-translate", "rotate", "bending-sheet",
                   "swing-arm", "composite")

__all__ = ["FormatError", "TrajectorySet", "SplitSpec", "Split", "split_frames",
           "gen_synthetic", "write_traj", "read_traj", "export_ply", "flow_colors"]


@dataclass(frozen=True)
class TrajectorySet:
    """Dense point trajectories, positions[t, i] is point i at frame t."""
    positions: np.ndarray   # [T, N_p, 3] float64

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1:
            raise ValueError(f"positions must be [T, N_p, 3], got {p.shape}")
        object.__setattr__(self, "positions", p)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_points(self) -> int:
        return self.positions.shape[1]

    def frame_time(self, t: int) -> float:
        """Normalized time of frame t, frame 0 at 0.0 and the last at 1.0."""
        if self.n_frames == 1:
            return 0.0
        return t / (self.n_frames - 1)


@dataclass(frozen=True)
class SplitSpec:
    stride: int = 4
    supervised_fraction: float = 0.25

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 < self.supervised_fraction <= 1.0:
            raise ValueError("supervised_fraction must be in (0, 1]")


@dataclass(frozen=True)
class Split:
    train_frames: tuple     # sorted frame ids used for supervision
    test_frames: tuple      # held-out frame ids
    supervised: np.ndarray  # point ids with ground truth available


def split_frames(traj: TrajectorySet, spec: SplitSpec, seed: int = 0) -> Split:
    """Every stride-th frame trains; the rest are held out. A random subset
    of points is supervised."""
    if spec.stride == 1:
        warnings.warn("stride=1 leaves no held-out frames", stacklevel=2)
    train = tuple(range(0, traj.n_frames, spec.stride))
    if len(train) < 2:
        raise ValueError(
            f"split needs at least 2 training frames, got {len(train)} "
            f"(T={traj.n_frames}, stride={spec.stride})")
    test = tuple(t for t in range(traj.n_frames) if t not in set(train))
    rng = np.random.default_rng(seed)
    n_sup = max(1, int(round(spec.supervised_fraction * traj.n_points)))
    supervised = np.sort(rng.choice(traj.n_points, size=n_sup, replace=False))
    return Split(train_frames=train, test_frames=test, supervised=supervised)


def gen_synthetic(kind: str, n_points: int, n_frames: int,
                  seed: int = 0) -> TrajectorySet:
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}, choose from {SYNTHETIC_KINDS}")
    if n_points < 1 or n_frames < 2:
        raise ValueError("need n_points >= 1 and n_frames >= 2")
    rng = np.random.default_rng(seed)
    ts = np.linspace(0.0, 1.0, n_frames)

    if kind == "bending-sheet":
        side = int(np.ceil(np.sqrt(n_points)))
        gx, gy = np.meshgrid(np.linspace(-1, 1, side), np.linspace(-1, 1, side))
        base = np.stack([gx.ravel(), gy.ravel()], axis=1)[:n_points]
        base = base + rng.normal(0.0, 0.02, size=base.shape)
        # one-signed bend profile: the whole sheet lifts together, more near
        # one edge, so ground-truth motion stays spatially coherent
        profile = 0.5 + 0.5 * np.sin(0.5 * np.pi * (base[:, 0] + 1.0))
        frames = []
        for t in ts:
            z = 0.35 * profile * np.sin(np.pi * t)
            frames.append(np.column_stack([base[:, 0], base[:, 1], z]))
        return TrajectorySet(np.stack(frames))

    pts = rng.uniform(-1.0, 1.0, size=(n_points, 3))

    if kind == "rigid-translate":
        direction = np.array([0.6, -0.3, 0.45])
        frames = [pts + t * direction for t in ts]
    elif kind == "rotate":
        frames = []
        for t in ts:
            a = 0.5 * np.pi * t
            rot = np.array([[np.cos(a), -np.sin(a), 0.0],
                            [np.sin(a), np.cos(a), 0.0],
                            [0.0, 0.0, 1.0]])
            frames.append(pts @ rot.T)
    elif kind == "swing-arm":
        # points along an arm hinged at the origin, swinging in the xz plane
        pts = np.column_stack([rng.uniform(0.1, 1.0, n_points),
                               rng.normal(0.0, 0.05, n_points),
                               rng.normal(0.0, 0.05, n_points)])
        frames = []
        for t in ts:
            a = 0.6 * np.sin(2.0 * np.pi * t)
            rot = np.array([[np.cos(a), 0.0, np.sin(a)],
                            [0.0, 1.0, 0.0],
                            [-np.sin(a), 0.0, np.cos(a)]])
            frames.append(pts @ rot.T)
    else:   # composite: translation plus a per-point sinusoidal wobble
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_points, 1))
        direction = np.array([0.4, 0.2, -0.3])
        frames = []
        for t in ts:
            wobble = 0.1 * np.sin(2.0 * np.pi * t + phase)
            frames.append(pts + t * direction + wobble * np.array([0.0, 0.0, 1.0]))
    return TrajectorySet(np.stack(frames))


def write_traj(path, traj: TrajectorySet) -> None:
    data = traj.positions.astype("<f4")
    with open(path, "wb") as f:
        f.write(TRAJ_MAGIC)
        f.write(struct.pack("<II", traj.n_frames, traj.n_points))
        f.write(data.tobytes(order="C"))


def read_traj(path) -> TrajectorySet:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError(f"file truncated at byte {len(blob)}: header needs 16 bytes")
    if blob[:8] != TRAJ_MAGIC:
        raise FormatError(f"bad magic at byte 0: {blob[:8]!r}")
    n_frames, n_points = struct.unpack_from("<II", blob, 8)
    expect = 16 + 4 * n_frames * n_points * 3
    if len(blob) != expect:
        raise FormatError(
            f"payload size mismatch at byte 16: have {len(blob)} bytes, "
            f"expected {expect} for T={n_frames}, N_p={n_points}")
    pos = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n_frames, n_points, 3)
    return TrajectorySet(pos.astype(np.float64))


def export_ply(path, points: np.ndarray, colors=None) -> None:
    """ASCII PLY point cloud, optionally with uchar RGB per vertex."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be [N, 3], got {points.shape}")
    lines = ["ply", "format ascii 1.0", f"element vertex {points.shape[0]}",
             "property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != points.shape:
            raise ValueError("colors must match points shape")
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i in range(points.shape[0]):
        row = f"{points[i, 0]:.6f} {points[i, 1]:.6f} {points[i, 2]:.6f}"
        if colors is not None:
            c = colors[i].astype(int)
            row += f" {c[0]} {c[1]} {c[2]}"
        lines.append(row)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def flow_colors(velocities: np.ndarray) -> np.ndarray:
    """Map velocity magnitude to RGB: zero motion is gray, fast is red."""
    v = np.linalg.norm(np.asarray(velocities, dtype=np.float64), axis=1)
    peak = v.max()
    t = v / peak if peak > 0 else np.zeros_like(v)
    r = np.clip(128 + 127 * t, 0, 255)
    gb = np.clip(128 * (1.0 - t), 0, 255)
    return np.column_stack([r, gb, gb]).astype(np.uint8)
