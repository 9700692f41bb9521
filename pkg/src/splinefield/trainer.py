"""Gradient-descent fitting of a spline deformation field to trajectories.

Training supervises the field at a random subset of frames per step with
an L1 reconstruction term, plus velocity-coherence and acceleration
penalties sampled at a random time. Parameters update with Adam; grid and
temporal-code parameters get a 10x learning rate.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field as dc_field, fields

import numpy as np

from . import autodiff as ad
from . import losses
from . import metrics
from . import spline
from .autodiff import ParamStore, Tape
from .dataio import Split, TrajectorySet
from .field import DivergenceError, FieldConfig, SplineField


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    lr_decay: float = 1.0       # final lr fraction, cosine-annealed over steps
    grid_lr_mult: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 0.01
    accel_mode: str = "l1"
    knot_factor: int = 2
    n_knots: int = 0            # 0 means derive from knot_factor
    rank: int = 8
    variant: str = "siren-resfields"
    hidden: int = 64
    depth: int = 3
    w0: float = 30.0
    quintic: bool = False
    seed: int = 0
    batch_points: int = 0       # 0 means use every supervised point
    frames_per_step: int = 4
    knn_k: int = 10
    snapshot_every: int = 100


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_run_config(pairs, base: TrainConfig | None = None) -> TrainConfig:
    """Build a TrainConfig from key=value strings."""
    cfg = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        if key not in values:
            raise ValueError(f"unknown config key {key!r}")
        cur = values[key]
        if isinstance(cur, bool):
            low = raw.lower()
            if low in _BOOL_TRUE:
                values[key] = True
            elif low in _BOOL_FALSE:
                values[key] = False
            else:
                raise ValueError(f"bad boolean for {key}: {raw!r}")
        elif isinstance(cur, int):
            values[key] = int(raw)
        elif isinstance(cur, float):
            values[key] = float(raw)
        else:
            values[key] = raw
    return TrainConfig(**values)


class Adam:
    """Adam with per-parameter-name state and per-name learning rates."""

    def __init__(self, store: ParamStore, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg
        self.t = 0
        self._m = {n: np.zeros_like(store.value(n)) for n in store.names()}
        self._v = {n: np.zeros_like(store.value(n)) for n in store.names()}

    def lr_for(self, name: str, lr_scale: float = 1.0) -> float:
        lr = self.cfg.lr * lr_scale
        if name == "codes" or "enc.grid" in name:
            return lr * self.cfg.grid_lr_mult
        return lr

    def step(self, lr_scale: float = 1.0) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name in self.store.names():
            g = self.store.grad(name)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter group {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            self.store.set_value(name, self.store.value(name)
                                 - self.lr_for(name, lr_scale) * update)


@dataclass
class RunLog:
    rows: list = dc_field(default_factory=list)

    def record(self, step, recon, lv, lacc, total, wallclock_ms) -> None:
        self.rows.append({"step": step, "recon": recon, "lv": lv,
                          "lacc": lacc, "total": total,
                          "wallclock_ms": wallclock_ms})

    @property
    def final_total(self) -> float:
        return self.rows[-1]["total"] if self.rows else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "recon", "lv", "lacc", "total", "wallclock_ms"])
            for r in self.rows:
                writer.writerow([r["step"], repr(r["recon"]), repr(r["lv"]),
                                 repr(r["lacc"]), repr(r["total"]),
                                 f"{r['wallclock_ms']:.3f}"])


def resolve_n_knots(cfg: TrainConfig, n_train_frames: int) -> int:
    if cfg.n_knots:
        return cfg.n_knots
    return spline.knot_count(n_train_frames, cfg.knot_factor)


def _field_config(cfg: TrainConfig, n_knots: int) -> FieldConfig:
    return FieldConfig(variant=cfg.variant, n_knots=n_knots, rank=cfg.rank,
                       hidden=cfg.hidden, depth=cfg.depth, w0=cfg.w0,
                       quintic=cfg.quintic)


def train(traj: TrajectorySet, split: Split, cfg: TrainConfig):
    """Fit a SplineField to the training frames. Returns (field, run log)."""
    rng = np.random.default_rng(cfg.seed)
    canonical = traj.positions[0]
    n_knots = resolve_n_knots(cfg, len(split.train_frames))
    fld = SplineField(_field_config(cfg, n_knots), canonical, seed=cfg.seed)

    sup = np.asarray(split.supervised)
    sup_pts = canonical[sup]
    graph = None
    if cfg.alpha > 0 and sup.shape[0] > cfg.knn_k:
        graph = losses.build_knn(sup_pts, cfg.knn_k)
    loss_cfg = losses.LossConfig(alpha=cfg.alpha, beta=cfg.beta, k=cfg.knn_k)

    train_frames = np.asarray(split.train_frames)
    opt = Adam(fld.store, cfg)
    log = RunLog()
    snapshot = fld.store.snapshot()
    t0 = time.perf_counter()

    for step in range(cfg.steps):
        tape = Tape()
        if cfg.batch_points and cfg.batch_points < sup.shape[0]:
            rows = np.sort(rng.choice(sup.shape[0], cfg.batch_points, replace=False))
        else:
            rows = np.arange(sup.shape[0])
        batch_pts = sup_pts[rows]

        n_f = min(cfg.frames_per_step, train_frames.shape[0])
        frame_ids = rng.choice(train_frames.shape[0], n_f, replace=False)
        knot_cache = {}
        recon = None
        for fi in train_frames[frame_ids]:
            t_q = traj.frame_time(int(fi))
            pred = fld.deform_var(tape, batch_pts, t_q, knot_cache=knot_cache)
            gt = traj.positions[fi][sup[rows]]
            term = losses.recon_loss_l1(pred, gt)
            recon = term if recon is None else recon + term
        recon = recon * (1.0 / n_f)

        lv = 0.0
        lacc = 0.0
        if cfg.alpha > 0 or cfg.beta > 0:
            t_rand = float(rng.uniform(0.0, 1.0))
            reg_cache = {}
            if cfg.alpha > 0 and graph is not None:
                needed, loc_rows, loc_nbrs, w_rows = graph.subgraph_closure(rows)
                vel = fld.velocity_var(tape, sup_pts[needed], t_rand,
                                       knot_cache=reg_cache)
                lv = losses.velocity_loss_rows(vel, loc_rows, loc_nbrs, w_rows)
            if cfg.beta > 0:
                # the knot cache is keyed by knot index for one point set, so
                # it cannot be shared with the velocity term's closure points
                acc = fld.acceleration_var(tape, batch_pts, t_rand, knot_cache={})
                lacc = losses.acceleration_loss(acc, mode=cfg.accel_mode)

        total = losses.total_loss(recon, lv, lacc, loss_cfg)
        if not np.isfinite(total.value):
            raise DivergenceError(
                f"non-finite loss at step {step}", snapshot=snapshot)

        fld.store.zero_grad()
        tape.backward(total)
        if cfg.lr_decay < 1.0 and cfg.steps > 1:
            frac = step / (cfg.steps - 1)
            lr_scale = cfg.lr_decay + (1.0 - cfg.lr_decay) \
                * 0.5 * (1.0 + np.cos(np.pi * frac))
        else:
            lr_scale = 1.0
        try:
            opt.step(lr_scale)
        except DivergenceError as e:
            raise DivergenceError(f"{e} at step {step}", snapshot=snapshot) from None

        if cfg.snapshot_every and step % cfg.snapshot_every == 0:
            snapshot = fld.store.snapshot()
        log.record(step, float(_scalar(recon)), float(_scalar(lv)),
                   float(_scalar(lacc)), float(total.value),
                   (time.perf_counter() - t0) * 1e3)
    return fld, log


def _scalar(x) -> float:
    return float(x.value) if isinstance(x, ad.Var) else float(x)


def evaluate(field: SplineField, traj: TrajectorySet, split: Split,
             frames=None, k: int = 10, scale: float = 1e4):
    """End-point error and motion coherence on held-out frames.

    Returns (summary dict, per-frame rows for a CSV report)."""
    frames = list(split.test_frames if frames is None else frames)
    if not frames:
        raise ValueError("no frames to evaluate")
    preds = np.stack([field.deform(field.canonical, traj.frame_time(t))
                      for t in frames])
    gts = traj.positions[frames]
    overall = metrics.epe(preds, gts, scale=scale)
    coherence = (metrics.morans_i_sequence(preds, k=k)
                 if len(frames) >= 2 else None)
    per_i = {}
    if coherence is not None:
        per_i = dict(zip(coherence.frame_ids, coherence.per_frame))
    rows = []
    for j, t in enumerate(frames):
        rows.append({"frame_idx": t,
                     "mean_I": per_i.get(j),
                     "epe": metrics.epe(preds[j], gts[j], scale=scale),
                     "n_points": field.canonical.shape[0]})
    summary = {"epe": overall,
               "mean_I": coherence.mean if coherence and coherence.per_frame
               else float("nan"),
               "n_frames": len(frames)}
    return summary, rows
