"""The spline deformation field.

Composes an encoder and a decoder MLP into per-knot (offset, tangent)
predictions, then interpolates with the cubic Hermite segment located for
the query time. Velocity and acceleration come from the closed-form segment
derivatives, in normalized segment-time units unless physical scaling is
requested. Constant-velocity advection extrapolates past the fitted
interval.

The coupled-4D baseline variant bypasses the spline entirely: the network
is queried at the continuous time and returns the offset directly, with
velocity/acceleration obtained by central finite differences in t.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from splinefield import autodiff as ad
from splinefield import encoders as enc
from splinefield import spline
from splinefield.autodiff import ParamStore, Tape, Var

VARIANTS = ("siren-resfields", "pe-resfields", "triplanes", "triaxes",
            "coupled4d-baseline")

_FD_T_EPS = 1e-4  # time step for the coupled baseline's FD derivatives


@dataclass
class FieldConfig:
    variant: str = "siren-resfields"
    n_knots: int = 4
    rank: int = 8
    hidden: int = 64
    depth: int = 3
    w0: float = 30.0
    pe_frequencies: int = 4
    grid_levels: tuple = (32, 64)
    grid_channels: int = 16
    quintic: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.n_knots < 2:
            raise ValueError("n_knots must be >= 2")
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        self.grid_levels = tuple(self.grid_levels)


@dataclass
class KnotPrediction:
    """Per-point offset and tangent (and curvature on the quintic path)."""

    delta_x: np.ndarray
    m: np.ndarray
    a: np.ndarray | None = None


class DivergenceError(RuntimeError):
    """Non-finite values encountered during optimization."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class SplineField:
    """A fitted (or fittable) deformation field over canonical points."""

    def __init__(self, cfg: FieldConfig, canonical_points: np.ndarray, seed: int = 0,
                 store: ParamStore | None = None, normalizer=None):
        canonical_points = np.asarray(canonical_points, dtype=np.float64)
        if canonical_points.ndim != 2 or canonical_points.shape[1] != 3:
            raise ValueError("canonical points must be [N_p, 3]")
        if not np.all(np.isfinite(canonical_points)):
            raise ValueError("canonical points must be finite")
        self.cfg = cfg
        self.canonical = canonical_points
        self.timeline = spline.SplineTimeline(cfg.n_knots)
        if normalizer is None:
            lo = canonical_points.min(axis=0)
            hi = canonical_points.max(axis=0)
            center = 0.5 * (lo + hi)
            half = max(float(np.max(hi - lo)) * 0.5, 1e-9)
            normalizer = (center, half)
        self.center = np.asarray(normalizer[0], dtype=np.float64)
        self.half_extent = float(normalizer[1])

        if store is None:
            store = ParamStore()
            rng = np.random.default_rng(seed)
            self.encoder = self._build_encoder(store, rng)
            self._build_decoder(store, rng)
        else:
            self.encoder = self._rebind_encoder(store)
        self.store = store

    # -- construction ------------------------------------------------------

    def _build_encoder(self, store, rng):
        c = self.cfg
        if c.variant == "siren-resfields":
            return enc.SirenResFieldsEncoder(store, rng, c.n_knots, c.rank,
                                             c.hidden, c.depth, c.w0)
        if c.variant == "pe-resfields":
            return enc.PEResFieldsEncoder(
                store, rng, c.n_knots, c.rank, c.hidden, c.depth,
                enc.PositionalEncodingConfig(c.pe_frequencies))
        if c.variant == "triplanes":
            return enc.TriplaneEncoder(store, rng, c.n_knots, c.rank,
                                       c.grid_levels, c.grid_channels)
        if c.variant == "triaxes":
            return enc.TriaxesEncoder(store, rng, c.n_knots, c.rank,
                                      c.grid_levels, c.grid_channels)
        return enc.Coupled4DEncoder(store, rng, c.hidden, c.depth, c.w0)

    def _rebind_encoder(self, store):
        # encoders hold only topology (dims, names); rebuild into a scratch
        # store so the loaded store keeps its existing arrays
        return self._build_encoder(ParamStore(), np.random.default_rng(0))

    @property
    def out_channels(self) -> int:
        if self.cfg.variant == "coupled4d-baseline":
            return 3
        return 9 if self.cfg.quintic else 6

    def _build_decoder(self, store, rng):
        feat = self.encoder.out_dim
        out = self.out_channels
        grid = self.cfg.variant in ("triplanes", "triaxes")
        if grid:
            # grid features go through a small two-layer MLP
            h = self.cfg.hidden
            store.add("dec.l0.W", rng.uniform(-np.sqrt(6.0 / feat), np.sqrt(6.0 / feat),
                                              (feat, h)))
            store.add("dec.l0.b", np.zeros(h))
            store.add("dec.l1.W", np.zeros((h, out)))
            store.add("dec.l1.b", np.zeros(out))
        else:
            # zero-init so optimization starts from the identity deformation
            store.add("dec.l0.W", np.zeros((feat, out)))
            store.add("dec.l0.b", np.zeros(out))

    def _decode(self, tape, feat: Var) -> Var:
        store = self.store
        if "dec.l1.W" in store:
            h = ad.relu(ad.forward_linear(feat, store.var("dec.l0.W", tape),
                                          store.var("dec.l0.b", tape)))
            return ad.forward_linear(h, store.var("dec.l1.W", tape),
                                     store.var("dec.l1.b", tape))
        return ad.forward_linear(feat, store.var("dec.l0.W", tape),
                                 store.var("dec.l0.b", tape))

    # -- queries -----------------------------------------------------------

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.half_extent

    def predict_knot(self, tape: Tape, points: np.ndarray, knot_idx: int):
        """Predict (delta_x, m[, a]) Vars of shape [B, 3] at one knot."""
        if self.cfg.variant == "coupled4d-baseline":
            raise ValueError("the coupled-4D baseline has no knot states")
        if not (0 <= knot_idx < self.cfg.n_knots):
            raise ValueError(f"knot index {knot_idx} out of range")
        x_norm = self.normalize(points)
        feat = self.encoder.encode(tape, self.store, x_norm, knot_idx)
        out = self._decode(tape, feat)
        dx = out[:, 0:3]
        m = out[:, 3:6]
        a = out[:, 6:9] if self.cfg.quintic else None
        return dx, m, a

    def _segment_states(self, tape, points, t_query, knot_cache=None):
        seg = spline.locate_segment(t_query, self.timeline)
        states = []
        for k in (seg.start_idx, seg.end_idx):
            if knot_cache is not None and k in knot_cache:
                dx, m, a = knot_cache[k]
            else:
                dx, m, a = self.predict_knot(tape, points, k)
                if knot_cache is not None:
                    knot_cache[k] = (dx, m, a)
            states.append((dx, m, a))
        return seg, states

    def _knot_positions(self, points, states):
        const = np.asarray(points, dtype=np.float64)
        (dx0, m0, a0), (dx1, m1, a1) = states
        p0 = ad.add(dx0, const)
        p1 = ad.add(dx1, const)
        return p0, m0, a0, p1, m1, a1

    def deform_var(self, tape, points, t_query, knot_cache=None) -> Var:
        """Differentiable deformation of `points` to time t_query."""
        if self.cfg.variant == "coupled4d-baseline":
            x_norm = self.normalize(points)
            feat = self.encoder.encode_at_time(tape, self.store, x_norm, t_query)
            dx = self._decode(tape, feat)
            return ad.add(dx, np.asarray(points, dtype=np.float64))
        seg, states = self._segment_states(tape, points, t_query, knot_cache)
        p0, m0, a0, p1, m1, a1 = self._knot_positions(points, states)
        if self.cfg.quintic:
            return spline._combine6(spline.quintic_basis(seg.t_bar),
                                    p0, m0, a0, p1, m1, a1)
        return spline._combine4(spline.hermite_basis(seg.t_bar), p0, m0, p1, m1)

    def velocity_var(self, tape, points, t_query, physical: bool = False,
                     knot_cache=None) -> Var:
        """Differentiable velocity at t_query (t-bar units by default)."""
        if self.cfg.variant == "coupled4d-baseline":
            lo = max(t_query - _FD_T_EPS, 0.0)
            hi = min(t_query + _FD_T_EPS, 1.0)
            a = self.deform_var(tape, points, hi)
            b = self.deform_var(tape, points, lo)
            return ad.scale(ad.add(a, ad.scale(b, -1.0)), 1.0 / (hi - lo))
        seg, states = self._segment_states(tape, points, t_query, knot_cache)
        p0, m0, a0, p1, m1, a1 = self._knot_positions(points, states)
        if self.cfg.quintic:
            v = spline._combine6(spline.quintic_basis_d1(seg.t_bar),
                                 p0, m0, a0, p1, m1, a1)
        else:
            v = spline._combine4(spline.hermite_basis_d1(seg.t_bar), p0, m0, p1, m1)
        if physical:
            v = ad.scale(v, float(self.cfg.n_knots - 1))
        return v

    def acceleration_var(self, tape, points, t_query, knot_cache=None) -> Var:
        """Differentiable acceleration at t_query (t-bar units)."""
        if self.cfg.variant == "coupled4d-baseline":
            eps = 10.0 * _FD_T_EPS
            tq = min(max(t_query, eps), 1.0 - eps)
            a = self.deform_var(tape, points, tq + eps)
            b = self.deform_var(tape, points, tq)
            c = self.deform_var(tape, points, tq - eps)
            return ad.scale(ad.add(ad.add(a, c), ad.scale(b, -2.0)), 1.0 / eps ** 2)
        seg, states = self._segment_states(tape, points, t_query, knot_cache)
        p0, m0, a0, p1, m1, a1 = self._knot_positions(points, states)
        if self.cfg.quintic:
            return spline._combine6(spline.quintic_basis_d2(seg.t_bar),
                                    p0, m0, a0, p1, m1, a1)
        return spline._combine4(spline.hermite_basis_d2(seg.t_bar), p0, m0, p1, m1)

    # plain-array conveniences (inference)

    def deform(self, points, t_query) -> np.ndarray:
        return self.deform_var(Tape(), points, t_query).value

    def velocity(self, points, t_query, physical: bool = False) -> np.ndarray:
        return self.velocity_var(Tape(), points, t_query, physical=physical).value

    def acceleration(self, points, t_query) -> np.ndarray:
        return self.acceleration_var(Tape(), points, t_query).value

    def advect(self, points, from_t: float, dt: float) -> np.ndarray:
        """deform(points, from_t) + physical velocity * dt."""
        if not (0.0 <= from_t <= 1.0):
            raise ValueError(f"from_t must be in [0, 1], got {from_t}")
        if dt < 0:
            raise ValueError(f"dt must be >= 0, got {dt}")
        base = self.deform(points, from_t)
        if self.cfg.variant == "coupled4d-baseline":
            vel = self.velocity(points, from_t)
        else:
            vel = self.velocity(points, from_t, physical=True)
        return base + vel * dt

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "config": {**asdict(self.cfg), "grid_levels": list(self.cfg.grid_levels)},
            "center": self.center.tolist(),
            "half_extent": self.half_extent,
        }
        arrays = {name: self.store.value(name) for name in self.store.names()}
        arrays["__canonical__"] = self.canonical
        enc.write_checkpoint(path, arrays, header)

    @classmethod
    def load(cls, path) -> "SplineField":
        arrays, header = enc.read_checkpoint(path)
        cfg_d = dict(header["config"])
        cfg_d["grid_levels"] = tuple(cfg_d["grid_levels"])
        cfg = FieldConfig(**cfg_d)
        canonical = arrays.pop("__canonical__")
        store = ParamStore()
        for name in sorted(arrays):
            store.add(name, arrays[name])
        f = cls(cfg, canonical, store=store,
                normalizer=(np.asarray(header["center"]), header["half_extent"]))
        return f
