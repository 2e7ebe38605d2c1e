"""Electric-field engine built on point dipoles.

Every EOD is a dipole at the emitter's head; active food items become induced
dipoles polarized by the EOD field at their location; walls are handled with
first-order mirror images; a uniform, slowly modulated background field stands
in for low-frequency ambient sources. Fields superpose linearly.

Potential of a source with moment ``m`` and unit axis ``a`` at offset ``r``::

    phi = m * (a . r_hat) / max(|r|, r_min)**2

and the field is its analytic negative gradient (both branches of the
softening are differentiated exactly).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

R_MIN = 0.02


class SourceKind(enum.IntEnum):
    SELF_EOD = 0
    CONSPECIFIC_EOD = 1
    INDUCED_OBJECT = 2
    WALL_IMAGE = 3
    BACKGROUND = 4


@dataclass
class DipoleSource:
    pos: np.ndarray
    axis: np.ndarray
    moment: float
    kind: SourceKind = SourceKind.CONSPECIFIC_EOD

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.axis = np.asarray(self.axis, dtype=float)
        self.moment = float(self.moment)
        if abs(np.hypot(*self.axis) - 1.0) > 1e-9:
            raise ValueError(f"dipole axis must be a unit vector, got {self.axis}")
        if not np.isfinite(self.moment):
            raise ValueError("dipole moment must be finite")


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.hypot(v[..., 0], v[..., 1])
    return v / n[..., None]


def _potentials(src_pos, src_axis, src_moment, points, r_min):
    """Potential matrix of shape (P, S) for point dipoles."""
    r = points[:, None, :] - src_pos[None, :, :]
    d = np.hypot(r[..., 0], r[..., 1])
    adot = np.einsum("psk,sk->ps", r, src_axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = src_moment[None, :] * adot / (d * np.maximum(d, r_min) ** 2)
    return np.where(d > 0, phi, 0.0)


@numba.njit(cache=True)
def _fields(src_pos, src_axis, src_moment, points, r_min):
    """Per-source field contributions of shape (P, S, 2). Dipole kinds only.

    far (d >= r_min): m (3 (a.r^) r^ - a) / d^3
    near:             m ((a.r^) r^ - a) / (r_min^2 d)
    """
    n_p, n_s = points.shape[0], src_pos.shape[0]
    out = np.zeros((n_p, n_s, 2))
    for p in range(n_p):
        px, py = points[p, 0], points[p, 1]
        for s in range(n_s):
            rx = px - src_pos[s, 0]
            ry = py - src_pos[s, 1]
            d = np.sqrt(rx * rx + ry * ry)
            if d == 0.0:
                continue
            ux, uy = rx / d, ry / d
            ax, ay = src_axis[s, 0], src_axis[s, 1]
            adot = ax * ux + ay * uy
            if d >= r_min:
                c = src_moment[s] / (d * d * d)
                adot *= 3.0
            else:
                c = src_moment[s] / (r_min * r_min * d)
            out[p, s, 0] = c * (adot * ux - ax)
            out[p, s, 1] = c * (adot * uy - ay)
    return out


def dipole_potential(src, point, r_min=R_MIN):
    """Scalar potential of one source at one point (or an (P, 2) array of points)."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    if src.kind == SourceKind.BACKGROUND:
        # uniform field E = m a  <=>  phi = -m a . x
        phi = -src.moment * (pts @ src.axis)
    else:
        phi = _potentials(src.pos[None], src.axis[None], np.array([src.moment]), pts, r_min)[:, 0]
    return phi[0] if np.ndim(point) == 1 else phi


def dipole_field(src, point, r_min=R_MIN):
    """Field vector E = -grad(phi) of one source."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    if src.kind == SourceKind.BACKGROUND:
        e = np.broadcast_to(src.moment * src.axis, pts.shape).copy()
    else:
        e = _fields(src.pos[None], src.axis[None], np.array([src.moment]), pts, r_min)[:, 0]
    return e[0] if np.ndim(point) == 1 else e


def induced_dipole(item, ambient_E):
    """Polarize a food item in a driving field (first order, no mutual coupling)."""
    e = np.asarray(ambient_E, dtype=float)
    mag = float(np.hypot(*e))
    if mag == 0.0:
        return DipoleSource(item.pos, (1.0, 0.0), 0.0, SourceKind.INDUCED_OBJECT)
    return DipoleSource(
        item.pos, e / mag, item.polarizability * item.radius_m**3 * mag, SourceKind.INDUCED_OBJECT
    )


def _image_arrays(pos, axis, moment, width, height, k_wall):
    """Mirror images across the four walls, (4S, ...) ordered west, east, south, north."""
    n = len(moment)
    img_pos = np.tile(pos, (4, 1))
    img_axis = np.tile(axis, (4, 1))
    img_pos[:n, 0] = -pos[:, 0]
    img_pos[n:2 * n, 0] = 2 * width - pos[:, 0]
    img_pos[2 * n:3 * n, 1] = -pos[:, 1]
    img_pos[3 * n:, 1] = 2 * height - pos[:, 1]
    img_axis[:2 * n, 0] *= -1.0
    img_axis[2 * n:, 1] *= -1.0
    return img_pos, img_axis, np.tile(moment * k_wall, 4)


def image_dipoles(src, arena, k_wall=1.0):
    """First-order images of ``src`` in the four arena walls.

    The normal component of the axis flips and the moment is scaled by
    ``k_wall``; with ``k_wall = +1`` each image cancels the wall-normal field of
    its source on that wall (insulating wall).
    """
    p, a, m = _image_arrays(src.pos[None], src.axis[None], np.array([src.moment]),
                            arena.width_m, arena.height_m, k_wall)
    return [DipoleSource(p[i], a[i], m[i], SourceKind.WALL_IMAGE) for i in range(4)]


@dataclass
class SourceArray:
    """Struct-of-arrays bundle of sources; the form the inner loops consume."""

    pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    axis: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kind: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    emitter: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.moment)

    @classmethod
    def from_sources(cls, sources, emitters=None):
        if not sources:
            return cls()
        return cls(
            np.array([s.pos for s in sources], dtype=float),
            np.array([s.axis for s in sources], dtype=float),
            np.array([s.moment for s in sources], dtype=float),
            np.array([int(s.kind) for s in sources], dtype=np.int8),
            np.full(len(sources), -1, dtype=np.int64) if emitters is None
            else np.array([-1 if e is None else e for e in emitters], dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls()
        return cls(*(np.concatenate([getattr(p, n) for p in parts])
                     for n in ("pos", "axis", "moment", "kind", "emitter")))

    def subset(self, mask):
        return SourceArray(self.pos[mask], self.axis[mask], self.moment[mask],
                           self.kind[mask], self.emitter[mask])

    def to_sources(self):
        return [DipoleSource(self.pos[i], self.axis[i], self.moment[i], SourceKind(self.kind[i]))
                for i in range(len(self))]

    def contributions(self, points, r_min=R_MIN):
        """Per-source field at each point, shape (P, S, 2)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.zeros((len(points), len(self), 2))
        if not len(self):
            return out
        bg = self.kind == SourceKind.BACKGROUND
        if not bg.any():
            return _fields(self.pos, self.axis, self.moment, points, r_min)
        if (~bg).any():
            out[:, ~bg] = _fields(self.pos[~bg], self.axis[~bg], self.moment[~bg], points, r_min)
        if bg.any():
            out[:, bg] = (self.moment[bg, None] * self.axis[bg])[None]
        return out

    def field(self, points, r_min=R_MIN):
        """Summed field at each point, shape (P, 2)."""
        return self.contributions(points, r_min).sum(axis=1)

    def images(self, width, height, k_wall):
        p, a, m = _image_arrays(self.pos, self.axis, self.moment, width, height, k_wall)
        return SourceArray(p, a, m, np.full(len(m), SourceKind.WALL_IMAGE, dtype=np.int8),
                           np.tile(self.emitter, 4))


class SceneSources:
    """All sources present at one time step.

    The physical scene (``sources``) holds the EODs, one induced dipole per
    active food item, wall images of every real dipole, and the background.
    For sensing, the scene is also kept split by emitter: ``direct`` holds the
    EOD dipoles and ``perturbation`` everything each EOD alone creates (its
    images, the food dipoles it induces, and their images), labelled by
    ``emitter``. Induced moments are linear in the driving field, so the
    per-emitter parts add up to the physical scene.
    """

    def __init__(self, direct, perturbation, background, physical=None, r_min=R_MIN):
        self.direct = direct
        self.perturbation = perturbation
        self.background = background
        self._physical = physical
        self.r_min = r_min
        self._sources = None

    @property
    def sources(self):
        if self._sources is None:
            real = self._physical() if self._physical is not None else SourceArray()
            self._sources = SourceArray.concat([real, self.background])
        return self._sources

    @property
    def background_amp(self):
        return float(self.background.moment.sum())

    def background_field(self):
        return (self.background.moment[:, None] * self.background.axis).sum(axis=0)

    @property
    def carriers(self):
        """``{emitter id: (direct sources, perturbation sources)}``."""
        return {int(e): (self.direct.subset(self.direct.emitter == e),
                         self.perturbation.subset(self.perturbation.emitter == e))
                for e in self.direct.emitter}

    @property
    def emitter_map(self):
        return {i: (None if e < 0 else int(e)) for i, e in enumerate(self.sources.emitter)}

    def __len__(self):
        return len(self.sources)

    def as_list(self):
        return self.sources.to_sources()


def field_at(scene, point, exclude=None):
    """Superposed field of every non-excluded source at ``point`` (or points).

    ``exclude`` may be a boolean mask over ``scene.sources`` or a predicate
    called as ``exclude(index, DipoleSource)``.
    """
    src = scene.sources if isinstance(scene, SceneSources) else scene
    r_min = scene.r_min if isinstance(scene, SceneSources) else R_MIN
    if exclude is not None:
        if callable(exclude):
            mask = np.array([not exclude(i, s) for i, s in enumerate(src.to_sources())], dtype=bool)
        else:
            mask = ~np.asarray(exclude, dtype=bool)
        src = src.subset(mask) if len(src) else src
    e = src.field(point, r_min)
    return e[0] if np.ndim(point) == 1 else e


def emitter_dipoles(pos, heading, dominance, eod_now, body_length, moment_per_dominance, ids=None):
    """EOD dipoles of every emitting agent, placed at the head along the heading."""
    idx = np.flatnonzero(eod_now)
    if ids is None:
        ids = np.arange(len(pos))
    if not len(idx):
        return SourceArray()
    axis = np.stack([np.cos(heading[idx]), np.sin(heading[idx])], 1)
    head = pos[idx] + 0.5 * body_length * axis
    return SourceArray(head, axis, moment_per_dominance * dominance[idx],
                       np.full(len(idx), SourceKind.CONSPECIFIC_EOD, dtype=np.int8),
                       np.asarray(ids)[idx].astype(np.int64))


def background_moment(fcfg, t, dt):
    if fcfg.background_period_s <= 0:
        return fcfg.background_amp
    return fcfg.background_amp * np.cos(2.0 * np.pi * t * dt / fcfg.background_period_s)


def _induced(food_pos, gains, driving_field):
    """Induced dipoles from driving field vectors; zero field gives moment 0, axis (1, 0)."""
    mag = np.hypot(driving_field[:, 0], driving_field[:, 1])
    axis = np.where(mag[:, None] > 0, driving_field / np.where(mag > 0, mag, 1.0)[:, None],
                    np.array([1.0, 0.0]))
    return SourceArray(food_pos.copy(), axis, gains * mag,
                       np.full(len(mag), SourceKind.INDUCED_OBJECT, dtype=np.int8),
                       np.full(len(mag), -1, dtype=np.int64))


def build_scene_sources(state):
    """Assemble the scene for a world state (duck-typed: see ``sim.WorldState``)."""
    cfg = state.config
    arena, fcfg = cfg.arena, cfg.efield
    r_min = fcfg.r_min_m
    bg = SourceArray(np.array([[0.5 * arena.width_m, 0.5 * arena.height_m]]), np.array([[1.0, 0.0]]),
                     np.array([background_moment(fcfg, state.t, arena.dt_s)]),
                     np.array([SourceKind.BACKGROUND], dtype=np.int8), np.array([-1]))
    eods = emitter_dipoles(state.pos, state.heading, state.dominance, state.eod_now & state.alive,
                           arena.body_length_m, fcfg.eod_moment_per_dominance)
    if not len(eods):
        return SceneSources(eods, SourceArray(), bg, None, r_min)

    active = np.flatnonzero(state.food_active)
    n_e, n_f = len(eods), len(active)
    food_pos = state.food_pos[active]
    gains = state.food_pol[active] * state.food_radius[active] ** 3

    # driving field of each emitter at each item, (F, E, 2)
    drive = eods.contributions(food_pos, r_min) if n_f else np.zeros((0, n_e, 2))
    per_emitter = _induced(np.tile(food_pos, (n_e, 1)), np.tile(gains, n_e),
                           drive.transpose(1, 0, 2).reshape(-1, 2))
    per_emitter.emitter = np.repeat(eods.emitter, n_f)
    w, h, k = arena.width_m, arena.height_m, fcfg.k_wall
    walls = k != 0.0

    def physical():
        real = SourceArray.concat([eods, _induced(food_pos, gains, drive.sum(axis=1))])
        return SourceArray.concat([real, real.images(w, h, k)]) if walls else real

    if walls:
        pert = SourceArray.concat([per_emitter, eods.images(w, h, k), per_emitter.images(w, h, k)])
    else:
        pert = per_emitter
    return SceneSources(eods, pert, bg, physical, r_min)
