"""Egocentric electrosensory transduction.

Three receptor populations plus proprioception:

* mormyromasts: active sensing, the distortion of a carrier EOD by nearby
  scatterers. Per receptor the carrier's free-space field ``D`` is the
  baseline; the reading is ``|(D + P) - D| = |P|``, where ``P`` is what the
  carrier induces (food dipoles, wall images). The carrier is the agent's own
  EOD, plus neighbours' EODs when collective sensing is on;
* ampullary receptors: the low-frequency background projected on the outward
  body normal, low-passed with an exponential moving average;
* Knollenorgans: conspecific EOD amplitude binned by egocentric bearing.

Observation layout is ``[mormyromast | ampullary | knollenorgan | proprio]``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numba
import numpy as np

from .efield import SourceArray
from .errors import ContractError

PROPRIO_FIELDS = ("speed", "sin_heading", "cos_heading", "eod", "dominance",
                  "wall_east", "wall_west", "wall_north", "wall_south")


@dataclass
class Observation:
    mormyromast_block: np.ndarray
    ampullary_block: np.ndarray
    knollenorgan_block: np.ndarray
    proprio_block: np.ndarray

    def as_vector(self):
        return np.concatenate([self.mormyromast_block, self.ampullary_block,
                               self.knollenorgan_block, self.proprio_block])

    @classmethod
    def from_vector(cls, vec, layout):
        s = layout.block_slices()
        vec = np.asarray(vec)
        return cls(vec[s["mormyromast"]], vec[s["ampullary"]], vec[s["knollenorgan"]], vec[s["proprio"]])


def receptor_geometry(n, body_length, body_width):
    """Body-frame receptor points on the body ellipse and their outward normals.

    Points sit at parameter angles ``2*pi*(k + 0.5)/n`` measured counter-clockwise
    from the snout, so receptor ``k`` and ``n - 1 - k`` are left/right mirrors.
    """
    a, b = 0.5 * body_length, 0.5 * body_width
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    pts = np.stack([a * np.cos(theta), b * np.sin(theta)], 1)
    normals = np.stack([np.cos(theta) / a, np.sin(theta) / b], 1)
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    return pts, normals


def _rotate(v, heading):
    """Rotate body-frame vectors (R, 2) by each heading -> (n, R, 2)."""
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    return np.stack([c * v[None, :, 0] - s * v[None, :, 1], s * v[None, :, 0] + c * v[None, :, 1]], -1)


@functools.lru_cache(maxsize=32)
def _geometry(n, body_length, body_width):
    return receptor_geometry(n, body_length, body_width)


def carrier_sets(ids, pos, eod_self, scene, layout):
    """Which emitters' EODs each agent can use for active sensing."""
    emitters = scene.direct.emitter
    heads = scene.direct.pos
    out = []
    for i, a in enumerate(ids):
        c = []
        for e, hp in zip(emitters, heads):
            if e == a:
                if eod_self[i]:
                    c.append(int(e))
            elif layout.collective_sensing_enabled and np.hypot(*(hp - pos[i])) <= layout.knollenorgan_range_m:
                c.append(int(e))
        out.append(c)
    return out


@numba.njit(cache=True)
def _distortion(points, src_pos, src_axis, src_moment, src_col, use, r_min):
    """|P| per receptor: magnitude of the summed carrier perturbations.

    points (A, R, 2); perturbation sources labelled by carrier column;
    ``use[a, col]`` selects the carriers of agent ``a``.
    """
    n_a, n_r = points.shape[0], points.shape[1]
    out = np.zeros((n_a, n_r))
    for a in range(n_a):
        for k in range(n_r):
            px, py = points[a, k, 0], points[a, k, 1]
            qx = qy = 0.0
            for s in range(src_pos.shape[0]):
                if not use[a, src_col[s]]:
                    continue
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
                qx += c * (adot * ux - ax)
                qy += c * (adot * uy - ay)
            out[a, k] = np.sqrt(qx * qx + qy * qy)
    return out


def mormyromast_batch(ids, pos, heading, eod_self, scene, layout, body_length, body_width):
    """Raw mormyromast readings ``|P|`` for several agents, shape (n, n_mormyromast)."""
    n = len(ids)
    out = np.zeros((n, layout.n_mormyromast))
    if not len(scene.direct):
        return out
    carriers = carrier_sets(ids, pos, eod_self, scene, layout)
    active = [i for i in range(n) if carriers[i]]
    if not active:
        return out
    body_pts, _ = _geometry(layout.n_mormyromast, body_length, body_width)
    pts = _rotate(body_pts, heading[active]) + pos[active][:, None, :]

    emitters = [int(e) for e in scene.direct.emitter]
    col = {e: k for k, e in enumerate(emitters)}
    use = np.zeros((len(active), len(emitters)), dtype=np.bool_)
    for row, i in enumerate(active):
        use[row, [col[e] for e in carriers[i]]] = True
    pert = scene.perturbation
    if not len(pert):
        return out
    src_col = np.array([col[int(e)] for e in pert.emitter], dtype=np.int64)
    out[active] = _distortion(np.ascontiguousarray(pts), pert.pos, pert.axis, pert.moment,
                              src_col, use, float(scene.r_min))
    return out


def mormyromast_read(agent, scene, layout, arena):
    """Active-sensing block for one agent (raw field-magnitude distortion)."""
    return mormyromast_batch([agent.id], np.atleast_2d(agent.pos), np.array([agent.heading]),
                             np.array([agent.eod_now]), scene, layout,
                             arena.body_length_m, arena.body_width_m)[0]


def ema_alpha(dt, tau):
    return 1.0 - np.exp(-dt / tau)


def ampullary_drive(heading, scene, layout, body_length, body_width):
    """Instantaneous background projection on each receptor normal, (n, n_ampullary)."""
    _, normals = _geometry(layout.n_ampullary, body_length, body_width)
    world_n = _rotate(normals, np.asarray(heading, dtype=float))
    return world_n @ scene.background_field()


def ampullary_read(agent, scene, layout, arena, ema_prev=None):
    """Passive block for one agent: one EMA update toward the background projection."""
    x = ampullary_drive([agent.heading], scene, layout, arena.body_length_m, arena.body_width_m)[0]
    prev = np.zeros(layout.n_ampullary) if ema_prev is None else np.asarray(ema_prev, dtype=float)
    return prev + ema_alpha(arena.dt_s, layout.ampullary_tau_s) * (x - prev)


def knollenorgan_batch(ids, pos, heading, eod_events, layout, r_min):
    """Conspecific EOD amplitude per egocentric bearing bin, (n, bins).

    ``eod_events`` is a sequence of ``(emitter_id, position, moment)``.
    """
    n, nb = len(ids), layout.n_knollenorgan_bins
    out = np.zeros((n, nb))
    width = 2.0 * np.pi / nb
    for i, a in enumerate(ids):
        for e, epos, m in eod_events:
            if e == a:
                continue
            rel = np.asarray(epos, dtype=float) - pos[i]
            d = np.hypot(*rel)
            if d > layout.knollenorgan_range_m:
                continue
            bearing = (np.arctan2(rel[1], rel[0]) - heading[i] + np.pi) % (2.0 * np.pi) - np.pi
            b = min(int((bearing + np.pi) // width), nb - 1)
            out[i, b] += m / max(d, r_min) ** 2
    return out


def knollenorgan_read(agent, eod_events, layout, r_min=0.02):
    if not layout.knollenorgan_enabled:
        return np.zeros(0)
    return knollenorgan_batch([agent.id], np.atleast_2d(agent.pos), np.array([agent.heading]),
                              eod_events, layout, r_min)[0]


def scene_eod_events(scene):
    d = scene.direct
    return [(int(d.emitter[i]), d.pos[i], d.moment[i]) for i in range(len(d))]


def proprio_block(speed, heading, eod, dominance, pos, arena):
    x, y = pos[..., 0], pos[..., 1]
    return np.stack([
        speed / arena.v_max_mps if arena.v_max_mps > 0 else np.zeros_like(speed),
        np.sin(heading), np.cos(heading), eod.astype(float), dominance,
        arena.width_m - x, x, arena.height_m - y, y,
    ], -1)


def assemble_observation(agent, blocks, layout):
    """Concatenate blocks in layout order; ``blocks`` maps block name to vector."""
    sizes = layout.block_sizes
    parts = []
    for name, n in sizes.items():
        v = np.asarray(blocks.get(name, np.zeros(0)), dtype=float).ravel()
        if len(v) != n:
            raise ContractError(f"{name} block has length {len(v)}, layout expects {n}")
        parts.append(v)
    return np.concatenate(parts)


def compress(x, scale):
    return np.sign(x) * np.log1p(np.abs(x) / scale)


def transduce(state, scene):
    """Observations for every agent in ``state``; advances the ampullary EMA in place.

    Noise draws have a fixed size every call so that RNG consumption does not
    depend on which channels happen to be active.
    """
    cfg = state.config
    layout, arena = cfg.sensors, cfg.arena
    n = len(state.pos)
    ids = np.arange(n)

    morm_raw = mormyromast_batch(ids, state.pos, state.heading, state.eod_now & state.alive, scene,
                                 layout, arena.body_length_m, arena.body_width_m)
    morm = compress(morm_raw, layout.mormyromast_scale)

    drive = ampullary_drive(state.heading, scene, layout, arena.body_length_m, arena.body_width_m)
    state.amp_ema += ema_alpha(arena.dt_s, layout.ampullary_tau_s) * (drive - state.amp_ema)
    amp = state.amp_ema.copy()

    noise = state.rng.standard_normal((n, layout.n_mormyromast + layout.n_ampullary)) * layout.noise_frac
    if layout.noise_frac > 0:
        active = np.any(morm_raw != 0, axis=1)
        morm[active] += noise[active, :layout.n_mormyromast]
        amp += noise[:, layout.n_mormyromast:] * abs(cfg.efield.background_amp)

    if layout.knollenorgan_enabled:
        kn = compress(knollenorgan_batch(ids, state.pos, state.heading, scene_eod_events(scene),
                                         layout, cfg.efield.r_min_m), layout.knollenorgan_scale)
    else:
        kn = np.zeros((n, 0))

    prop = proprio_block(state.speed, state.heading, state.eod_now & state.alive, state.dominance,
                         state.pos, arena)
    obs = np.concatenate([morm, amp, kn, prop], axis=1)
    # dead agents observe nothing
    obs[~state.alive] = 0.0
    return obs
