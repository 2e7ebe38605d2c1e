"""Deterministic discrete-time 2D foraging world.

One call to :func:`step_env` runs, in this fixed order: kinematics, bites,
food (replenish, then eat), field-scene build, sensor transduction, rewards.
All randomness comes from the state's own ``numpy.random.Generator``, so
``(config, seed, action sequence)`` determines the trajectory bit for bit.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import ArenaConfig, SimConfig
from .efield import build_scene_sources
from .errors import ConstraintError, ContractError
from .sensors import transduce

BITE_HALF_ANGLE = np.pi / 3
TIE_TOL = 1e-12


@dataclass
class AgentState:
    id: int
    pos: np.ndarray
    heading: float
    speed: float = 0.0
    dominance: float = 1.0
    food_eaten: int = 0
    eod_now: bool = False
    alive: bool = True
    hidden_ref: object = None


@dataclass
class FoodItem:
    pos: np.ndarray
    radius_m: float
    polarizability: float
    active: bool = True
    patch_id: int = 0


@dataclass
class ActionCommand:
    thrust: float = 0.0
    turn: float = 0.0
    eod: int = 0
    bite: int = 0

    def as_array(self):
        return np.array([self.thrust, self.turn, self.eod, self.bite], dtype=float)


@dataclass
class StepEvents:
    eaten: list
    bites_delivered: list
    bites_received: list
    wall_contacts: np.ndarray
    eods: np.ndarray
    replenished: list = field(default_factory=list)

    @classmethod
    def empty(cls, n):
        return cls([[] for _ in range(n)], [[] for _ in range(n)], [[] for _ in range(n)],
                   np.zeros(n, dtype=bool), np.zeros(n, dtype=bool))


@dataclass
class WorldState:
    config: SimConfig
    seed: object
    t: int
    rng: np.random.Generator
    pos: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    dominance: np.ndarray
    food_eaten: np.ndarray
    eod_now: np.ndarray
    bite_now: np.ndarray
    alive: np.ndarray
    food_pos: np.ndarray
    food_radius: np.ndarray
    food_pol: np.ndarray
    food_active: np.ndarray
    food_patch: np.ndarray
    amp_ema: np.ndarray
    obs: np.ndarray = None

    @property
    def n_agents(self):
        return len(self.pos)

    def agent(self, i):
        return AgentState(i, self.pos[i].copy(), float(self.heading[i]), float(self.speed[i]),
                          float(self.dominance[i]), int(self.food_eaten[i]), bool(self.eod_now[i]),
                          bool(self.alive[i]))

    @property
    def agents(self):
        return [self.agent(i) for i in range(self.n_agents)]

    @property
    def food(self):
        return [FoodItem(self.food_pos[k].copy(), float(self.food_radius[k]), float(self.food_pol[k]),
                         bool(self.food_active[k]), int(self.food_patch[k]))
                for k in range(len(self.food_pos))]

    def copy(self):
        return copy.deepcopy(self)

    def snapshot(self):
        """Plain-data view for equality checks (RNG state included)."""
        out = {k: getattr(self, k) for k in (
            "t", "pos", "heading", "speed", "dominance", "food_eaten", "eod_now", "bite_now", "alive",
            "food_pos", "food_radius", "food_pol", "food_active", "food_patch", "amp_ema", "obs")}
        out["rng"] = self.rng.bit_generator.state
        return out


def as_sim_config(config):
    if isinstance(config, SimConfig):
        return config
    if isinstance(config, ArenaConfig):
        return SimConfig(arena=config)
    if hasattr(config, "sim"):
        return config.sim
    raise TypeError(f"cannot build a simulation config from {type(config).__name__}")


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


def _uniform_in_disc(rng, center, radius, arena):
    r = radius * np.sqrt(rng.random())
    th = 2.0 * np.pi * rng.random()
    p = np.array([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])
    return np.clip(p, [0.0, 0.0], [arena.width_m, arena.height_m])


def _place_agents(rng, arena, n, max_tries=10_000):
    min_sep = 2.0 * arena.body_length_m
    pos = []
    tries = 0
    while len(pos) < n:
        tries += 1
        if tries > max_tries:
            raise ConstraintError(
                "arena.n_agents",
                f"cannot place {n} agents {min_sep:g} m apart in a {arena.width_m:g} x {arena.height_m:g} m arena",
            )
        p = rng.random(2) * [arena.width_m, arena.height_m]
        if all(np.hypot(*(p - q)) >= min_sep for q in pos):
            pos.append(p)
    return np.array(pos).reshape(n, 2)


def reset_env(config, seed=None, *, positions=None, headings=None, dominance=None, alive=None):
    """Fresh world at t = 0.

    Agents are placed uniformly at random at least two body lengths apart with
    uniform headings and dominance drawn from ``arena.dominance_levels``; every
    patch is filled to capacity. Keyword overrides replace the random draws
    (the draws still happen, keeping RNG consumption independent of overrides).
    """
    cfg = as_sim_config(config)
    arena = cfg.arena
    seed = arena.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = arena.n_agents

    pos = _place_agents(rng, arena, n)
    head = rng.uniform(-np.pi, np.pi, n)
    dom = rng.choice(np.asarray(arena.dominance_levels, dtype=float), n)
    if positions is not None:
        pos = np.array(positions, dtype=float).reshape(n, 2)
    if headings is not None:
        head = wrap_angle(np.array(headings, dtype=float).reshape(n))
    if dominance is not None:
        dom = np.array(dominance, dtype=float).reshape(n)

    fpos, fpatch = [], []
    for pid, patch in enumerate(arena.patches):
        for _ in range(patch.capacity):
            fpos.append(_uniform_in_disc(rng, patch.center, patch.radius_m, arena))
            fpatch.append(pid)
    m = len(fpos)
    state = WorldState(
        config=cfg, seed=seed, t=0, rng=rng,
        pos=pos, heading=head, speed=np.zeros(n), dominance=dom,
        food_eaten=np.zeros(n, dtype=np.int64), eod_now=np.zeros(n, dtype=bool),
        bite_now=np.zeros(n, dtype=bool),
        alive=np.ones(n, dtype=bool) if alive is None else np.array(alive, dtype=bool).reshape(n),
        food_pos=np.array(fpos, dtype=float).reshape(m, 2),
        food_radius=np.full(m, cfg.efield.food_radius_m),
        food_pol=np.full(m, cfg.efield.food_polarizability),
        food_active=np.ones(m, dtype=bool), food_patch=np.array(fpatch, dtype=np.int64),
        amp_ema=np.zeros((n, cfg.sensors.n_ampullary)),
    )
    state.obs = observe(state)
    return state


def observe(state):
    """Build the field scene and transduce it (advances EMA and noise RNG)."""
    return transduce(state, build_scene_sources(state))


def _kinematics(pos, heading, thrust, turn, arena):
    new_heading = wrap_angle(heading + turn * arena.turn_rate_max * arena.dt_s)
    step = thrust * arena.v_max_mps * arena.dt_s
    raw = pos + step[:, None] * np.stack([np.cos(new_heading), np.sin(new_heading)], 1)
    new_pos = np.clip(raw, [0.0, 0.0], [arena.width_m, arena.height_m])
    wall = np.any(new_pos != raw, axis=1)
    return new_pos, new_heading, thrust * arena.v_max_mps, wall


def apply_kinematics(agent, action, config):
    """Single-agent kinematics; returns ``(new AgentState, wall_contact)``."""
    arena = config if isinstance(config, ArenaConfig) else as_sim_config(config).arena
    a = action.as_array() if isinstance(action, ActionCommand) else np.asarray(action, dtype=float)
    pos, head, speed, wall = _kinematics(np.atleast_2d(agent.pos), np.array([agent.heading]),
                                         np.array([a[0]]), np.array([a[1]]), arena)
    out = copy.copy(agent)
    out.pos, out.heading, out.speed = pos[0], float(head[0]), float(speed[0])
    return out, bool(wall[0])


def normalize_actions(actions, n):
    if isinstance(actions, np.ndarray):
        arr = np.asarray(actions, dtype=float)
    else:
        actions = list(actions)
        if len(actions) != n:
            raise ContractError(f"expected {n} actions, got {len(actions)}")
        arr = np.array([a.as_array() if isinstance(a, ActionCommand) else np.asarray(a, dtype=float)
                        for a in actions]).reshape(len(actions), -1)
    if arr.shape != (n, 4):
        raise ContractError(f"expected actions of shape ({n}, 4), got {arr.shape}")
    out = np.empty_like(arr)
    out[:, 0] = np.clip(arr[:, 0], 0.0, 1.0)
    out[:, 1] = np.clip(arr[:, 1], -1.0, 1.0)
    out[:, 2] = arr[:, 2] > 0.5
    out[:, 3] = arr[:, 3] > 0.5
    return out


def resolve_bites(state, actions):
    """Bite targets: nearest live conspecific within range and within +-60 deg of heading.

    Returns ``(delivered, received)`` as per-agent lists of agent ids.
    """
    n = state.n_agents
    acts = normalize_actions(actions, n)
    arena = state.config.arena
    delivered = [[] for _ in range(n)]
    received = [[] for _ in range(n)]
    for i in range(n):
        if not (acts[i, 3] and state.alive[i]):
            continue
        rel = state.pos - state.pos[i]
        d = np.hypot(rel[:, 0], rel[:, 1])
        ang = np.abs(wrap_angle(np.arctan2(rel[:, 1], rel[:, 0]) - state.heading[i]))
        ok = state.alive & (d <= arena.bite_range_m) & (ang <= BITE_HALF_ANGLE + 1e-12)
        ok[i] = False
        if not ok.any():
            continue
        dmin = d[ok].min()
        j = int(np.flatnonzero(ok & (d <= dmin + TIE_TOL))[0])
        delivered[i].append(j)
        received[j].append(i)
    return delivered, received


def update_food(state):
    """Replenish missing items, then let agents eat; mutates ``state``.

    Returns ``(eaten, replenished)``: per-agent lists of item indices and the
    list of reactivated item indices. An item goes to the nearest live agent
    within ``eat_range_m``; exact-distance ties go to the lowest id.
    """
    arena = state.config.arena
    rng = state.rng
    replenished = []
    for k in np.flatnonzero(~state.food_active):
        patch = arena.patches[state.food_patch[k]]
        if rng.random() < patch.replenish_prob:
            state.food_pos[k] = _uniform_in_disc(rng, patch.center, patch.radius_m, arena)
            state.food_active[k] = True
            replenished.append(int(k))

    n = state.n_agents
    eaten = [[] for _ in range(n)]
    active = np.flatnonzero(state.food_active)
    if len(active) and state.alive.any():
        rel = state.food_pos[active][:, None, :] - state.pos[None, :, :]
        d = np.hypot(rel[..., 0], rel[..., 1])
        d[:, ~state.alive] = np.inf
        for row, k in enumerate(active):
            dk = d[row]
            dmin = dk.min()
            if dmin > arena.eat_range_m:
                continue
            i = int(np.flatnonzero(dk <= dmin + TIE_TOL)[0])
            eaten[i].append(int(k))
            state.food_active[k] = False
    return eaten, replenished


def reward_terms(events, state, rcfg):
    """Per-agent list of ``(label, value)`` terms; rewards are their sums."""
    n = state.n_agents
    terms = [[] for _ in range(n)]
    for i in range(n):
        for _ in events.eaten[i]:
            terms[i].append(("food", rcfg.r_food))
        if events.eods[i]:
            terms[i].append(("eod", -rcfg.c_eod))
    for i in range(n):
        for j in events.bites_delivered[i]:
            if state.dominance[i] > state.dominance[j]:
                terms[i].append(("bite_given", -rcfg.p_small))
                terms[j].append(("bite_taken", -rcfg.p_big))
            else:
                terms[i].append(("bite_given", -rcfg.p_big))
                terms[j].append(("bite_taken", -rcfg.p_small))
    return terms


def compute_rewards(events, state, rcfg):
    """Individual fitness only: food minus EOD cost minus dominance-asymmetric bite penalties."""
    return np.array([sum(v for _, v in t) for t in reward_terms(events, state, rcfg)], dtype=float)


def step_env(state, actions):
    """Advance one step in place; returns ``(state, obs, rewards, events, done)``."""
    n = state.n_agents
    acts = normalize_actions(actions, n)
    cfg = state.config
    arena = cfg.arena
    alive = state.alive

    thrust = np.where(alive, acts[:, 0], 0.0)
    turn = np.where(alive, acts[:, 1], 0.0)
    pos, head, speed, wall = _kinematics(state.pos, state.heading, thrust, turn, arena)
    state.pos = np.where(alive[:, None], pos, state.pos)
    state.heading = np.where(alive, head, state.heading)
    state.speed = np.where(alive, speed, 0.0)
    state.eod_now = (acts[:, 2] > 0) & alive
    state.bite_now = (acts[:, 3] > 0) & alive

    events = StepEvents.empty(n)
    events.wall_contacts = wall & alive
    events.eods = state.eod_now.copy()
    events.bites_delivered, events.bites_received = resolve_bites(state, acts)
    events.eaten, events.replenished = update_food(state)
    state.food_eaten += np.array([len(e) for e in events.eaten], dtype=np.int64)

    state.t += 1
    state.obs = observe(state)
    rewards = compute_rewards(events, state, cfg.rewards)
    done = state.t == arena.episode_len
    return state, state.obs, rewards, events, done
