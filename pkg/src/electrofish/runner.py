"""Episode driver, scripted controllers, and record/replay.

A controller is anything with ``act(obs, state) -> commands`` where ``obs``
is the (n_agents, obs_dim) observation array and ``commands`` an
(n_agents, 4) array of ``[thrust, turn, eod, bite]``.
"""
from __future__ import annotations

import numpy as np

from .episode_log import EpisodeRecorder
from .sim import normalize_actions, reset_env, step_env


def episode_seed(base, *keys):
    """64-bit seed derived from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(base) & (2**63 - 1), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class RandomController:
    """Uniform random commands: the baseline policy."""

    def __init__(self, rng, eod_prob=0.5, bite_prob=0.5):
        self.rng = rng
        self.eod_prob, self.bite_prob = eod_prob, bite_prob

    def act(self, obs, state=None):
        n = len(obs)
        return np.column_stack([
            self.rng.random(n), self.rng.uniform(-1.0, 1.0, n),
            self.rng.random(n) < self.eod_prob, self.rng.random(n) < self.bite_prob,
        ]).astype(float)


class NullController:
    def act(self, obs, state=None):
        return np.zeros((len(obs), 4))


class ReplayController:
    """Feeds back commands stored in an EpisodeLog."""

    def __init__(self, log):
        self.cmds = np.stack([log.column("thrust"), log.column("turn"),
                              log.column("eod").astype(float), log.column("bite").astype(float)], axis=-1)
        self.t = 0

    def act(self, obs, state=None):
        out = self.cmds[self.t]
        self.t += 1
        return out


class BurstyEmitter:
    """Two-state Markov EOD generator: bursts of rapid discharges separated by pauses.

    In the burst state each step fires with ``p_burst``; in the pause state with
    ``p_pause``. States switch with ``p_enter_pause`` / ``p_exit_pause`` per step.
    Moves slowly forward with a small random turn.
    """

    def __init__(self, rng, p_burst=0.5, p_pause=0.0, p_enter_pause=0.1, p_exit_pause=0.03):
        self.rng = rng
        self.p = (p_burst, p_pause)
        self.p_switch = (p_enter_pause, p_exit_pause)
        self.mode = None

    def act(self, obs, state=None):
        n = len(obs)
        if self.mode is None:
            self.mode = np.zeros(n, dtype=int)
        switch = self.rng.random(n) < np.where(self.mode == 0, self.p_switch[0], self.p_switch[1])
        self.mode = np.where(switch, 1 - self.mode, self.mode)
        fire = self.rng.random(n) < np.where(self.mode == 0, self.p[0], self.p[1])
        turn = self.rng.uniform(-0.3, 0.3, n)
        return np.column_stack([np.full(n, 0.3), turn, fire, np.zeros(n)]).astype(float)


class StationaryEmitter:
    """Stays put and discharges every step (the assay's resident fish)."""

    def act(self, obs, state=None):
        n = len(obs)
        return np.column_stack([np.zeros(n), np.zeros(n), np.ones(n), np.zeros(n)])


class KnollenorganClimber:
    """Swims toward the strongest conspecific EOD bearing; wanders when none is heard.

    Reads only its own observation vector, through the layout's Knollenorgan
    slice, so it is a legitimate sensor-driven policy.
    """

    def __init__(self, layout, rng, wander_turn=0.5, gain=2.0):
        if not layout.knollenorgan_enabled:
            raise ValueError("the climber needs the Knollenorgan channel")
        self.sl = layout.block_slices()["knollenorgan"]
        self.n_bins = layout.n_knollenorgan_bins
        self.rng = rng
        self.wander_turn = wander_turn
        self.gain = gain

    def act(self, obs, state=None):
        kn = np.asarray(obs)[:, self.sl]
        n = len(kn)
        width = 2.0 * np.pi / self.n_bins
        out = np.zeros((n, 4))
        out[:, 0] = 1.0
        for i in range(n):
            if kn[i].max() > 0:
                bearing = -np.pi + (np.argmax(kn[i]) + 0.5) * width
                out[i, 1] = np.clip(self.gain * bearing, -1.0, 1.0)
            else:
                out[i, 1] = self.rng.uniform(-self.wander_turn, self.wander_turn)
        return out


class CompositeController:
    """Different controllers for different agents: ``[(agent_indices, controller), ...]``."""

    def __init__(self, parts):
        self.parts = [(np.asarray(idx, dtype=int), c) for idx, c in parts]

    def act(self, obs, state=None):
        out = np.zeros((len(obs), 4))
        for idx, c in self.parts:
            out[idx] = c.act(np.asarray(obs)[idx], state)
        return out


def run_episode(sim_cfg, controller, seed, config_hash="", record_obs=False, reset_kwargs=None,
                max_steps=None, on_step=None):
    """Run one episode from ``reset_env(sim_cfg, seed)`` and return its EpisodeLog.

    ``on_step(state, t)`` may return True to stop early (the log is then shorter
    than ``episode_len``).
    """
    state = reset_env(sim_cfg, seed, **(reset_kwargs or {}))
    rec = EpisodeRecorder(sim_cfg, config_hash, seed, record_obs)
    limit = sim_cfg.arena.episode_len if max_steps is None else min(max_steps, sim_cfg.arena.episode_len)
    if on_step is not None and on_step(state, -1):
        return rec.finish(), state
    for t in range(limit):
        cmds = normalize_actions(controller.act(state.obs, state), state.n_agents)
        state, _, rewards, events, done = step_env(state, cmds)
        rec.record(t, state, cmds, rewards, events)
        if done or (on_step is not None and on_step(state, t)):
            break
    return rec.finish(), state


def replay_episode(log, sim_cfg, config_hash=None):
    """Re-simulate a logged episode from its seed and logged commands."""
    out, _ = run_episode(sim_cfg, ReplayController(log), log.header["seed"],
                         log.header["config_hash"] if config_hash is None else config_hash,
                         record_obs=log.obs is not None, max_steps=log.n_steps)
    return out


def mean_food_per_episode(sim_cfg, controller_factory, n_episodes, seed):
    """Mean per-agent food eaten per episode over ``n_episodes`` seeded episodes."""
    totals = []
    for k in range(n_episodes):
        log, _ = run_episode(sim_cfg, controller_factory(k), episode_seed(seed, k))
        totals.append(log.food_totals().mean())
    return float(np.mean(totals))
