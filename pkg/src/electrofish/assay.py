"""Two-fish patch-finding assay.

A resident fish A sits at the centre of a fully replenishing patch; a
newcomer B starts uniformly within communication range of A (outside the
patch). A trial succeeds once B's centre is inside the patch. The control
repeats the same trials with A removed (present but dead: no EOD, no body
in the bite or food logic).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import PatchSpec, as_experiment_config
from .errors import ContractError
from .policy import PolicyController
from .runner import CompositeController, KnollenorganClimber, StationaryEmitter, episode_seed, run_episode

TRIAL_COLUMNS = ("dom_A", "dom_B", "remove_A", "trial", "start_x", "start_y", "cell",
                 "success", "steps_to_reach", "food_B")


@dataclass
class AssayResult:
    trials: list = field(default_factory=list)

    def success_rate(self, remove_A=None, dominance=None):
        rows = [r for r in self.trials
                if (remove_A is None or r["remove_A"] == remove_A)
                and (dominance is None or (r["dom_A"], r["dom_B"]) == tuple(dominance))]
        return float(np.mean([r["success"] for r in rows])) if rows else float("nan")

    def summary(self):
        """One row per (dominance pair, remove_A)."""
        keys = sorted({(r["dom_A"], r["dom_B"], r["remove_A"]) for r in self.trials})
        out = []
        for a, b, rem in keys:
            rows = [r for r in self.trials if (r["dom_A"], r["dom_B"], r["remove_A"]) == (a, b, rem)]
            reached = [r["steps_to_reach"] for r in rows if r["success"]]
            out.append({
                "dom_A": a, "dom_B": b, "remove_A": rem, "n_trials": len(rows),
                "success_rate": float(np.mean([r["success"] for r in rows])),
                "mean_steps_to_reach": float(np.mean(reached)) if reached else float("nan"),
                "mean_food_B": float(np.mean([r["food_B"] for r in rows])),
            })
        return out

    def spatial(self, remove_A=False):
        """Success rate per B start cell: ``{cell: (n, rate)}``."""
        cells = {}
        for r in self.trials:
            if r["remove_A"] == remove_A:
                cells.setdefault(r["cell"], []).append(r["success"])
        return {c: (len(v), float(np.mean(v))) for c, v in sorted(cells.items())}


def assay_sim_config(cfg):
    """Two agents, one fully replenishing patch, episodes capped at ``max_steps``."""
    ac = cfg.assay
    patch = PatchSpec(center=tuple(ac.patch_center), radius_m=ac.patch_radius_m,
                      capacity=8, replenish_prob=1.0)
    arena = dataclasses.replace(cfg.arena, n_agents=2, patches=[patch], episode_len=ac.max_steps)
    return dataclasses.replace(cfg.sim, arena=arena)


def spawn_b(rng, cfg):
    """Uniform in the disc of communication radius around A, inside the arena, outside the patch."""
    ac, arena = cfg.assay, cfg.arena
    radius = ac.comm_radius_m or cfg.sensors.knollenorgan_range_m
    c = np.asarray(ac.patch_center, dtype=float)
    margin = 0.5 * arena.body_length_m
    for _ in range(100_000):
        r = radius * np.sqrt(rng.random())
        a = rng.uniform(-np.pi, np.pi)
        p = c + r * np.array([np.cos(a), np.sin(a)])
        inside_arena = margin <= p[0] <= arena.width_m - margin and margin <= p[1] <= arena.height_m - margin
        if inside_arena and np.hypot(*(p - c)) > ac.patch_radius_m:
            return p
    raise ContractError("could not place B inside the arena and outside the patch")


def scripted_controllers(cfg, rng):
    """A: stationary emitter. B: climbs its Knollenorgan bearing gradient."""
    return CompositeController([([0], StationaryEmitter()), ([1], KnollenorganClimber(cfg.sensors, rng))])


def _grid_cell(p, cfg):
    n = cfg.assay.grid_n
    gx = min(int(p[0] / cfg.arena.width_m * n), n - 1)
    gy = min(int(p[1] / cfg.arena.height_m * n), n - 1)
    return gy * n + gx


def run_two_fish_assay(cfg, policy=None, remove_A=(False, True), dominance_pairs=None,
                       n_trials=None, b_starts=None):
    """Run the assay over dominance pairs and with/without A.

    ``policy`` is ``None`` for the scripted pair, or PolicyParams driving both
    fish. ``b_starts`` optionally fixes B's start positions (one per trial).
    Trials with the same index share B's start and all seeds across the
    with-A and control arms.
    """
    cfg = as_experiment_config(cfg)
    ac = cfg.assay
    sim = assay_sim_config(cfg)
    if policy is not None and policy.obs_dim != sim.sensors.obs_dim:
        raise ContractError(f"policy expects observations of length {policy.obs_dim}, "
                            f"assay layout produces {sim.sensors.obs_dim}")
    pairs = [tuple(p) for p in (dominance_pairs or ac.dominance_pairs)]
    n_trials = ac.n_trials if n_trials is None else int(n_trials)
    arms = (remove_A,) if isinstance(remove_A, bool) else tuple(remove_A)
    center = np.asarray(ac.patch_center, dtype=float)
    result = AssayResult()
    for pi, (da, db) in enumerate(pairs):
        for trial in range(n_trials):
            seed = episode_seed(ac.seed, pi, trial)
            srng = np.random.default_rng(episode_seed(ac.seed, pi, trial, 1))
            b0 = np.asarray(b_starts[trial], dtype=float) if b_starts is not None else spawn_b(srng, cfg)
            heads = srng.uniform(-np.pi, np.pi, 2)
            for rem in arms:
                crng = np.random.default_rng(episode_seed(ac.seed, pi, trial, 2))
                ctrl = scripted_controllers(cfg, crng) if policy is None else PolicyController(policy, 2, crng)
                reached = {"step": None}

                def check(state, t, reached=reached):
                    if reached["step"] is None and np.hypot(*(state.pos[1] - center)) <= ac.patch_radius_m:
                        reached["step"] = t + 1
                    return False

                _, state = run_episode(sim, ctrl, seed, cfg.hash, reset_kwargs={
                    "positions": [center, b0], "headings": heads,
                    "dominance": [da, db], "alive": [not rem, True]}, on_step=check)
                result.trials.append({
                    "dom_A": da, "dom_B": db, "remove_A": rem, "trial": trial,
                    "start_x": float(b0[0]), "start_y": float(b0[1]), "cell": _grid_cell(b0, cfg),
                    "success": reached["step"] is not None,
                    "steps_to_reach": -1 if reached["step"] is None else reached["step"],
                    "food_B": int(state.food_eaten[1]),
                })
    return result
