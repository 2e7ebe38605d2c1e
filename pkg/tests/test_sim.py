import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from electrofish.config import ArenaConfig, PatchSpec, RewardConfig, SimConfig
from electrofish.errors import ConstraintError, ContractError
from electrofish.sim import (ActionCommand, AgentState, StepEvents, apply_kinematics, compute_rewards,
                             resolve_bites, reset_env, reward_terms, step_env, update_food)

from conftest import place, sim_config

NULL = np.zeros(4)


def cfg_with(**arena_kw):
    return SimConfig(arena=ArenaConfig(**arena_kw))


def snapshots_equal(a, b):
    sa, sb = a.snapshot(), b.snapshot()
    assert sa.keys() == sb.keys()
    for k in sa:
        va, vb = sa[k], sb[k]
        if isinstance(va, np.ndarray):
            assert np.array_equal(va, vb), k
        else:
            assert va == vb, k


def test_reset_fills_patches_and_starts_at_zero():
    cfg = cfg_with(n_agents=1, patches=[PatchSpec(capacity=5)])
    st_ = reset_env(cfg, 7)
    assert st_.t == 0
    assert st_.food_active.sum() == 5
    assert st_.obs.shape == (1, cfg.sensors.obs_dim)


def test_reset_is_deterministic_and_seed_dependent():
    cfg = cfg_with(n_agents=4)
    snapshots_equal(reset_env(cfg, 7), reset_env(cfg, 7))
    assert not np.array_equal(reset_env(cfg, 7).pos, reset_env(cfg, 8).pos)


def test_reset_min_separation_and_bounds():
    cfg = cfg_with(n_agents=6)
    for seed in range(10):
        st_ = reset_env(cfg, seed)
        d = np.linalg.norm(st_.pos[:, None] - st_.pos[None], axis=-1)
        assert np.all(d[np.triu_indices(6, 1)] >= 2 * cfg.arena.body_length_m)
        assert np.all((st_.pos >= 0) & (st_.pos <= 1))
        assert np.all((st_.heading >= -np.pi) & (st_.heading < np.pi))


def test_overcrowded_arena_raises_config_error():
    with pytest.raises(ConstraintError, match="arena.n_agents"):
        reset_env(cfg_with(n_agents=200, width_m=0.3, height_m=0.3), 0)


def test_kinematics_examples():
    arena = ArenaConfig()
    a = AgentState(0, np.array([0.5, 0.5]), 0.0)
    same, wall = apply_kinematics(a, ActionCommand(0, 0), arena)
    assert np.array_equal(same.pos, a.pos) and same.heading == 0.0 and not wall
    moved, _ = apply_kinematics(a, ActionCommand(1.0, 0.0), arena)
    assert moved.pos[0] == pytest.approx(0.508, abs=1e-15)
    assert moved.pos[1] == 0.5 and moved.speed == pytest.approx(0.2)
    edge = AgentState(0, np.array([1.0, 0.5]), 0.0)
    clamped, wall = apply_kinematics(edge, ActionCommand(1.0, 0.0), arena)
    assert clamped.pos[0] == 1.0 and wall


def test_turn_is_applied_before_the_move():
    arena = ArenaConfig()
    a = AgentState(0, np.array([0.5, 0.5]), 0.0)
    b, _ = apply_kinematics(a, ActionCommand(1.0, 1.0), arena)
    h = np.pi * 0.04
    assert b.heading == pytest.approx(h)
    assert np.allclose(b.pos, [0.5 + 0.008 * np.cos(h), 0.5 + 0.008 * np.sin(h)])


def test_eating_and_tie_break():
    cfg = sim_config(n_agents=2, patches=[PatchSpec(capacity=1)])
    st_ = place(cfg, [[0.5, 0.51], [0.7, 0.7]], [0.0, 0.0], food=[[0.5, 0.5]])
    eaten, _ = update_food(st_)
    assert eaten == [[0], []]
    tie = place(cfg, [[0.49, 0.5], [0.51, 0.5]], [0.0, 0.0], food=[[0.5, 0.5]])
    eaten, _ = update_food(tie)
    assert eaten == [[0], []]
    assert not tie.food_active[0]


def test_full_replenishment_restores_capacity():
    patch = PatchSpec(center=(0.5, 0.5), radius_m=0.1, capacity=5, replenish_prob=1.0)
    cfg = cfg_with(n_agents=1, patches=[patch])
    st_ = reset_env(cfg, 0, positions=[[0.9, 0.9]])
    st_.food_active[[1, 3]] = False
    _, replenished = update_food(st_)
    assert sorted(replenished) == [1, 3]
    assert st_.food_active.sum() == 5


def test_bites():
    cfg = sim_config(n_agents=3)
    st_ = place(cfg, [[0.5, 0.5], [0.55, 0.5], [0.9, 0.9]], [0.0, 0.0, 0.0])
    acts = np.zeros((3, 4))
    acts[0, 3] = 1
    d, r = resolve_bites(st_, acts)
    assert d == [[1], [], []] and r == [[], [0], []]
    lonely = place(cfg, [[0.2, 0.2], [0.6, 0.6], [0.9, 0.9]], [0.0, 0.0, 0.0])
    assert resolve_bites(lonely, acts)[0] == [[], [], []]
    two = place(cfg, [[0.5, 0.5], [0.54, 0.5], [0.58, 0.5]], [0.0, 0.0, 0.0])
    assert resolve_bites(two, acts)[0][0] == [1]
    behind = place(cfg, [[0.5, 0.5], [0.45, 0.5], [0.9, 0.9]], [0.0, 0.0, 0.0])
    assert resolve_bites(behind, acts)[0][0] == []


def test_reward_examples():
    rcfg = RewardConfig(r_food=1.0, c_eod=0.01, p_small=0.1, p_big=1.0)
    cfg = sim_config(n_agents=2)
    st_ = place(cfg, [[0.3, 0.3], [0.7, 0.7]], [0.0, 0.0], dominance=[3.0, 1.0])
    ev = StepEvents.empty(2)
    assert np.all(compute_rewards(ev, st_, rcfg) == 0)
    ev.eaten = [[0], []]
    ev.eods = np.array([True, False])
    assert compute_rewards(ev, st_, rcfg)[0] == pytest.approx(0.99)
    ev = StepEvents.empty(2)
    ev.bites_delivered, ev.bites_received = [[1], []], [[], [0]]
    assert np.allclose(compute_rewards(ev, st_, rcfg), [-0.1, -1.0])
    # subordinate 1 bites dominant 0: the biter pays the big penalty
    ev.bites_delivered, ev.bites_received = [[], [0]], [[1], []]
    assert np.allclose(compute_rewards(ev, st_, rcfg), [-0.1, -1.0])
    st_.dominance[:] = 2.0
    assert np.allclose(compute_rewards(ev, st_, rcfg), [-0.1, -1.0])


def test_reward_independent_of_others_food():
    cfg = sim_config(n_agents=3)
    st_ = place(cfg, [[0.3, 0.3], [0.5, 0.5], [0.7, 0.7]], [0.0] * 3)
    ev = StepEvents.empty(3)
    ev.eaten = [[0], [], []]
    r1 = compute_rewards(ev, st_, RewardConfig())
    ev.eaten = [[0], [1, 2, 3], []]
    r2 = compute_rewards(ev, st_, RewardConfig())
    assert r1[0] == r2[0] and r1[2] == r2[2]


def test_episode_len_one_is_done_after_one_step():
    st_ = reset_env(cfg_with(n_agents=2, episode_len=1), 0)
    *_, done = step_env(st_, np.zeros((2, 4)))
    assert done


def test_null_actions_keep_agents_still_and_rewards_zero():
    st_ = reset_env(cfg_with(n_agents=3, patches=[PatchSpec(center=(0.1, 0.1), radius_m=0.05)]), 1)
    st_.pos[:] = [[0.5, 0.5], [0.7, 0.7], [0.3, 0.8]]
    p0 = st_.pos.copy()
    _, _, r, _, _ = step_env(st_, np.zeros((3, 4)))
    assert np.array_equal(st_.pos, p0) and np.all(r == 0)


def test_action_count_mismatch():
    st_ = reset_env(cfg_with(n_agents=2), 0)
    with pytest.raises(ContractError):
        step_env(st_, np.zeros((3, 4)))
    with pytest.raises(ContractError):
        step_env(st_, [ActionCommand()])


def rollout(cfg, seed, actions):
    st_ = reset_env(cfg, seed)
    out = []
    for a in actions:
        _, obs, r, ev, _ = step_env(st_, a)
        out.append((st_.pos.copy(), obs.copy(), r.copy()))
    return st_, out


def test_identical_inputs_identical_trajectories():
    cfg = cfg_with(n_agents=3)
    rng = np.random.default_rng(0)
    acts = [np.column_stack([rng.random(3), rng.uniform(-1, 1, 3), rng.random(3) < .5, rng.random(3) < .5])
            for _ in range(50)]
    a, ta = rollout(cfg, 3, acts)
    b, tb = rollout(cfg, 3, acts)
    snapshots_equal(a, b)
    for x, y in zip(ta, tb):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["Competition", "NoCompetition"]))
def test_step_invariants(seed, mode):
    cfg = cfg_with(n_agents=3, competition_mode=mode, episode_len=60)
    if mode == "Competition":
        cfg = dataclasses.replace(cfg, arena=dataclasses.replace(
            cfg.arena, patches=[dataclasses.replace(p, replenish_prob=0.0) for p in cfg.arena.patches]))
    rng = np.random.default_rng(seed)
    st_ = reset_env(cfg, seed)
    initial_items = int(st_.food_active.sum())
    total = 0
    for _ in range(60):
        acts = np.column_stack([rng.random(3), rng.uniform(-1, 1, 3), rng.random(3) < .5, rng.random(3) < .5])
        _, _, r, ev, _ = step_env(st_, acts)
        assert np.all((st_.pos >= 0) & (st_.pos <= 1))
        flat = [k for e in ev.eaten for k in e]
        assert len(flat) == len(set(flat))
        terms = reward_terms(ev, st_, cfg.rewards)
        assert np.allclose(r, [sum(v for _, v in t) for t in terms])
        total += len(flat)
    if mode == "Competition":
        assert total <= initial_items


def test_step_order_food_reflects_post_move_position():
    patch = PatchSpec(center=(0.5, 0.5), radius_m=0.01, capacity=1, replenish_prob=0.0)
    cfg = cfg_with(n_agents=1, patches=[patch])
    st_ = reset_env(cfg, 0, positions=[[0.47, 0.5]], headings=[0.0])
    st_.food_pos[0] = [0.5, 0.5]
    # 0.03 + 0.008 away before the move, 0.022 after it
    st_.pos[0] = [0.462, 0.5]
    _, _, r, ev, _ = step_env(st_, np.array([[1.0, 0.0, 0.0, 0.0]]))
    assert ev.eaten == [[0]] and r[0] == pytest.approx(1.0)
