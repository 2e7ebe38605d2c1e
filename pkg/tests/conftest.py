import dataclasses

import numpy as np
import pytest
import torch

from electrofish.config import ArenaConfig, ExperimentConfig, FieldConfig, PatchSpec, SensorLayout, SimConfig
from electrofish.sim import observe, reset_env


def sim_config(n_agents=2, patches=(), k_wall=1.0, background_amp=1.0, noise_frac=0.01, episode_len=3000,
               **sensor_kw):
    arena = ArenaConfig(n_agents=n_agents, patches=list(patches), episode_len=episode_len)
    efield = FieldConfig(k_wall=k_wall, background_amp=background_amp)
    sensors = SensorLayout(noise_frac=noise_frac, **sensor_kw)
    return SimConfig(arena=arena, efield=efield, sensors=sensors)


def place(cfg, positions, headings, eod=None, food=None, dominance=None, seed=0, alive=None):
    """World state with agents and food at fixed spots; observations recomputed."""
    n = len(positions)
    cfg = dataclasses.replace(cfg, arena=dataclasses.replace(cfg.arena, n_agents=n))
    st = reset_env(cfg, seed, positions=positions, headings=headings,
                   dominance=dominance if dominance is not None else np.ones(n), alive=alive)
    st.eod_now = np.zeros(n, bool) if eod is None else np.asarray(eod, bool)
    food = np.zeros((0, 2)) if food is None else np.asarray(food, float).reshape(-1, 2)
    m = len(food)
    st.food_pos = food.copy()
    st.food_radius = np.full(m, cfg.efield.food_radius_m)
    st.food_pol = np.full(m, cfg.efield.food_polarizability)
    st.food_active = np.ones(m, bool)
    st.food_patch = np.zeros(m, np.int64)
    st.amp_ema[:] = 0.0
    return st


def fresh_obs(st):
    st.amp_ema[:] = 0.0
    return observe(st)


@pytest.fixture
def one_patch():
    return PatchSpec(center=(0.5, 0.5), radius_m=0.1, capacity=5, replenish_prob=0.5)


@pytest.fixture
def exp_cfg():
    return ExperimentConfig()


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(old)


# --- acceptance report --------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line; printed at the end of the run."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
