"""Recurrent multi-agent PPO with shared parameters and per-agent critics."""
from __future__ import annotations

import logging
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ContractError, TrainingDivergedError
from .policy import PolicyParams, evaluate_actions, policy_forward, sample_actions
from .runner import episode_seed
from .sim import reset_env, step_env

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("update", "env_steps", "episodes", "mean_episode_reward", "mean_step_reward",
                  "eod_rate", "food_per_episode", "pg_loss", "value_loss", "entropy",
                  "approx_kl", "clip_frac", "config_hash")


class VecEnv:
    """``n_envs`` independent simulations stepped in sequence, with auto-reset.

    Episode ``k`` of env ``e`` is seeded with ``episode_seed(seed, e, k)``.
    Completed-episode statistics accumulate in ``finished`` until drained.
    """

    def __init__(self, sim_cfg, n_envs, seed):
        self.sim_cfg = sim_cfg
        self.n_envs = int(n_envs)
        self.n_agents = sim_cfg.arena.n_agents
        self.seed = int(seed)
        self.episode_idx = np.zeros(self.n_envs, dtype=np.int64)
        self.states = [reset_env(sim_cfg, episode_seed(self.seed, e, 0)) for e in range(self.n_envs)]
        self.ep_return = np.zeros((self.n_envs, self.n_agents))
        self.ep_eods = np.zeros((self.n_envs, self.n_agents))
        self.finished = []

    @property
    def batch(self):
        return self.n_envs * self.n_agents

    def obs(self):
        return np.concatenate([s.obs for s in self.states])

    def step(self, commands):
        """Step every env; returns ``(obs, rewards, dones)`` flattened over (env, agent)."""
        n = self.n_agents
        rewards = np.empty(self.batch)
        dones = np.zeros(self.batch, dtype=bool)
        for e, s in enumerate(self.states):
            _, _, r, events, done = step_env(s, commands[e * n:(e + 1) * n])
            rewards[e * n:(e + 1) * n] = r
            self.ep_return[e] += r
            self.ep_eods[e] += events.eods
            if done:
                dones[e * n:(e + 1) * n] = True
                self.finished.append({
                    "return": float(self.ep_return[e].mean()),
                    "food": float(s.food_eaten.mean()),
                    "eod_rate": float(self.ep_eods[e].mean() / s.t),
                })
                self.ep_return[e] = 0.0
                self.ep_eods[e] = 0.0
                self.episode_idx[e] += 1
                self.states[e] = reset_env(self.sim_cfg, episode_seed(self.seed, e, self.episode_idx[e]))
        return self.obs(), rewards, dones

    def drain(self):
        out, self.finished = self.finished, []
        return out


@dataclass
class RolloutBuffer:
    """Per (step, sequence) arrays; a sequence is one (env, agent) pair.

    ``starts[t]`` marks a hidden-state reset before step ``t``; ``h_in[k]`` is
    the hidden state entering step ``k * segment_len`` (before any reset).
    """

    obs: np.ndarray
    raw_actions: np.ndarray
    logprobs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    starts: np.ndarray
    h_in: np.ndarray
    bootstrap: np.ndarray
    segment_len: int
    metadata: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.obs.shape[0]

    @property
    def n_seq(self):
        return self.obs.shape[1]


def collect_rollout(envs, params, T, rng, h, starts_next, segment_len=None):
    """Step all envs ``T`` times with sampled actions.

    ``h`` is the (B, H) hidden state carried in from the previous rollout and
    ``starts_next`` the (B,) reset flags for the first step. Returns
    ``(buffer, h, starts_next)`` to carry into the next call.
    """
    L = T if segment_len is None else int(segment_len)
    if T % L:
        raise ContractError(f"segment length {L} must divide rollout length {T}")
    B, H = envs.batch, params.hidden_dim
    D = params.obs_dim
    obs_b = np.zeros((T, B, D), dtype=np.float64)
    raw_b = np.zeros((T, B, 4))
    logp_b = np.zeros((T, B))
    val_b = np.zeros((T, B))
    rew_b = np.zeros((T, B))
    done_b = np.zeros((T, B), dtype=bool)
    start_b = np.zeros((T, B), dtype=bool)
    h_in = np.zeros((T // L, B, H))
    h = torch.as_tensor(h, dtype=params.W_z.dtype)
    starts = np.asarray(starts_next, dtype=bool).copy()
    obs = envs.obs()
    with torch.no_grad():
        for t in range(T):
            if t % L == 0:
                h_in[t // L] = h.numpy()
            h = h * torch.as_tensor(~starts, dtype=h.dtype)[:, None]
            dist, value, h = policy_forward(params, obs, h)
            raw, cmds, logp = sample_actions(dist, rng)
            obs_b[t], raw_b[t], logp_b[t] = obs, raw, logp
            val_b[t] = value.numpy()
            start_b[t] = starts
            obs, rew, dones = envs.step(cmds)
            rew_b[t], done_b[t] = rew, dones
            starts = dones
        h_next = h * torch.as_tensor(~starts, dtype=h.dtype)[:, None]
        _, boot, _ = policy_forward(params, obs, h_next)
    buf = RolloutBuffer(obs_b, raw_b, logp_b, val_b, rew_b, done_b, start_b, h_in,
                        boot.numpy().astype(np.float64), L,
                        {"n_envs": envs.n_envs, "n_agents": envs.n_agents, "T": T})
    return buf, h, starts


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Generalized advantage estimates along axis 0; returns ``(advantages, returns)``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nonterm = 1.0 - np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != nonterm.shape:
        raise ContractError("rewards, values and dones must be aligned")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_v = np.asarray(bootstrap, dtype=np.float64)
    next_a = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_v * nonterm[t] - values[t]
        next_a = delta + gamma * lam * nonterm[t] * next_a
        adv[t] = next_a
        next_v = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    """Zero-mean unit-std advantages; a single element is left as is."""
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size <= 1:
        return adv.copy()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, adv, clip_eps):
    """Pointwise PPO objective ``min(r A, clip(r) A)`` (to be maximized)."""
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def make_optimizer(params, lr):
    return torch.optim.Adam(params.parameters(), lr=lr, eps=1e-5)


def _segments(buf, adv, ret):
    """Reshape (T, B) arrays into (L, n_seg * B) sequence batches."""
    L, T, B = buf.segment_len, buf.T, buf.n_seq
    K = T // L

    def seg(x):
        x = np.asarray(x)
        return x.reshape(K, L, B, *x.shape[2:]).swapaxes(0, 1).reshape(L, K * B, *x.shape[2:])

    return {
        "obs": seg(buf.obs), "raw": seg(buf.raw_actions), "logp": seg(buf.logprobs),
        "starts": seg(buf.starts), "adv": seg(adv), "ret": seg(ret),
        "h0": buf.h_in.reshape(K * B, -1),
    }


def ppo_update(params, optimizer, buf, cfg, rng):
    """Clipped-surrogate epochs over length-L segments. Returns a stats dict."""
    adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, cfg.gamma, cfg.lam)
    adv = normalize_advantages(adv)
    data = _segments(buf, adv, ret)
    n_seq = data["h0"].shape[0]
    n_mb = max(1, min(cfg.n_minibatches, n_seq))
    dtype = params.W_z.dtype
    tens = {k: torch.as_tensor(v, dtype=dtype) for k, v in data.items() if k != "starts"}
    starts = torch.as_tensor(data["starts"], dtype=dtype)
    stats = {"pg_loss": [], "value_loss": [], "entropy": [], "approx_kl": [], "clip_frac": [], "grad_norm": []}
    for _ in range(cfg.epochs):
        order = rng.permutation(n_seq)
        for mb in np.array_split(order, n_mb):
            idx = torch.as_tensor(mb)
            logp, values, ent = evaluate_actions(params, tens["obs"][:, idx], tens["h0"][idx],
                                                 tens["raw"][:, idx], starts[:, idx])
            ratio = torch.exp(logp - tens["logp"][:, idx])
            a = tens["adv"][:, idx]
            pg_loss = -clipped_surrogate(ratio, a, cfg.clip_eps).mean()
            v_loss = 0.5 * ((values - tens["ret"][:, idx]) ** 2).mean()
            entropy = ent.mean()
            loss = pg_loss + cfg.vf_coef * v_loss - cfg.ent_coef * entropy
            if not torch.isfinite(loss):
                raise TrainingDivergedError("non-finite PPO loss; update aborted", {
                    "pg_loss": pg_loss.item(), "value_loss": v_loss.item(), "entropy": entropy.item(),
                    "max_ratio": ratio.max().item(),
                    "nonfinite_params": [n for n, p in params.named_parameters() if not torch.isfinite(p).all()],
                })
            optimizer.zero_grad()
            loss.backward()
            gnorm = torch.nn.utils.clip_grad_norm_(params.parameters(), cfg.max_grad_norm)
            if cfg.lr > 0:
                optimizer.step()
            with torch.no_grad():
                lr = ratio.log()
                stats["pg_loss"].append(float(pg_loss))
                stats["value_loss"].append(float(v_loss))
                stats["entropy"].append(float(entropy))
                stats["approx_kl"].append(float(((ratio - 1) - lr).mean()))
                stats["clip_frac"].append(float(((ratio - 1).abs() > cfg.clip_eps).to(dtype).mean()))
                stats["grad_norm"].append(float(gnorm))
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["first_clip_frac"] = stats["clip_frac"][0]
    out["first_approx_kl"] = stats["approx_kl"][0]
    return out


class Trainer:
    """Holds every piece of mutable training state so it can be pickled for resume."""

    def __init__(self, cfg):
        cfg.validate()
        if cfg.training.centralized_critic:
            raise NotImplementedError("centralized critic is reserved for a future variant")
        self.cfg = cfg
        tc = cfg.training
        self.sim_cfg = cfg.sim
        self.params = PolicyParams(cfg.sensors.obs_dim, cfg.policy.hidden_dim, cfg.policy.init_log_std,
                                   seed=cfg.seed)
        self.optimizer = make_optimizer(self.params, tc.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.envs = VecEnv(self.sim_cfg, tc.n_envs, episode_seed(cfg.seed, 2))
        self.h = self.params.initial_hidden(self.envs.batch).detach()
        self.starts = np.ones(self.envs.batch, dtype=bool)
        self.update = 0
        self.env_steps = 0
        self.metric_rows = []
        self._window = self._empty_window()

    @staticmethod
    def _empty_window():
        return {"episodes": [], "step_reward": [], "stats": []}

    def step(self):
        tc = self.cfg.training
        buf, self.h, self.starts = collect_rollout(self.envs, self.params, tc.rollout_len, self.rng,
                                                   self.h, self.starts, tc.segment_len)
        stats = ppo_update(self.params, self.optimizer, buf, tc, self.rng)
        self.update += 1
        self.env_steps += tc.rollout_len * tc.n_envs
        self._window["episodes"].extend(self.envs.drain())
        self._window["step_reward"].append(float(buf.rewards.mean()))
        self._window["stats"].append(stats)
        row = None
        if self.update % tc.metrics_every == 0:
            row = self._flush_metrics()
        return stats, row

    def _flush_metrics(self):
        w = self._window
        eps = w["episodes"]
        mean = lambda key: float(np.mean([e[key] for e in eps])) if eps else math.nan  # noqa: E731
        st = lambda key: float(np.mean([s[key] for s in w["stats"]]))  # noqa: E731
        row = {
            "update": self.update, "env_steps": self.env_steps, "episodes": len(eps),
            "mean_episode_reward": mean("return"), "mean_step_reward": float(np.mean(w["step_reward"])),
            "eod_rate": mean("eod_rate"), "food_per_episode": mean("food"),
            "pg_loss": st("pg_loss"), "value_loss": st("value_loss"), "entropy": st("entropy"),
            "approx_kl": st("approx_kl"), "clip_frac": st("clip_frac"), "config_hash": self.cfg.hash,
        }
        self.metric_rows.append(row)
        self._window = self._empty_window()
        return row

    def done(self):
        return self.env_steps >= self.cfg.training.total_env_steps


def format_metric_row(row):
    return "\t".join(row[c] if c == "config_hash" else repr(row[c]) for c in METRIC_COLUMNS)


def write_metrics(path, rows):
    lines = ["\t".join(METRIC_COLUMNS)] + [format_metric_row(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path):
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        rows.append({c: (v if c == "config_hash" else float(v)) for c, v in zip(cols, vals)})
    return rows


STATE_FILE = "trainer_state.pkl"
METRICS_FILE = "metrics.tsv"


def train(cfg, out_dir=None, resume=True, max_updates=None, progress=None):
    """Train until ``total_env_steps``; returns the Trainer.

    Writes ``metrics.tsv``, ``checkpoint_<update>.efck``, ``final.efck`` and a
    pickled ``trainer_state.pkl`` into ``out_dir``. With ``resume`` the latest
    state file is picked up and training continues where it stopped.
    ``max_updates`` stops early (used to simulate an interruption).
    """
    out = Path(out_dir if out_dir is not None else cfg.resolved_output_dir())
    if cfg.training.determinism == "strict":
        torch.set_num_threads(1)
    state_path = out / STATE_FILE
    trainer = None
    if resume and state_path.exists():
        with state_path.open("rb") as f:
            trainer = pickle.load(f)
        if trainer.cfg.hash != cfg.hash:
            raise ContractError("trainer state in the output directory belongs to a different config")
        log.info("resuming at update %d (%d env steps)", trainer.update, trainer.env_steps)
    if trainer is None:
        trainer = Trainer(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / METRICS_FILE, trainer.metric_rows)
    tc = cfg.training
    n_done = 0
    while not trainer.done():
        if max_updates is not None and n_done >= max_updates:
            break
        stats, row = trainer.step()
        n_done += 1
        if row is not None:
            with (out / METRICS_FILE).open("a") as f:
                f.write(format_metric_row(row) + "\n")
            if progress:
                progress(row)
        if trainer.update % tc.checkpoint_every == 0:
            _save_state(trainer, out)
    if trainer.done():
        save_checkpoint(out / "final.efck", trainer.params, cfg.sensors, cfg.hash,
                        {"update": trainer.update, "env_steps": trainer.env_steps})
        _save_state(trainer, out)
    return trainer


def _save_state(trainer, out):
    save_checkpoint(out / f"checkpoint_{trainer.update:06d}.efck", trainer.params, trainer.cfg.sensors,
                    trainer.cfg.hash, {"update": trainer.update, "env_steps": trainer.env_steps})
    tmp = out / (STATE_FILE + ".tmp")
    with tmp.open("wb") as f:
        pickle.dump(trainer, f)
    tmp.replace(out / STATE_FILE)
