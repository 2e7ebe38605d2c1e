"""Shared recurrent actor-critic.

A GRU trunk feeds two separate two-hidden-layer tanh MLPs: the actor emits
distribution parameters for the four action heads, the critic a scalar value.
One parameter set serves every agent; each agent carries its own hidden state.

GRU update (row-vector convention)::

    z  = sigmoid(x W_z^T + h U_z^T + b_z)
    r  = sigmoid(x W_r^T + h U_r^T + b_r)
    hc = tanh(x W_h^T + (r * h) U_h^T + b_h)
    h' = (1 - z) * h + z * hc

Raw actions are ``[u_thrust, u_turn, eod, bite]`` where the ``u`` are the
pre-squash Gaussian samples; ``thrust = (1 + tanh u)/2`` and ``turn = tanh u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ContractError

LOG2 = math.log(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class PolicyParams(nn.Module):
    """All trainable tensors, with stable names for the checkpoint manifest."""

    def __init__(self, obs_dim, hidden_dim=64, init_log_std=0.0, seed=0, dtype=torch.float32):
        super().__init__()
        self.obs_dim, self.hidden_dim = int(obs_dim), int(hidden_dim)
        H, D = self.hidden_dim, self.obs_dim
        z = lambda *s: nn.Parameter(torch.zeros(*s, dtype=dtype))  # noqa: E731
        self.W_z, self.W_r, self.W_h = z(H, D), z(H, D), z(H, D)
        self.U_z, self.U_r, self.U_h = z(H, H), z(H, H), z(H, H)
        self.b_z, self.b_r, self.b_h = z(H), z(H), z(H)
        self.actor_w1, self.actor_b1 = z(H, H), z(H)
        self.actor_w2, self.actor_b2 = z(H, H), z(H)
        self.actor_out_w, self.actor_out_b = z(4, H), z(4)
        self.log_std = nn.Parameter(torch.full((2,), float(init_log_std), dtype=dtype))
        self.critic_w1, self.critic_b1 = z(H, H), z(H)
        self.critic_w2, self.critic_b2 = z(H, H), z(H)
        self.critic_out_w, self.critic_out_b = z(1, H), z(1)
        if seed is not None:
            self.initialize(seed)

    @torch.no_grad()
    def initialize(self, seed):
        """Orthogonal recurrent/MLP weights, scaled-uniform input weights, zero biases."""
        g = torch.Generator().manual_seed(int(seed))
        bound = 1.0 / math.sqrt(self.obs_dim)
        for w in (self.W_z, self.W_r, self.W_h):
            w.copy_(torch.rand(w.shape, generator=g, dtype=torch.float64).mul(2 * bound).sub(bound))
        for w in (self.U_z, self.U_r, self.U_h):
            w.copy_(_orthogonal(w.shape, 1.0, g))
        for w in (self.actor_w1, self.actor_w2, self.critic_w1, self.critic_w2):
            w.copy_(_orthogonal(w.shape, math.sqrt(2.0), g))
        self.actor_out_w.copy_(_orthogonal(self.actor_out_w.shape, 0.01, g))
        self.critic_out_w.copy_(_orthogonal(self.critic_out_w.shape, 1.0, g))
        for name, p in self.named_parameters():
            if name.startswith("b_") or name.endswith(("_b1", "_b2", "_out_b")):
                p.zero_()

    def zero_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def manifest(self):
        return [(name, tuple(p.shape)) for name, p in self.named_parameters()]

    def initial_hidden(self, n):
        return torch.zeros(n, self.hidden_dim, dtype=self.W_z.dtype)


def _orthogonal(shape, gain, g):
    a = torch.randn(max(shape), min(shape), generator=g, dtype=torch.float64)
    q, r = torch.linalg.qr(a)
    q = q * torch.sign(torch.diagonal(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def gru_step(params, x, h):
    x = torch.as_tensor(x, dtype=params.W_z.dtype)
    h = torch.as_tensor(h, dtype=params.W_z.dtype)
    if not torch.isfinite(x).all():
        raise ContractError("non-finite observation fed to gru_step")
    if x.shape[-1] != params.obs_dim or h.shape[-1] != params.hidden_dim:
        raise ContractError(
            f"gru_step expects obs dim {params.obs_dim} and hidden dim {params.hidden_dim}, "
            f"got {x.shape[-1]} and {h.shape[-1]}"
        )
    z = torch.sigmoid(F.linear(x, params.W_z) + F.linear(h, params.U_z) + params.b_z)
    r = torch.sigmoid(F.linear(x, params.W_r) + F.linear(h, params.U_r) + params.b_r)
    hc = torch.tanh(F.linear(x, params.W_h) + F.linear(r * h, params.U_h) + params.b_h)
    return (1.0 - z) * h + z * hc


def _mlp(h, w1, b1, w2, b2):
    return torch.tanh(F.linear(torch.tanh(F.linear(h, w1, b1)), w2, b2))


@dataclass
class ActionDistribution:
    """Factorized distribution over the four action heads.

    ``mu``: (..., 2) pre-squash Gaussian means for thrust and turn;
    ``log_std``: (2,) shared log standard deviations; ``eod_logit`` and
    ``bite_logit``: (...) Bernoulli logits.
    """

    mu: torch.Tensor
    log_std: torch.Tensor
    eod_logit: torch.Tensor
    bite_logit: torch.Tensor

    @property
    def eod_prob(self):
        return torch.sigmoid(self.eod_logit)

    @property
    def bite_prob(self):
        return torch.sigmoid(self.bite_logit)

    @classmethod
    def from_probs(cls, mu, log_std, eod_prob, bite_prob):
        return cls(torch.as_tensor(mu), torch.as_tensor(log_std),
                   torch.logit(torch.as_tensor(eod_prob, dtype=torch.float64)),
                   torch.logit(torch.as_tensor(bite_prob, dtype=torch.float64)))

    def log_prob(self, raw):
        """Joint log density of raw actions, with the tanh-squash Jacobian."""
        raw = torch.as_tensor(raw, dtype=self.mu.dtype)
        u = raw[..., :2]
        std = self.log_std.exp()
        gauss = (-0.5 * ((u - self.mu) / std) ** 2 - self.log_std - HALF_LOG_2PI).sum(-1)
        # log|d tanh(u)/du| = 2 (log 2 - u - softplus(-2u)); thrust halves it once more
        log_dtanh = 2.0 * (LOG2 - u - F.softplus(-2.0 * u))
        jac = log_dtanh.sum(-1) - LOG2
        return gauss - jac + _bernoulli_logp(self.eod_logit, raw[..., 2]) + _bernoulli_logp(self.bite_logit, raw[..., 3])

    def entropy(self):
        """Pre-squash Gaussian entropy plus exact Bernoulli entropies."""
        gauss = (0.5 + HALF_LOG_2PI + self.log_std).sum()
        return gauss + _bernoulli_entropy(self.eod_logit) + _bernoulli_entropy(self.bite_logit)


def _bernoulli_logp(logit, a):
    a = a.to(logit.dtype)
    on = torch.where(a > 0.5, F.logsigmoid(logit), torch.zeros_like(logit))
    off = torch.where(a > 0.5, torch.zeros_like(logit), F.logsigmoid(-logit))
    return on + off


def _bernoulli_entropy(logit):
    p = torch.sigmoid(logit)
    return -(torch.where(p > 0, p * F.logsigmoid(logit), torch.zeros_like(p))
             + torch.where(p < 1, (1 - p) * F.logsigmoid(-logit), torch.zeros_like(p)))


def policy_forward(params, obs, h):
    """One recurrent step: ``(ActionDistribution, value, h')``."""
    obs = torch.as_tensor(obs, dtype=params.W_z.dtype)
    if obs.shape[-1] != params.obs_dim:
        raise ContractError(f"observation length {obs.shape[-1]} does not match policy input {params.obs_dim}")
    h2 = gru_step(params, obs, h)
    a = _mlp(h2, params.actor_w1, params.actor_b1, params.actor_w2, params.actor_b2)
    out = F.linear(a, params.actor_out_w, params.actor_out_b)
    c = _mlp(h2, params.critic_w1, params.critic_b1, params.critic_w2, params.critic_b2)
    value = F.linear(c, params.critic_out_w, params.critic_out_b)[..., 0]
    dist = ActionDistribution(out[..., :2], params.log_std, out[..., 2], out[..., 3])
    return dist, value, h2


def raw_to_commands(raw):
    """Map raw actions to environment commands ``[thrust, turn, eod, bite]``."""
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    out[..., 0] = 0.5 * (1.0 + np.tanh(raw[..., 0]))
    out[..., 1] = np.tanh(raw[..., 1])
    out[..., 2:] = raw[..., 2:]
    return out


@torch.no_grad()
def sample_actions(dist, rng):
    """Draw raw actions with a numpy Generator; returns ``(raw, commands, logprob)``."""
    mu = dist.mu.detach().cpu().numpy().astype(np.float64)
    std = np.exp(dist.log_std.detach().cpu().numpy().astype(np.float64))
    shape = mu.shape[:-1]
    u = mu + std * rng.standard_normal(mu.shape)
    p_eod = dist.eod_prob.detach().cpu().numpy().astype(np.float64)
    p_bite = dist.bite_prob.detach().cpu().numpy().astype(np.float64)
    eod = (rng.random(shape) < p_eod).astype(float)
    bite = (rng.random(shape) < p_bite).astype(float)
    raw = np.concatenate([u, eod[..., None], bite[..., None]], axis=-1)
    logp = dist.log_prob(torch.as_tensor(raw, dtype=dist.mu.dtype))
    return raw, raw_to_commands(raw), logp.cpu().numpy().astype(np.float64)


def evaluate_actions(params, obs_seq, h0, actions_seq, starts=None):
    """Re-run the recurrence over stored sequences.

    Shapes: ``obs_seq`` (T, B, D), ``h0`` (B, H), ``actions_seq`` (T, B, 4),
    ``starts`` (T, B) marks steps whose hidden state is reset to zero before
    the step (episode starts inside the sequence). Returns ``(logprobs,
    values, entropies)``, each (T, B), differentiable in ``params``.
    """
    obs_seq = torch.as_tensor(obs_seq, dtype=params.W_z.dtype)
    actions_seq = torch.as_tensor(actions_seq, dtype=params.W_z.dtype)
    if obs_seq.shape[:2] != actions_seq.shape[:2]:
        raise ContractError(f"obs sequence {tuple(obs_seq.shape[:2])} and action sequence "
                            f"{tuple(actions_seq.shape[:2])} are not aligned")
    h = torch.as_tensor(h0, dtype=params.W_z.dtype)
    if starts is not None:
        keep = 1.0 - torch.as_tensor(starts, dtype=params.W_z.dtype)
        if keep.shape != obs_seq.shape[:2]:
            raise ContractError("starts mask is not aligned with the sequence")
    hs = []
    for t in range(obs_seq.shape[0]):
        if starts is not None:
            h = h * keep[t, :, None]
        h = gru_step(params, obs_seq[t], h)
        hs.append(h)
    hs = torch.stack(hs)
    a = _mlp(hs, params.actor_w1, params.actor_b1, params.actor_w2, params.actor_b2)
    out = F.linear(a, params.actor_out_w, params.actor_out_b)
    c = _mlp(hs, params.critic_w1, params.critic_b1, params.critic_w2, params.critic_b2)
    values = F.linear(c, params.critic_out_w, params.critic_out_b)[..., 0]
    dist = ActionDistribution(out[..., :2], params.log_std, out[..., 2], out[..., 3])
    return dist.log_prob(actions_seq), values, dist.entropy()


class PolicyController:
    """Runs the shared policy for a fixed set of agents (per-agent hidden states)."""

    def __init__(self, params, n_agents, rng, deterministic=False):
        self.params = params
        self.rng = rng
        self.deterministic = deterministic
        self.h = params.initial_hidden(n_agents)

    def reset(self):
        self.h = torch.zeros_like(self.h)

    @torch.no_grad()
    def act(self, obs, state=None):
        dist, _, self.h = policy_forward(self.params, obs, self.h)
        if self.deterministic:
            mu = dist.mu.numpy().astype(float)
            raw = np.concatenate([mu, (dist.eod_prob.numpy() > 0.5)[..., None],
                                  (dist.bite_prob.numpy() > 0.5)[..., None]], axis=-1).astype(float)
            return raw_to_commands(raw)
        _, cmds, _ = sample_actions(dist, self.rng)
        return cmds
