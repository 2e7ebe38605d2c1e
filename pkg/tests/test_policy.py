import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from electrofish.errors import ContractError
from electrofish.policy import (ActionDistribution, PolicyController, PolicyParams, evaluate_actions, gru_step,
                                policy_forward, raw_to_commands, sample_actions)

D, H = 6, 8


def net(seed=0, dtype=torch.float64, obs_dim=D, hidden=H):
    return PolicyParams(obs_dim, hidden, seed=seed, dtype=dtype)


def randomize(params, seed, scale=0.5):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in params.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return params


def test_gru_zero_weights_halves_hidden():
    p = net().zero_()
    h0 = torch.tensor([[0.3, -0.8, 0.1, 0.0, 0.5, -0.2, 0.9, -0.9]], dtype=torch.float64)
    h1 = gru_step(p, torch.zeros(1, D, dtype=torch.float64), h0)
    assert torch.equal(h1, 0.5 * h0)


def test_gru_saturated_update_gate_forgets_hidden():
    p = net().zero_()
    with torch.no_grad():
        p.b_z.fill_(50.0)
        p.b_h.copy_(torch.linspace(-2, 2, H, dtype=torch.float64))
    for h0 in (torch.zeros(1, H), torch.ones(1, H) * 0.7):
        h1 = gru_step(p, torch.zeros(1, D), h0.double())
        assert torch.allclose(h1[0], torch.tanh(p.b_h), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
def test_gru_output_bounded(seed, scale):
    p = randomize(net(), seed, 2.0)
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(3, D, generator=g, dtype=torch.float64) * scale
    h = torch.rand(3, H, generator=g, dtype=torch.float64) * 1.98 - 0.99
    out = gru_step(p, x, h)
    assert torch.all(out.abs() <= 1.0)


def test_gru_rejects_bad_input():
    p = net()
    with pytest.raises(ContractError):
        gru_step(p, torch.full((1, D), float("nan")), p.initial_hidden(1))
    with pytest.raises(ContractError):
        gru_step(p, torch.zeros(1, D + 1), p.initial_hidden(1))
    with pytest.raises(ContractError):
        policy_forward(p, torch.zeros(1, D + 2), p.initial_hidden(1))


def test_zero_params_give_even_eod_and_zero_value():
    p = net().zero_()
    dist, value, _ = policy_forward(p, torch.randn(4, D, dtype=torch.float64), p.initial_hidden(4))
    assert torch.all(dist.eod_prob == 0.5) and torch.all(value == 0.0)


def test_forward_is_pure():
    p = net(3)
    obs = torch.randn(2, D, dtype=torch.float64)
    h = torch.rand(2, H, dtype=torch.float64)
    a, b = policy_forward(p, obs, h), policy_forward(p, obs, h)
    assert torch.equal(a[0].mu, b[0].mu) and torch.equal(a[1], b[1]) and torch.equal(a[2], b[2])


def test_critic_weights_do_not_touch_the_actor():
    p = net(1)
    obs, h = torch.randn(3, D, dtype=torch.float64), p.initial_hidden(3)
    d0, v0, _ = policy_forward(p, obs, h)
    with torch.no_grad():
        p.critic_w1[0, 0] += 0.5
        p.critic_out_w[0, 1] -= 0.3
    d1, v1, _ = policy_forward(p, obs, h)
    for name in ("mu", "eod_logit", "bite_logit"):
        assert torch.equal(getattr(d0, name), getattr(d1, name))
    assert not torch.equal(v0, v1)


def test_hidden_state_isolation():
    p = net(2)
    obs = torch.randn(3, D, dtype=torch.float64)
    h = torch.rand(3, H, dtype=torch.float64)
    _, _, h1 = policy_forward(p, obs, h)
    obs2 = obs.clone()
    obs2[2] += 5.0
    _, _, h2 = policy_forward(p, obs2, h)
    assert torch.equal(h1[:2], h2[:2]) and not torch.equal(h1[2], h2[2])


def test_degenerate_bernoulli():
    dist = ActionDistribution.from_probs(torch.zeros(1, 2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64),
                                         [1.0], [0.0])
    raw, cmds, _ = sample_actions(dist, np.random.default_rng(0))
    assert raw[0, 2] == 1 and raw[0, 3] == 0
    from electrofish.policy import _bernoulli_logp
    assert float(_bernoulli_logp(dist.eod_logit, torch.tensor([1.0]))) == 0.0
    assert float(_bernoulli_logp(dist.bite_logit, torch.tensor([0.0]))) == 0.0


def test_bernoulli_sampling_frequency():
    n = 100_000
    dist = ActionDistribution.from_probs(torch.zeros(n, 2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64),
                                         torch.full((n,), 0.3), torch.full((n,), 0.5))
    raw, _, _ = sample_actions(dist, np.random.default_rng(1))
    assert abs(raw[:, 2].mean() - 0.3) < 0.01


def test_commands_respect_ranges():
    p = randomize(net(), 4, 3.0)
    dist, _, _ = policy_forward(p, torch.randn(500, D, dtype=torch.float64), p.initial_hidden(500))
    _, cmds, _ = sample_actions(dist, np.random.default_rng(2))
    assert np.all((cmds[:, 0] >= 0) & (cmds[:, 0] <= 1))
    assert np.all((cmds[:, 1] >= -1) & (cmds[:, 1] <= 1))
    assert set(np.unique(cmds[:, 2:])) <= {0.0, 1.0}
    assert np.allclose(raw_to_commands(np.zeros((1, 4)))[0], [0.5, 0.0, 0.0, 0.0])


def rollout_seq(p, T=5, B=3, seed=0):
    rng = np.random.default_rng(seed)
    obs = torch.as_tensor(rng.normal(size=(T, B, D)))
    h = p.initial_hidden(B)
    raws, logps = [], []
    with torch.no_grad():
        for t in range(T):
            dist, _, h = policy_forward(p, obs[t], h)
            raw, _, lp = sample_actions(dist, rng)
            raws.append(raw)
            logps.append(lp)
    return obs, torch.as_tensor(np.stack(raws)), np.stack(logps)


def test_sample_logprob_matches_evaluate():
    p = net(5)
    obs, raw, logp = rollout_seq(p)
    lp, _, _ = evaluate_actions(p, obs, p.initial_hidden(3), raw)
    assert np.allclose(lp.detach().numpy(), logp, atol=1e-10, rtol=0)
    assert torch.allclose(torch.exp(lp - torch.as_tensor(logp)), torch.ones_like(lp), atol=1e-10)


def test_evaluate_respects_episode_starts():
    p = net(6)
    obs, raw, _ = rollout_seq(p, T=6, B=2)
    starts = torch.zeros(6, 2)
    starts[3, 0] = 1
    h0 = torch.rand(2, H, dtype=torch.float64)
    lp, _, _ = evaluate_actions(p, obs, h0, raw, starts)
    tail, _, _ = evaluate_actions(p, obs[3:, :1], p.initial_hidden(1), raw[3:, :1])
    assert torch.allclose(lp[3:, 0], tail[:, 0], atol=1e-12)


def test_evaluate_rejects_misaligned_sequences():
    p = net()
    with pytest.raises(ContractError):
        evaluate_actions(p, torch.zeros(5, 2, D), p.initial_hidden(2), torch.zeros(4, 2, 4))


def test_bernoulli_entropy_at_half():
    dist = ActionDistribution(torch.zeros(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64),
                              torch.tensor(0.0, dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64))
    gauss = 2 * (0.5 + 0.5 * math.log(2 * math.pi))
    assert float(dist.entropy()) == pytest.approx(gauss + 2 * math.log(2), abs=1e-15)


def gradient_check(seed=0, eps=1e-5):
    p = randomize(net(seed), seed, 0.5)
    obs, raw, _ = rollout_seq(p, T=5, B=2, seed=seed)
    h0 = torch.rand(2, H, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)) - 0.5

    def objective():
        lp, v, ent = evaluate_actions(p, obs, h0, raw)
        return lp.sum() + 0.5 * v.sum() + 0.1 * ent.sum()

    p.zero_grad()
    objective().backward()
    worst = {}
    for name, prm in p.named_parameters():
        analytic = prm.grad.detach().clone().ravel()
        numeric = torch.zeros_like(analytic)
        flat = prm.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = objective().item()
                flat[i] = old - eps
                down = objective().item()
                flat[i] = old
            numeric[i] = (up - down) / (2 * eps)
        worst[name] = float((analytic - numeric).norm() / max(numeric.norm(), 1e-8))
    return worst


def test_gradients_match_finite_differences():
    errs = gradient_check()
    assert max(errs.values()) < 1e-4, errs


def test_controller_shares_one_parameter_set():
    p = net(7)
    c = PolicyController(p, 3, np.random.default_rng(0))
    cmds = c.act(np.zeros((3, D)))
    assert cmds.shape == (3, 4)
    assert c.params is p
