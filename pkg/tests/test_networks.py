"""
Network forward passes against straight-line re-implementations, gradient checks
and the RMSprop update rule. Oracles run in float64.
"""
import copy

import numpy as np
import pytest
import torch

from tools.gridworld import Action, UsageError
from tools.networks import (
    AgentNet,
    CentralNet,
    GRUCell,
    agent_forward,
    backward,
    central_forward,
    copy_params,
    grad_check,
    gru_step,
    load_checkpoint,
    make_rmsprop,
    rmsprop_update,
    save_checkpoint,
)
from tools.replay import make_batch
from tools.targets import central_loss, decentralized_greedy, iql_loss, iql_targets, lambda_targets

ATOL = 1e-12
OBS_DIM, STATE_DIM = 36, 11


def _zero(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def _seeded(module, seed):
    g = torch.Generator().manual_seed(seed)
    module.reset_parameters(g)
    # non-zero biases so the oracles exercise them
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.1)
    return module


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _np(layer):
    w = layer.weight.detach().numpy()
    b = layer.bias.detach().numpy() if layer.bias is not None else np.zeros(w.shape[0])
    return w, b


def _gru_oracle(cell, h, x):
    wz, bz = _np(cell.w_z)
    wr, br = _np(cell.w_r)
    wc, bc = _np(cell.w_c)
    uz, ur, uc = (cell.u_z.weight.detach().numpy(), cell.u_r.weight.detach().numpy(),
                  cell.u_c.weight.detach().numpy())
    z = _sigmoid(wz @ x + bz + uz @ h)
    r = _sigmoid(wr @ x + br + ur @ h)
    c = np.tanh(wc @ x + bc + uc @ (r * h))
    return z * h + (1 - z) * c


class TestGRU:
    def test_zero_parameters_halve_the_state(self):
        cell = _zero(GRUCell(3, 4))
        h = torch.tensor([1.0, -2.0, 0.5, 4.0])
        out = gru_step(cell, h, torch.randn(3))
        torch.testing.assert_close(out, 0.5 * h)

    def test_matches_oracle(self):
        cell = _seeded(GRUCell(5, 4).double(), 1)
        rng = np.random.default_rng(0)
        h, x = rng.normal(size=4), rng.normal(size=5)
        out = gru_step(cell, torch.from_numpy(h), torch.from_numpy(x)).detach().numpy()
        np.testing.assert_allclose(out, _gru_oracle(cell, h, x), rtol=0, atol=ATOL)

    def test_shape_mismatch_raises(self):
        with pytest.raises(UsageError):
            gru_step(GRUCell(3, 4), torch.zeros(5), torch.zeros(3))

    def test_deterministic(self):
        cell = GRUCell(3, 4)
        h, x = torch.randn(4), torch.randn(3)
        assert torch.equal(gru_step(cell, h, x), gru_step(cell, h, x))


class TestAgentNet:
    def test_zero_parameters(self):
        net = _zero(AgentNet(OBS_DIM, 2, hidden_dim=6))
        h = torch.randn(2, 6)
        q, h_next, phi = agent_forward(net, h, torch.rand(2, OBS_DIM), torch.tensor([0, 3]))
        assert torch.count_nonzero(q) == 0
        torch.testing.assert_close(h_next, 0.5 * h)
        assert phi is h_next

    def test_identity_head_reads_the_hidden_state(self):
        net = _zero(AgentNet(OBS_DIM, 1, hidden_dim=6))
        with torch.no_grad():
            net.fc_out.weight.copy_(torch.eye(5, 6))
        h = torch.randn(1, 6)
        q, h_next, _ = agent_forward(net, h, torch.rand(1, OBS_DIM), None)
        torch.testing.assert_close(q, h_next[:, :5])

    def test_matches_oracle(self):
        net = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 2)
        rng = np.random.default_rng(1)
        obs = (rng.random((2, OBS_DIM)) < 0.3).astype(float)
        h = rng.normal(size=(2, 6))
        last = [int(Action.LEFT), int(Action.STAY)]
        q, h_next, _ = agent_forward(net, torch.from_numpy(h), torch.from_numpy(obs), torch.tensor(last))

        w_in, b_in = _np(net.fc_in)
        w_out, b_out = _np(net.fc_out)
        for a in range(2):
            x = np.concatenate([obs[a], np.eye(5)[last[a]], np.eye(2)[a]])
            hid = _gru_oracle(net.gru, h[a], np.maximum(0, w_in @ x + b_in))
            np.testing.assert_allclose(h_next[a].detach().numpy(), hid, rtol=0, atol=ATOL)
            np.testing.assert_allclose(q[a].detach().numpy(), w_out @ hid + b_out, rtol=0, atol=ATOL)

    def test_first_step_uses_zero_last_action(self):
        net = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 3)
        h = net.init_hidden(2)
        obs = torch.rand(2, OBS_DIM, dtype=torch.float64)
        with torch.no_grad():
            net.fc_in.weight[:, OBS_DIM:OBS_DIM + 5] = 0.0
        q_none, _, _ = agent_forward(net, h, obs, None)
        q_up, _, _ = agent_forward(net, h, obs, torch.tensor([0, 1]))
        torch.testing.assert_close(q_none, q_up, rtol=0, atol=ATOL)

    def test_weights_are_shared_across_agents(self):
        net = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 4)
        with torch.no_grad():
            net.fc_in.weight[:, -2:] = 0.0  # blind to the id
        obs = torch.rand(1, OBS_DIM, dtype=torch.float64).expand(2, OBS_DIM)
        q, _, _ = agent_forward(net, net.init_hidden(2), obs, torch.tensor([2, 2]))
        torch.testing.assert_close(q[0], q[1], rtol=0, atol=ATOL)


class TestCentralNet:
    def test_zero_parameters(self):
        net = _zero(CentralNet(STATE_DIM, 3, hidden_dim=8))
        q, phi = central_forward(net, torch.rand(STATE_DIM), torch.tensor([0, 1, 2]), torch.tensor([4, 4, 4]))
        assert q.shape == (3, 5) and phi.shape == (3, 8)
        assert torch.count_nonzero(q) == 0 and torch.count_nonzero(phi) == 0

    def test_matches_oracle(self):
        net = _seeded(CentralNet(STATE_DIM, 3, hidden_dim=8).double(), 5)
        rng = np.random.default_rng(2)
        s = rng.random(STATE_DIM)
        joint, prev = [1, 4, 2], [0, 3, 3]
        q, phi = central_forward(net, torch.from_numpy(s), torch.tensor(joint), torch.tensor(prev))
        w1, b1 = _np(net.fc1)
        w2, b2 = _np(net.fc2)
        w3, b3 = _np(net.fc_out)
        eye5 = np.eye(5)
        for a in range(3):
            others = np.concatenate([eye5[joint[b]] for b in range(3) if b != a])
            x = np.concatenate([s, others, eye5[prev[a]], np.eye(3)[a]])
            f = np.maximum(0, w2 @ np.maximum(0, w1 @ x + b1) + b2)
            np.testing.assert_allclose(phi[a].detach().numpy(), f, rtol=0, atol=ATOL)
            np.testing.assert_allclose(q[a].detach().numpy(), w3 @ f + b3, rtol=0, atol=ATOL)

    def test_own_action_is_not_an_input(self):
        net = _seeded(CentralNet(STATE_DIM, 3, hidden_dim=8).double(), 6)
        s = torch.rand(STATE_DIM, dtype=torch.float64)
        prev = torch.tensor([4, 4, 4])
        q1, _ = net(s, torch.tensor([0, 2, 3]), prev)
        q2, _ = net(s, torch.tensor([4, 2, 3]), prev)
        torch.testing.assert_close(q1[0], q2[0], rtol=0, atol=ATOL)

    def test_permuting_other_agents_with_their_weights(self):
        net = _seeded(CentralNet(STATE_DIM, 3, hidden_dim=8).double(), 7)
        s = torch.rand(STATE_DIM, dtype=torch.float64)
        prev = torch.tensor([1, 1, 1])
        q, _ = net(s, torch.tensor([0, 2, 3]), prev)

        swapped = copy.deepcopy(net)
        with torch.no_grad():
            block_1 = net.fc1.weight[:, STATE_DIM:STATE_DIM + 5].clone()
            block_2 = net.fc1.weight[:, STATE_DIM + 5:STATE_DIM + 10].clone()
            swapped.fc1.weight[:, STATE_DIM:STATE_DIM + 5] = block_2
            swapped.fc1.weight[:, STATE_DIM + 5:STATE_DIM + 10] = block_1
        q_swapped, _ = swapped(s, torch.tensor([0, 3, 2]), prev)
        torch.testing.assert_close(q[0], q_swapped[0], rtol=0, atol=ATOL)

    def test_single_agent(self):
        net = CentralNet(STATE_DIM, 1, hidden_dim=8)
        q, _ = net(torch.rand(STATE_DIM), torch.tensor([2]), torch.tensor([4]))
        assert q.shape == (1, 5)


@pytest.fixture
def float64_batch(make_episode):
    rng = np.random.default_rng(8)
    episodes = [make_episode(rng, 3), make_episode(rng, 5, terminated=False)]
    return make_batch(episodes, dtype=torch.float64)


class TestGradients:
    def test_output_bias_gradient(self):
        net = _zero(AgentNet(OBS_DIM, 1, hidden_dim=4))
        q, _, _ = agent_forward(net, net.init_hidden(1), torch.rand(1, OBS_DIM), None)
        grads = backward(q.sum(), dict(net.named_parameters()))
        torch.testing.assert_close(grads["fc_out.bias"], torch.ones(5))

    def test_unused_parameters_get_zero_gradients(self):
        agents = AgentNet(OBS_DIM, 2, hidden_dim=4)
        critic = CentralNet(STATE_DIM, 2, hidden_dim=8)
        q, _, _ = agent_forward(agents, agents.init_hidden(2), torch.rand(2, OBS_DIM), None)
        grads = backward((q ** 2).sum(), dict(critic.named_parameters()))
        assert all(torch.count_nonzero(g) == 0 for g in grads.values())
        assert set(grads) == set(dict(critic.named_parameters()))

    def test_single_parameter(self):
        p = torch.tensor([1.3], dtype=torch.float64, requires_grad=True)
        assert grad_check(lambda: (p ** 3).sum(), {"p": p}) < 1e-6

    def test_zero_loss(self):
        net = AgentNet(OBS_DIM, 2, hidden_dim=4).double()
        params = dict(net.named_parameters())
        assert grad_check(lambda: sum(p.sum() for p in params.values()) * 0.0, params) == 0.0

    def test_iql_loss(self, float64_batch):
        net = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 9)
        target = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 10)
        y = iql_targets(float64_batch, net, target, gamma=0.99)
        err = grad_check(lambda: iql_loss(net, float64_batch, y), dict(net.named_parameters()))
        assert err < 1e-4

    def test_central_loss(self, float64_batch):
        agents = _seeded(AgentNet(OBS_DIM, 2, hidden_dim=6).double(), 11)
        net = _seeded(CentralNet(STATE_DIM, 2, hidden_dim=8).double(), 12)
        target = _seeded(CentralNet(STATE_DIM, 2, hidden_dim=8).double(), 13)
        greedy = decentralized_greedy(agents, float64_batch)
        y = lambda_targets(float64_batch, net, target, greedy, gamma=0.99, td_lambda=0.8)
        err = grad_check(lambda: central_loss(net, float64_batch, y), dict(net.named_parameters()))
        assert err < 1e-4

    def test_central_loss_leaves_agent_network_alone(self, float64_batch):
        agents = AgentNet(OBS_DIM, 2, hidden_dim=6).double()
        net = CentralNet(STATE_DIM, 2, hidden_dim=8).double()
        greedy = decentralized_greedy(agents, float64_batch)
        y = lambda_targets(float64_batch, net, copy.deepcopy(net), greedy, gamma=0.99, td_lambda=0.8)
        grads = backward(central_loss(net, float64_batch, y), dict(agents.named_parameters()))
        assert all(torch.count_nonzero(g) == 0 for g in grads.values())


class TestRMSprop:
    def test_first_step_closed_form(self):
        p = torch.tensor([2.0, -1.0], dtype=torch.float64, requires_grad=True)
        opt = make_rmsprop([p], lr=0.0005, alpha=0.99, eps=1e-5)
        g = torch.tensor([0.3, -4.0], dtype=torch.float64)
        rmsprop_update(opt, {"p": p}, {"p": g})
        v = 0.01 * g ** 2
        expected = torch.tensor([2.0, -1.0], dtype=torch.float64) - 0.0005 * g / (v.sqrt() + 1e-5)
        torch.testing.assert_close(p.detach(), expected, rtol=0, atol=ATOL)
        assert p.grad is None

    def test_zero_gradient_decays_the_moment_only(self):
        p = torch.tensor([2.0, -1.0], dtype=torch.float64, requires_grad=True)
        opt = make_rmsprop([p], lr=0.0005)
        rmsprop_update(opt, {"p": p}, {"p": torch.tensor([1.0, 1.0], dtype=torch.float64)})
        before = p.detach().clone()
        moment = opt.state[p]["square_avg"].clone()
        rmsprop_update(opt, {"p": p}, {"p": torch.zeros(2, dtype=torch.float64)})
        assert torch.equal(p.detach(), before)
        torch.testing.assert_close(opt.state[p]["square_avg"], 0.99 * moment, rtol=0, atol=ATOL)

    def test_quadratic_bowl_descends(self):
        p = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        centre = torch.ones(3, dtype=torch.float64)
        opt = make_rmsprop([p], lr=0.0005)
        losses = []
        for _ in range(100):
            loss = ((p - centre) ** 2).sum()
            losses.append(loss.item())
            rmsprop_update(opt, {"p": p}, backward(loss, {"p": p}))
        assert all(b < a for a, b in zip(losses, losses[1:]))


def test_copy_params_and_checkpoint_round_trip(tmp_path):
    net = AgentNet(OBS_DIM, 2, hidden_dim=4)
    critic = CentralNet(STATE_DIM, 2, hidden_dim=8)
    clone = AgentNet(OBS_DIM, 2, hidden_dim=4)
    copy_params(net, clone)
    assert all(torch.equal(a, b) for a, b in zip(net.parameters(), clone.parameters()))

    path = save_checkpoint(tmp_path / "ck" / "a.pt", {"agent_net": net, "central_net": critic}, {"episode": 7})
    assert path.with_suffix(".json").exists()
    payload = load_checkpoint(path)
    assert payload["meta"] == {"episode": 7}
    restored = CentralNet(STATE_DIM, 2, hidden_dim=8)
    restored.load_state_dict(payload["central_net"])
    assert all(torch.equal(a, b) for a, b in zip(critic.parameters(), restored.parameters()))
