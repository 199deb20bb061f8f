import math

import numpy as np
import pytest

from racestrat.agent import TrainingConfig, Transition, td_update
from racestrat.basetypes import Action
from racestrat.network import QNetwork


def test_zero_weights_give_zero_q():
    net = QNetwork.init(5, hidden_dim=4, seed=0)
    for k in net.params:
        net.params[k][:] = 0.0
    q, _ = net.forward(np.ones(5), net.zero_hidden())
    assert np.all(q == 0.0)


def test_forward_deterministic():
    net = QNetwork.init(6, hidden_dim=8, seed=3)
    xs = [np.random.default_rng(1).uniform(size=6) for _ in range(4)]
    out1, _ = net.forward_sequence(xs)
    out2, _ = net.forward_sequence(xs)
    assert all(np.array_equal(a, b) for a, b in zip(out1, out2))


def test_input_dimension_checked():
    net = QNetwork.init(5, hidden_dim=4)
    with pytest.raises(ValueError):
        net.forward(np.ones(7), net.zero_hidden())


def test_hand_computed_single_unit_recurrence():
    """1-d input, 1-unit cell with hand-set weights over a 2-step sequence."""
    net = QNetwork.init(1, hidden_dim=1, seed=0)
    p = net.params
    p["Wz"][:] = 0.5; p["Uz"][:] = 0.25; p["bz"][:] = 0.1
    p["Wr"][:] = -0.3; p["Ur"][:] = 0.2; p["br"][:] = 0.0
    p["Wh"][:] = 0.7; p["Uh"][:] = -0.4; p["bh"][:] = 0.05
    p["W1"][:] = 1.2; p["b1"][:] = -0.1
    p["W2"][:] = 0.0; p["W2"][0, 0] = 2.0; p["b2"][:] = 0.0

    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    h = 0.0
    expected = []
    for x in (0.6, -0.2):
        z = sigmoid(0.5 * x + 0.25 * h + 0.1)
        r = sigmoid(-0.3 * x + 0.2 * h)
        c = math.tanh(0.7 * x - 0.4 * r * h + 0.05)
        h = (1 - z) * h + z * c
        d = math.tanh(1.2 * h - 0.1)
        expected.append(2.0 * d)

    qs, _ = net.forward_sequence([np.array([0.6]), np.array([-0.2])])
    assert qs[0][0] == pytest.approx(expected[0], rel=1e-12)
    assert qs[1][0] == pytest.approx(expected[1], rel=1e-12)


def test_flat_params_round_trip():
    net = QNetwork.init(5, hidden_dim=4, seed=1)
    flat = net.flat_params()
    other = QNetwork.init(5, hidden_dim=4, seed=99)
    other.set_flat_params(flat)
    assert np.array_equal(other.flat_params(), flat)
    x = np.linspace(0, 1, 5)
    qa, _ = net.forward(x, net.zero_hidden())
    qb, _ = other.forward(x, other.zero_hidden())
    assert np.array_equal(qa, qb)


def _td_loss(net, target, batch, cfg):
    total, loss = 0, 0.0
    for segment in batch:
        qs, _ = net.forward_sequence([t.x for t in segment])
        tqs, _ = target.forward_sequence([t.x_next for t in segment])
        for q, tq, t in zip(qs, tqs, segment):
            y = t.reward if t.terminal else t.reward + cfg.gamma * float(np.max(tq))
            loss += (q[t.action] - y) ** 2
            total += 1
    return loss / total


def _random_batch(rng, input_dim, n_episodes=2, length=4):
    batch = []
    for _ in range(n_episodes):
        seg = []
        for i in range(length):
            seg.append(Transition(
                x=rng.uniform(-1, 1, size=input_dim),
                action=Action(int(rng.integers(4))),
                reward=float(rng.uniform(-10, 10)),
                x_next=rng.uniform(-1, 1, size=input_dim),
                terminal=(i == length - 1),
            ))
        batch.append(seg)
    return batch


def test_gradient_matches_finite_differences():
    """Analytic BPTT gradients vs central differences on a width-4 network."""
    cfg = TrainingConfig(hidden_dim=4, learning_rate=0.0, weight_decay=0.0,
                         max_grad_norm=None)
    input_dim = 3
    rng = np.random.default_rng(0)
    for trial in range(100):
        net = QNetwork.init(input_dim, hidden_dim=4, seed=trial)
        # randomise away from the symmetric init
        flat = net.flat_params() + rng.normal(0, 0.3, size=net.flat_params().size)
        net.set_flat_params(flat)
        target = QNetwork.init(input_dim, hidden_dim=4, seed=trial + 1000)
        batch = _random_batch(rng, input_dim)

        grads = net.zero_grads()
        total = sum(len(s) for s in batch)
        for segment in batch:
            qs, caches = net.forward_sequence([t.x for t in segment])
            tqs, _ = target.forward_sequence([t.x_next for t in segment])
            dqs = []
            for q, tq, t in zip(qs, tqs, segment):
                y = t.reward if t.terminal else t.reward + cfg.gamma * float(np.max(tq))
                dq = np.zeros(4)
                dq[t.action] = 2.0 * (q[t.action] - y) / total
                dqs.append(dq)
            net.backward_sequence(caches, dqs, grads)
        analytic = net.flat_grads(grads)

        eps = 1e-5
        base = net.flat_params()
        idx = rng.integers(0, base.size, size=12)  # spot-check a dozen coords
        for i in idx:
            plus = base.copy(); plus[i] += eps
            minus = base.copy(); minus[i] -= eps
            net.set_flat_params(plus)
            lp = _td_loss(net, target, batch, cfg)
            net.set_flat_params(minus)
            lm = _td_loss(net, target, batch, cfg)
            net.set_flat_params(base)
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(analytic[i]), 1e-8)
            assert abs(fd - analytic[i]) / denom < 1e-4, (trial, i, fd, analytic[i])


def test_td_loss_values():
    # terminal with exact prediction -> zero contribution
    cfg = TrainingConfig(hidden_dim=4, learning_rate=0.0, max_grad_norm=None)
    net = QNetwork.init(2, hidden_dim=4, seed=0)
    target = net.copy()
    x = np.zeros(2)
    q0, _ = net.forward(x, net.zero_hidden())
    t = Transition(x, Action.NO_PIT, float(q0[0]), x, True)
    loss = td_update(net, target, [[t]], cfg)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_td_error_arithmetic():
    # single transition, r=1, gamma 0.99, max target Q = 10, Q(s,a)=0 -> (1+9.9)^2
    cfg = TrainingConfig(hidden_dim=4, learning_rate=0.0, max_grad_norm=None)
    net = QNetwork.init(2, hidden_dim=4, seed=0)
    for k in net.params:
        net.params[k][:] = 0.0
    target = net.copy()
    target.params["b2"][:] = 10.0
    t = Transition(np.zeros(2), Action.NO_PIT, 1.0, np.zeros(2), False)
    loss = td_update(net, target, [[t]], cfg)
    assert loss == pytest.approx((1.0 + 9.9) ** 2)


def test_empty_batch_rejected():
    cfg = TrainingConfig(hidden_dim=4)
    net = QNetwork.init(2, hidden_dim=4)
    with pytest.raises(ValueError):
        td_update(net, net.copy(), [], cfg)


def test_batched_backward_matches_serial():
    rng = np.random.default_rng(7)
    net = QNetwork.init(6, 5, seed=3, output_scale=50.0)
    xs = rng.normal(size=(4, 3, 6))            # T=4 steps, B=3 sequences
    dqs = rng.normal(size=(4, 3, 4))

    batched = net.zero_grads()
    q_batch, caches = net.forward_sequence_batch(xs)
    net.backward_sequence_batch(caches, dqs, batched)

    serial = net.zero_grads()
    for b in range(3):
        qs, caches_b = net.forward_sequence(list(xs[:, b]))
        net.backward_sequence(caches_b, list(dqs[:, b]), serial)
        for t in range(4):
            assert np.allclose(qs[t], q_batch[t, b], atol=1e-12)

    for key in batched:
        assert np.allclose(batched[key], serial[key], atol=1e-10), key


def test_td_update_mixed_segment_lengths():
    rng = np.random.default_rng(1)
    net = QNetwork.init(4, 5, seed=0, output_scale=10.0)
    target = net.copy()
    cfg = TrainingConfig(learning_rate=0.01, weight_decay=0.0, max_grad_norm=None)

    def seg(n, terminal_last=True):
        out = []
        for i in range(n):
            out.append(Transition(rng.normal(size=4), Action(int(rng.integers(4))),
                                  float(rng.normal()), rng.normal(size=4),
                                  terminal_last and i == n - 1))
        return out

    batch = [seg(3), seg(5), seg(3), seg(2)]

    # reference: one serial pass per segment, summed into one SGD step
    ref = net.copy()
    grads = ref.zero_grads()
    total = sum(len(s) for s in batch)
    scale_sq = ref.output_scale**2
    ref_loss = 0.0
    for segment in batch:
        qs, caches = ref.forward_sequence([t.x for t in segment])
        tqs, _ = target.forward_sequence([t.x_next for t in segment])
        dqs = []
        for q, tq, t in zip(qs, tqs, segment):
            y = t.reward if t.terminal else t.reward + cfg.gamma * float(np.max(tq))
            err = q[t.action] - y
            ref_loss += err * err
            dq = np.zeros(4)
            dq[t.action] = 2.0 * err / (total * scale_sq)
            dqs.append(dq)
        ref.backward_sequence(caches, dqs, grads)
    ref.sgd_step(grads, cfg.learning_rate, cfg.weight_decay, cfg.max_grad_norm)

    loss = td_update(net, target, batch, cfg)
    assert math.isclose(loss, ref_loss / total, rel_tol=1e-12)
    for key in net.params:
        assert np.allclose(net.params[key], ref.params[key], atol=1e-12), key
