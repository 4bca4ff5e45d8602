import numpy as np
import pytest

from o2oil.nn import (Adam, AdamArrays, CategoricalPolicyNet, GaussianPolicyNet,
                      Mlp, log_softmax, relu, tanh_gaussian_log_prob)


def finite_difference(f, params, h=1e-5):
    grad = np.zeros_like(params)
    for i in range(len(params)):
        up = params.copy()
        up[i] += h
        down = params.copy()
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_zero_net_outputs_zero():
    net = Mlp([3, 4, 1], seed=0)
    net.set_params(np.zeros_like(net.get_params()))
    assert np.allclose(net.value(np.ones((2, 3))), 0.0)


def test_identity_layer_applies_activation():
    net = Mlp([3, 3], seed=0)
    net.weights[0][...] = np.eye(3)
    net.biases[0][...] = 0.0
    x = np.array([[-1.0, 0.5, 2.0]])
    # single layer is the output layer: linear, no activation
    assert np.allclose(net.value(x), x)
    deep = Mlp([3, 3, 3], seed=0)
    deep.weights[0][...] = np.eye(3)
    deep.biases[0][...] = 0.0
    deep.weights[1][...] = np.eye(3)
    deep.biases[1][...] = 0.0
    assert np.allclose(deep.value(x), relu(x))


def test_forward_matches_straight_line_reimplementation():
    net = Mlp([4, 5, 3, 2], seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 4))
    out = net.value(x)
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if i == len(net.weights) - 1 else np.maximum(z, 0.0)
    assert np.allclose(out, a, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = Mlp([3, 2], seed=0)
    with pytest.raises(ValueError):
        net.value(np.ones((1, 4)))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_linear_net_squared_loss_gradient_matches_normal_equations():
    net = Mlp([3, 1], seed=1)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 3))
    y = rng.standard_normal((8, 1))
    out, cache = net.forward(x)
    grads = net.backward(cache, 2 * (out - y))
    w = net.weights[0]
    b = net.biases[0]
    expected_dw = 2 * (x @ w.T + b - y).T @ x
    expected_db = 2 * (x @ w.T + b - y).sum(axis=0)
    assert np.allclose(grads[0][0], expected_dw, atol=1e-12)
    assert np.allclose(grads[0][1], expected_db, atol=1e-12)


def test_backward_matches_central_finite_differences():
    net = Mlp([4, 16, 8, 1], seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((10, 4))
    target = rng.standard_normal((10, 1))

    def loss(flat):
        net.set_params(flat)
        return float(np.sum((net.value(x) - target) ** 2))

    base = net.get_params().copy()
    out, cache = net.forward(x)
    analytic = net.flatten_grads(net.backward(cache, 2 * (out - target)))
    idx = rng.choice(len(base), size=120, replace=False)
    fd = np.zeros(len(idx))
    for k, i in enumerate(idx):
        up, down = base.copy(), base.copy()
        up[i] += 1e-5
        down[i] -= 1e-5
        fd[k] = (loss(up) - loss(down)) / 2e-5
    net.set_params(base)
    denom = np.maximum(np.abs(fd), 1e-8)
    assert np.max(np.abs(analytic[idx] - fd) / denom) <= 1e-4


def test_zero_upstream_gives_zero_buffer():
    net = Mlp([3, 4, 2], seed=0)
    out, cache = net.forward(np.ones((5, 3)))
    grads = net.backward(cache, np.zeros_like(out))
    assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)


def test_backward_requires_cache():
    net = Mlp([2, 2], seed=0)
    with pytest.raises(ValueError):
        net.backward(None, np.ones((1, 2)))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    net = Mlp([2, 2], seed=0)
    before = net.get_params().copy()
    opt = Adam(net, lr=0.1)
    opt.step([(np.zeros_like(w), np.zeros_like(b))
              for w, b in zip(net.weights, net.biases)])
    assert np.allclose(net.get_params(), before)


def test_adam_first_step_magnitude_is_lr():
    net = Mlp([2, 1], seed=0)
    before = net.get_params().copy()
    opt = Adam(net, lr=1e-3)
    grads = [(np.full_like(net.weights[0], 0.37), np.full_like(net.biases[0], 0.37))]
    opt.step(grads)
    delta = before - net.get_params()
    assert np.allclose(delta, 1e-3, rtol=1e-6)


def test_adam_descends_quadratic_bowl_monotonically():
    params = [np.array([5.0, -3.0])]
    opt = AdamArrays(params, lr=1e-3)
    losses = []
    for _ in range(100):
        losses.append(float(np.sum(params[0] ** 2)))
        opt.step([2 * params[0]])
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_converges_on_quadratic_bowl():
    params = [np.array([5.0, -3.0])]
    opt = AdamArrays(params, lr=1e-1)
    for _ in range(600):
        opt.step([2 * params[0]])
    assert float(np.sum(params[0] ** 2)) < 1e-2


# ---------------------------------------------------------------------------
# categorical head
# ---------------------------------------------------------------------------

def test_categorical_log_probs_normalize():
    head = CategoricalPolicyNet(Mlp([3, 8, 4], seed=5))
    logp, _ = head.log_probs(np.eye(3))
    assert np.allclose(np.exp(logp).sum(axis=1), 1.0)


def test_categorical_gradient_matches_finite_differences():
    net = Mlp([3, 16, 4], seed=9)
    head = CategoricalPolicyNet(net)
    rng = np.random.default_rng(10)
    x = np.eye(3)[rng.integers(3, size=12)]
    actions = rng.integers(4, size=12)
    weights = rng.uniform(0.1, 2.0, size=12)

    def objective(flat):
        net.set_params(flat)
        logp, _ = head.log_probs(x)
        return float(np.sum(weights * logp[np.arange(12), actions]))

    base = net.get_params().copy()
    _, cache = head.log_probs(x)
    analytic = net.flatten_grads(head.log_prob_grads(cache, actions, weights))
    idx = rng.choice(len(base), size=100, replace=False)
    for i in idx:
        up, down = base.copy(), base.copy()
        up[i] += 1e-5
        down[i] -= 1e-5
        fd = (objective(up) - objective(down)) / 2e-5
        assert abs(analytic[i] - fd) <= 1e-4 * max(abs(fd), 1e-6)
    net.set_params(base)


def test_categorical_sampling_follows_probabilities():
    net = Mlp([1, 3], seed=11)
    head = CategoricalPolicyNet(net)
    rng = np.random.default_rng(12)
    x = np.ones((20_000, 1))
    samples = head.sample(x, rng)
    logp, _ = head.log_probs(x[:1])
    freq = np.bincount(samples, minlength=3) / len(samples)
    assert np.abs(freq - np.exp(logp[0])).max() <= 0.02


# ---------------------------------------------------------------------------
# squashed-Gaussian head
# ---------------------------------------------------------------------------

def test_gaussian_density_integrates_to_one():
    net = Mlp([2, 8, 2], seed=13)
    head = GaussianPolicyNet(net, action_dim=1)
    grid = np.linspace(-1 + 1e-6, 1 - 1e-6, 40_001)
    dens = head.density(np.array([0.3, -0.7]), grid)
    integral = np.trapezoid(dens, grid)
    assert integral == pytest.approx(1.0, abs=1e-3)


def test_gaussian_log_prob_gradient_matches_finite_differences():
    net = Mlp([2, 24, 2], seed=14)
    head = GaussianPolicyNet(net, action_dim=1)
    rng = np.random.default_rng(15)
    x = rng.standard_normal((9, 2))
    actions = np.tanh(rng.standard_normal((9, 1)))
    weights = rng.uniform(0.5, 1.5, size=9)

    def objective(flat):
        net.set_params(flat)
        logp, _ = head.log_prob(x, actions)
        return float(np.sum(weights * logp))

    base = net.get_params().copy()
    _, aux = head.log_prob(x, actions)
    analytic = net.flatten_grads(head.log_prob_grads(aux, weights))
    idx = rng.choice(len(base), size=100, replace=False)
    for i in idx:
        up, down = base.copy(), base.copy()
        up[i] += 1e-6
        down[i] -= 1e-6
        fd = (objective(up) - objective(down)) / 2e-6
        assert abs(analytic[i] - fd) <= 1e-4 * max(abs(fd), 1e-5)
    net.set_params(base)


def test_gaussian_samples_stay_in_range():
    net = Mlp([1, 2], seed=16)
    head = GaussianPolicyNet(net, action_dim=1)
    samples = head.sample(np.zeros((1000, 1)), np.random.default_rng(17))
    assert np.all(np.abs(samples) < 1.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_serialization_round_trip(tmp_path):
    net = Mlp([3, 5, 2], seed=18)
    path = tmp_path / "net.json"
    net.save(path)
    back = Mlp.load(path)
    assert back.sizes == net.sizes
    x = np.random.default_rng(19).standard_normal((4, 3))
    assert np.allclose(back.value(x), net.value(x))


def test_serialization_rejects_unknown_version(tmp_path):
    with pytest.raises(ValueError):
        Mlp.from_dict({"version": 99, "sizes": [1, 1], "params": [0.0, 0.0]})
