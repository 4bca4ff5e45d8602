"""Minimal feedforward networks with handwritten reverse-mode gradients.

Small rectifier MLPs over dense feature vectors, an Adam optimizer, and the
two policy heads used downstream: categorical logits for discrete actions and
tanh-squashed Gaussians for continuous ones. Everything is plain numpy; nets
are tiny and every gradient path is checked against finite differences in the
test suite.

Batch convention: inputs are (batch, n_in); `backward` returns the exact
gradient of sum_b <upstream_b, output_b> with respect to the parameters, so
callers own any 1/batch scaling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


def relu(z):
    return np.maximum(z, 0.0)


class Mlp:
    """Fully connected net with rectifier hidden layers and a linear output."""

    def __init__(self, sizes: list[int], seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(sizes, sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            self.biases.append(rng.uniform(-bound, bound, size=n_out))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray):
        """Returns (output, cache); cache feeds backward."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[1]}")
        activations = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pre.append(z)
            a = z if i == last else relu(z)
            activations.append(a)
        return a, (activations, pre)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Reverse pass; returns per-layer [(dW, db), ...] summed over batch."""
        if cache is None:
            raise ValueError("backward requires the cache from a forward pass")
        activations, pre = cache
        grad_out = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads = [None] * len(self.weights)
        dz = grad_out
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                dz = dz * (pre[i] > 0)
            grads[i] = (dz.T @ activations[i], dz.sum(axis=0))
            if i > 0:
                dz = dz @ self.weights[i]
        return grads

    def input_gradient(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """d(sum <upstream, output>)/d input, same shape as the input batch."""
        activations, pre = cache
        dz = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                dz = dz * (pre[i] > 0)
            dz = dz @ self.weights[i]
        return dz

    # -- flat parameter views (finite-difference checks, serialization) -----

    def get_params(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights]
                              + [b.ravel() for b in self.biases])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        i = 0
        for w in self.weights:
            w[...] = flat[i:i + w.size].reshape(w.shape)
            i += w.size
        for b in self.biases:
            b[...] = flat[i:i + b.size]
            i += b.size
        if i != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    def flatten_grads(self, grads) -> np.ndarray:
        return np.concatenate([dw.ravel() for dw, _ in grads]
                              + [db.ravel() for _, db in grads])

    def to_dict(self) -> dict:
        return {"version": FORMAT_VERSION, "sizes": self.sizes,
                "params": self.get_params().tolist()}

    @staticmethod
    def from_dict(doc: dict) -> "Mlp":
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {doc.get('version')!r}")
        net = Mlp(doc["sizes"], seed=0)
        net.set_params(np.asarray(doc["params"], dtype=np.float64))
        return net

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @staticmethod
    def load(path) -> "Mlp":
        with open(path, "r", encoding="utf-8") as fh:
            return Mlp.from_dict(json.load(fh))


class Adam:
    """Adaptive-moment optimizer over a network's parameter list."""

    def __init__(self, net: Mlp, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.weights + net.biases]
        self.v = [np.zeros_like(p) for p in net.weights + net.biases]

    def step(self, grads, lr: float | None = None) -> None:
        """Apply one descent step along `grads` (negate upstream to ascend)."""
        lr = self.lr if lr is None else lr
        flat = [dw for dw, _ in grads] + [db for _, db in grads]
        params = self.net.weights + self.net.biases
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class AdamArrays:
    """Adam over a plain list of numpy arrays (tabular parameters)."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Policy heads
# ---------------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class CategoricalPolicyNet:
    """Discrete policy: features -> action logits."""

    def __init__(self, net: Mlp):
        self.net = net

    def log_probs(self, x: np.ndarray):
        logits, cache = self.net.forward(x)
        return log_softmax(logits), cache

    def log_prob_grads(self, cache, actions: np.ndarray, weights: np.ndarray):
        """Gradient of sum_b weights_b * log pi(a_b | x_b) w.r.t. parameters."""
        logits = cache[1][-1]
        p = np.exp(log_softmax(logits))
        upstream = -p * weights[:, None]
        upstream[np.arange(len(actions)), actions] += weights
        return self.net.backward(cache, upstream)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        logp, _ = self.log_probs(x)
        u = rng.uniform(size=logp.shape)
        # Gumbel-max keeps sampling vectorized and reproducible.
        return np.argmax(logp - np.log(-np.log(u)), axis=1)


def tanh_gaussian_log_prob(mean, log_std, pre_tanh):
    """Log density of a = tanh(u), u ~ N(mean, exp(log_std)^2), summed over dims."""
    std = np.exp(log_std)
    z = (pre_tanh - mean) / std
    base = -0.5 * z * z - 0.5 * np.log(2.0 * np.pi) - log_std
    # log(1 - tanh(u)^2) in a form stable for large |u|.
    correction = 2.0 * (np.log(2.0) - pre_tanh - np.logaddexp(0.0, -2.0 * pre_tanh))
    return (base - correction).sum(axis=1)


class GaussianPolicyNet:
    """Continuous policy: features -> tanh-squashed Gaussian over actions.

    The net outputs [mean, log_std] per action dimension; log_std is
    state-dependent and clipped to a sane range before exponentiation.
    """

    LOG_STD_RANGE = (-5.0, 2.0)

    def __init__(self, net: Mlp, action_dim: int):
        if net.n_out != 2 * action_dim:
            raise ValueError("net output width must be 2 * action_dim")
        self.net = net
        self.action_dim = action_dim

    def _heads(self, out):
        mean = out[:, :self.action_dim]
        log_std = np.clip(out[:, self.action_dim:], *self.LOG_STD_RANGE)
        return mean, log_std

    def log_prob(self, x: np.ndarray, actions: np.ndarray):
        out, cache = self.net.forward(x)
        mean, log_std = self._heads(out)
        u = np.arctanh(np.clip(actions, -1.0 + 1e-9, 1.0 - 1e-9))
        return tanh_gaussian_log_prob(mean, log_std, u), (cache, mean, log_std, u)

    def log_prob_grads(self, aux, weights: np.ndarray):
        """Gradient of sum_b weights_b * log pi(a_b | x_b) w.r.t. parameters."""
        cache, mean, log_std, u = aux
        std = np.exp(log_std)
        z = (u - mean) / std
        d_mean = z / std * weights[:, None]
        d_log_std = (z * z - 1.0) * weights[:, None]
        raw = cache[1][-1][:, self.action_dim:]
        inside = (raw > self.LOG_STD_RANGE[0]) & (raw < self.LOG_STD_RANGE[1])
        upstream = np.concatenate([d_mean, d_log_std * inside], axis=1)
        return self.net.backward(cache, upstream)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out, _ = self.net.forward(x)
        mean, log_std = self._heads(out)
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return np.tanh(u)

    def density(self, x_row: np.ndarray, action_grid: np.ndarray) -> np.ndarray:
        """Pointwise density over a grid of actions for one state (1-D head)."""
        if self.action_dim != 1:
            raise ValueError("density grid evaluation only supports 1-D actions")
        out, _ = self.net.forward(np.atleast_2d(x_row))
        mean, log_std = self._heads(out)
        u = np.arctanh(np.clip(action_grid, -1.0 + 1e-12, 1.0 - 1e-12))[:, None]
        logp = tanh_gaussian_log_prob(np.repeat(mean, len(u), 0),
                                      np.repeat(log_std, len(u), 0), u)
        return np.exp(logp)
