"""Small numerical kit: dense nets with exact backprop, Adam, diagonal Gaussians, seeded RNG.

Everything works on float64 numpy arrays. Networks accept either a single
vector (shape ``(in,)``) or a batch (shape ``(batch, in)``); gradients of a
batch are summed over the batch.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
LINEAR = "linear"
ACTIVATIONS = (RELU, LINEAR)


class RngStream:
    """Deterministic random stream backed by numpy's PCG64.

    A stream is identified by its seed and a path of labels. ``child(label)``
    derives a new, statistically independent stream from ``(seed, path +
    label)``; it does not consume state from the parent, so children are
    reproducible regardless of how much the parent has been used.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, *self.path]
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, label: str | int) -> "RngStream":
        key = zlib.crc32(str(label).encode("utf-8"))
        return RngStream(self.seed, self.path + (key,))

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight must be (out, in) and bias (out,)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DenseNet needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ValueError(
                    f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list in layer order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def init_dense(sizes: list[int], rng: RngStream, activations: list[str] | None = None) -> DenseNet:
    """Glorot-uniform weights, zero biases. ReLU on hidden layers, linear output by default."""
    n = len(sizes) - 1
    if activations is None:
        activations = [RELU] * (n - 1) + [LINEAR]
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = (rng.uniform((fan_out, fan_in)) * 2.0 - 1.0) * limit
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


@dataclass
class ForwardCache:
    net_id: int
    inputs: list[np.ndarray]  # input to each layer (batch-shaped)
    preacts: list[np.ndarray]
    single: bool


def net_forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ValueError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(a)
        pre = a @ layer.weight.T + layer.bias
        preacts.append(pre)
        a = np.maximum(pre, 0.0) if layer.activation == RELU else pre
    out = a[0] if single else a
    return out, ForwardCache(id(net), inputs, preacts, single)


def net_apply(net: DenseNet, x) -> np.ndarray:
    return net_forward(net, x)[0]


def net_backward(net: DenseNet, cache: ForwardCache, output_grad) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(output_grad * output)`` w.r.t. params (same order as ``params()``) and input."""
    if cache.net_id != id(net) or len(cache.inputs) != len(net.layers):
        raise ValueError("cache was not produced by this network")
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if cache.single else g
    if g.shape != cache.preacts[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} does not match output {cache.preacts[-1].shape}")
    grads: list[np.ndarray] = []
    for layer, a_in, pre in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.preacts)):
        if layer.activation == RELU:
            g = g * (pre > 0.0)
        grads.append(g.sum(axis=0))
        grads.append(g.T @ a_in)
        g = g @ layer.weight
    grads.reverse()  # now W0, b0, W1, b1, ...
    return grads, (g[0] if cache.single else g)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: list[np.ndarray], lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr, beta1, beta2, eps, 0,
                     [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """In-place Adam update with bias correction. ``params`` are mutated."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class DiagGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape:
            raise ValueError("mu and sigma must have the same shape")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(sigma <= 0.0):
            raise ValueError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.ones(dim))


def kl_diag_gauss(q: DiagGaussian, p: DiagGaussian) -> float:
    """Closed-form KL(q || p) for diagonal Gaussians."""
    if q.mu.shape != p.mu.shape:
        raise ValueError("dimension mismatch between distributions")
    terms = (np.log(p.sigma / q.sigma)
             + (q.sigma**2 + (q.mu - p.mu) ** 2) / (2.0 * p.sigma**2) - 0.5)
    return float(max(terms.sum(), 0.0))


def sample_diag_gauss(g: DiagGaussian, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    eps = rng.normal(g.mu.shape)
    return g.mu + g.sigma * eps, eps


def gauss_head(raw) -> DiagGaussian:
    """Split a raw head output into (mean, log-variance) halves."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] % 2:
        raise ValueError(f"gaussian head needs an even width, got {raw.shape[-1]}")
    d = raw.shape[-1] // 2
    return DiagGaussian(raw[..., :d], np.exp(0.5 * raw[..., d:]))
