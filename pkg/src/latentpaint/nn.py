"""Minimal conv-net building blocks with explicit backward passes.

Layers are stateless at call time: ``forward`` returns ``(output, cache)``
and ``backward(cache, grad_out)`` returns ``(grad_in, param_grads)``, so a
model with frozen weights can run concurrently from multiple threads.
Activations are NHWC float32 by default; float64 flows through unchanged
(used by the finite-difference gradient checks).
"""

from __future__ import annotations

import numpy as np

from . import backend

LEAK = 0.2  # leaky-relu slope, fixed across the package


def act_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "lrelu":
        return np.where(x > 0, x, (np.asarray(LEAK, dtype=x.dtype)) * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown nonlinearity {kind!r}")


def act_backward(kind: str, y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # y is the post-activation output; for lrelu sign(y) == sign(pre-activation).
    if kind == "lrelu":
        return np.where(y > 0, gy, (np.asarray(LEAK, dtype=gy.dtype)) * gy)
    if kind == "tanh":
        return gy * (1.0 - y.astype(gy.dtype) ** 2)
    if kind == "linear":
        return gy
    raise ValueError(f"unknown nonlinearity {kind!r}")


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def upsample_nearest_grad(gy: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return gy
    b, h, w, c = gy.shape
    blocks = gy.reshape(b, h // factor, factor, w // factor, factor, c)
    return blocks.sum(axis=(2, 4), dtype=np.float64).astype(gy.dtype)


def he_init(rng: np.random.Generator, kh: int, kw: int, cin: int, cout: int,
            gain: float = 2.0, dtype=np.float32) -> np.ndarray:
    std = np.sqrt(gain / (kh * kw * cin))
    return (rng.standard_normal((kh, kw, cin, cout)) * std).astype(dtype)


class Conv2d:
    """3x3/1x1-style convolution with 'same' padding and optional stride."""

    def __init__(self, w: np.ndarray, b: np.ndarray, stride: int = 1):
        self.w = w
        self.b = b
        self.stride = stride

    @classmethod
    def create(cls, rng: np.random.Generator, cin: int, cout: int, k: int = 3,
               stride: int = 1, zero: bool = False, dtype=np.float32) -> "Conv2d":
        if zero:
            w = np.zeros((k, k, cin, cout), dtype=dtype)
        else:
            w = he_init(rng, k, k, cin, cout, dtype=dtype)
        return cls(w, np.zeros(cout, dtype=dtype), stride)

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray):
        return backend.conv2d(x, self.w, self.b, self.stride), x

    def backward(self, cache, gy):
        x = cache
        gw, gb = backend.conv2d_grad_weights(x, gy, self.w.shape[0], self.w.shape[1], self.stride)
        gx = backend.conv2d_grad_input(gy, self.w, x.shape[1], x.shape[2], self.stride)
        return gx, [gw, gb]


class Activation:
    def __init__(self, kind: str):
        self.kind = kind

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray):
        y = act_forward(self.kind, x)
        return y, y

    def backward(self, cache, gy):
        return act_backward(self.kind, cache, gy), []


class Upsample:
    def __init__(self, factor: int):
        self.factor = factor

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray):
        return upsample_nearest(x, self.factor), None

    def backward(self, cache, gy):
        return upsample_nearest_grad(gy, self.factor), []


class Residual:
    """Pre-activation residual pair: x + conv(act(conv(act(x))))."""

    def __init__(self, conv1: Conv2d, conv2: Conv2d, kind: str = "lrelu"):
        self.conv1 = conv1
        self.conv2 = conv2
        self.kind = kind

    def params(self) -> list[np.ndarray]:
        return self.conv1.params() + self.conv2.params()

    def forward(self, x: np.ndarray):
        a1 = act_forward(self.kind, x)
        y1, c1 = self.conv1.forward(a1)
        a2 = act_forward(self.kind, y1)
        y2, c2 = self.conv2.forward(a2)
        return x + y2, (a1, c1, a2, c2)

    def backward(self, cache, gy):
        a1, c1, a2, c2 = cache
        g2, pg2 = self.conv2.backward(c2, gy)
        g1 = act_backward(self.kind, a2, g2)
        g0, pg1 = self.conv1.backward(c1, g1)
        gx = gy + act_backward(self.kind, a1, g0)
        return gx, pg1 + pg2


class Sequential:
    def __init__(self, layers: list):
        self.layers = layers

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, gy):
        grads: list[np.ndarray] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            gy, pg = layer.backward(cache, gy)
            grads = pg + grads
        return gy, grads


class Adam:
    """Standard Adam; moment state kept in float64 for reproducible updates."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g64 = g.astype(np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g64
            v *= self.beta2
            v += (1.0 - self.beta2) * g64 * g64
            upd = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p -= upd.astype(p.dtype)


def l1_mean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def l1_mean_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # d/da mean|a-b|; sign(0) = 0 keeps the exact-fit case a fixed point.
    return (np.sign(a.astype(np.float64) - b.astype(np.float64)) / a.size).astype(a.dtype)
