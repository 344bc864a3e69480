"""Parameterized layers built on the autograd engine."""

from __future__ import annotations

import numpy as np

from .autograd import Parameter, Tensor, add, conv1d, matmul, mul, reshape, sigmoid, tanh
from .errors import ShapeError


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform initialization: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """Fully connected layer: x @ w + b over row-vector batches (B, n_in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.n_in = n_in
        self.n_out = n_out
        self.w = Parameter(he_uniform(rng, (n_in, n_out), n_in), f"{name}.w")
        self.b = Parameter(np.zeros(n_out), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.n_in:
            raise ShapeError(f"{self.w.name}: expected input width {self.n_in}, got {x.data.shape[1]}")
        return add(matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class Conv1dLayer:
    """1D convolution layer with per-channel bias."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 name: str, mode: str = "valid"):
        fan_in = c_in * kernel
        self.kernels = Parameter(he_uniform(rng, (c_out, c_in, kernel), fan_in), f"{name}.kernels")
        self.bias = Parameter(np.zeros((1, c_out, 1)), f"{name}.bias")
        self.mode = mode

    def __call__(self, x: Tensor) -> Tensor:
        return add(conv1d(x, self.kernels, self.mode), self.bias)

    def parameters(self):
        return [self.kernels, self.bias]


class GRUCell:
    """Standard gated recurrent unit cell.

    z = sigmoid(x Wxz + h Whz + bz)
    r = sigmoid(x Wxr + h Whr + br)
    n = tanh(x Wxn + (r * h) Whn + bn)
    h' = (1 - z) * n + z * h
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str):
        self.n_in = n_in
        self.n_hidden = n_hidden

        def mat(tag, rows):
            return Parameter(he_uniform(rng, (rows, n_hidden), rows), f"{name}.{tag}")

        self.wxz, self.whz = mat("wxz", n_in), mat("whz", n_hidden)
        self.wxr, self.whr = mat("wxr", n_in), mat("whr", n_hidden)
        self.wxn, self.whn = mat("wxn", n_in), mat("whn", n_hidden)
        self.bz = Parameter(np.zeros(n_hidden), f"{name}.bz")
        self.br = Parameter(np.zeros(n_hidden), f"{name}.br")
        self.bn = Parameter(np.zeros(n_hidden), f"{name}.bn")

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.data.shape[1] != self.n_in or h.data.shape[1] != self.n_hidden:
            raise ShapeError(
                f"GRU cell expects x:(B,{self.n_in}) h:(B,{self.n_hidden}), "
                f"got {x.data.shape} and {h.data.shape}")
        z = sigmoid(add(add(matmul(x, self.wxz), matmul(h, self.whz)), self.bz))
        r = sigmoid(add(add(matmul(x, self.wxr), matmul(h, self.whr)), self.br))
        n = tanh(add(add(matmul(x, self.wxn), matmul(mul(r, h), self.whn)), self.bn))
        one_minus_z = add(Tensor(1.0), mul(Tensor(-1.0), z))
        return add(mul(one_minus_z, n), mul(z, h))

    def zero_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.n_hidden)))

    def parameters(self):
        return [self.wxz, self.whz, self.wxr, self.whr, self.wxn, self.whn,
                self.bz, self.br, self.bn]


def flatten(x: Tensor) -> Tensor:
    """(B, ...) -> (B, prod(...))."""
    b = x.data.shape[0]
    return reshape(x, (b, -1))
