"""Dense layers and plain MLP stacks on top of :mod:`embaug.numerics`."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class Dense:
    """Affine map ``x @ W + b`` with ``W`` of shape (fan_in, fan_out)."""

    def __init__(self, fan_in: int, fan_out: int, rng=None):
        self.fan_in = fan_in
        self.fan_out = fan_out
        if rng is None:
            w = np.zeros((fan_in, fan_out))
            b = np.zeros(fan_out)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nx.add(nx.matmul(x, self.W), self.b)

    def apply(self, x: np.ndarray) -> np.ndarray:
        # graph-free path for inference
        return x @ self.W.data + self.b.data

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    @property
    def flops(self) -> int:
        return 2 * self.fan_in * self.fan_out


class MLP:
    """Stack of Dense layers with leaky-ReLU between them and a linear output."""

    def __init__(self, dims: list[int], rng=None, slope: float = nx.DEFAULT_SLOPE):
        if len(dims) < 2:
            raise nx.ContractError("an MLP needs at least input and output dims")
        self.dims = list(dims)
        self.slope = slope
        self.layers = [Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = nx.leaky_relu(x, self.slope)
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer.apply(x)
            if i < last:
                x = np.where(x > 0, x, self.slope * x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward_flops(self) -> int:
        """Multiply-adds counted as 2 FLOPs, plus 1 FLOP per hidden activation."""
        macs = sum(layer.flops for layer in self.layers)
        acts = sum(self.dims[1:-1])
        return macs + acts


def get_weights(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def set_weights(params: list[Tensor], values: list[np.ndarray]) -> None:
    if len(params) != len(values):
        raise nx.ContractError(f"expected {len(params)} weight arrays, got {len(values)}")
    for p, v in zip(params, values):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != p.shape:
            raise nx.DimensionError(f"weight shape {v.shape} does not match {p.shape}")
        p.data = v.copy()
