"""Analytic FLOP counts for dense networks and the reference patch feature extractor.

Conventions: a multiply-accumulate is 2 FLOPs; every elementwise activation,
batch-norm affine (2 per element), residual addition and pooling comparison
is counted per output element.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class LayerCost:
    name: str
    macs: int
    other: int = 0  # non-MAC FLOPs (activations, norms, pooling, adds)

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.other


def _out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def dense_layers(dims: list[int], act_cost: int = 1) -> list[LayerCost]:
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        hidden = i < len(dims) - 2
        layers.append(LayerCost(f"dense{i}", a * b, act_cost * b if hidden else 0))
    return layers


def resnet50_layers(size: int = 256, stop_after: str | None = None) -> list[LayerCost]:
    """Per-layer costs of the standard bottleneck ResNet-50 (stride on the 3x3 conv).

    ``stop_after`` may name a stage ("layer3", ...) to cut the network early, as
    done by extractors that keep the 1024-channel stage-3 features.
    """
    layers: list[LayerCost] = []

    def conv(name, cin, cout, k, stride, pad, hw, relu=True):
        ho = _out(hw, k, stride, pad)
        elems = cout * ho * ho
        layers.append(LayerCost(name, cin * cout * k * k * ho * ho, 2 * elems + (elems if relu else 0)))
        return ho

    hw = conv("conv1", 3, 64, 7, 2, 3, size)
    ho = _out(hw, 3, 2, 1)
    layers.append(LayerCost("maxpool", 0, 9 * 64 * ho * ho))
    hw = ho

    cin = 64
    stages = [("layer1", 64, 3, 1), ("layer2", 128, 4, 2), ("layer3", 256, 6, 2), ("layer4", 512, 3, 2)]
    for stage, width, blocks, stride in stages:
        for b in range(blocks):
            s = stride if b == 0 else 1
            name = f"{stage}.{b}"
            h1 = conv(f"{name}.conv1", cin, width, 1, 1, 0, hw)
            h2 = conv(f"{name}.conv2", width, width, 3, s, 1, h1)
            h3 = conv(f"{name}.conv3", width, 4 * width, 1, 1, 0, h2, relu=False)
            if b == 0:
                conv(f"{name}.downsample", cin, 4 * width, 1, s, 0, hw, relu=False)
            elems = 4 * width * h3 * h3
            layers.append(LayerCost(f"{name}.add_relu", 0, 2 * elems))
            cin, hw = 4 * width, h3
        if stage == stop_after:
            layers.append(LayerCost("avgpool", 0, cin * hw * hw))
            return layers
    layers.append(LayerCost("avgpool", 0, cin * hw * hw))
    layers.append(LayerCost("fc", cin * 1000, 0))
    return layers


def total_flops(layers: list[LayerCost]) -> int:
    return sum(layer.flops for layer in layers)


def total_macs(layers: list[LayerCost]) -> int:
    return sum(layer.macs for layer in layers)


@dataclass
class FlopModel:
    """Reference extractor cost against which generator costs are compared."""

    input_size: int = 256
    stop_after: str | None = None
    layers: list[LayerCost] = field(init=False)

    def __post_init__(self):
        self.layers = resnet50_layers(self.input_size, self.stop_after)

    @property
    def reference_flops(self) -> int:
        return total_flops(self.layers)

    @staticmethod
    def mlp_flops(dims: list[int]) -> int:
        return total_flops(dense_layers(dims))

    def generator_flops(self, gen) -> int:
        if gen.variant == "ind":
            return gen.d * self.mlp_flops(gen.dims)
        return self.mlp_flops(gen.dims)

    def ratio(self, gen) -> float:
        return self.reference_flops / self.generator_flops(gen)
