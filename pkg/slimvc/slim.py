"""Slimmable convolutions with nested weights, and switchable GDN/IGDN.

A slimmable layer owns one full-width weight tensor; width ``k`` uses its
leading sub-block ``[0:Cout(k), 0:Cin(k)]``, so the parameters used at width
``k`` are a subset of those used at ``k + 1``. Switchable GDNs are different:
every width has its own, unshared parameter set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .channels import LayerKind, LayerSpec
from .errors import ShapeError
from .ops import channel_mix, conv2d, leaky_relu, same_padding, transposed_conv2d
from .tensor import (
    ComputeGraph,
    Parameter,
    Tensor,
    add,
    div,
    leading_slice,
    mul,
    reshape,
    sqrt,
    square,
)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
GDN_BETA_FLOOR = 1e-6


def _check_width(name: str, k: int, count: int) -> None:
    if not 0 <= k < count:
        raise ShapeError(f"{name}: width index {k} out of range [0, {count - 1}]")


class SlimConv:
    """Slimmable (transposed) convolution sharing one full-width weight."""

    def __init__(self, name: str, spec: LayerSpec, rng: np.random.Generator):
        if not spec.kind.is_conv:
            raise ShapeError(f"{name}: {spec.kind.value} is not a convolution")
        self.name = name
        self.spec = spec
        self.transposed = spec.kind is LayerKind.DECONV
        kernel = spec.kernel
        cin, cout = spec.cin[-1], spec.cout[-1]
        shape = (cin, cout, kernel, kernel) if self.transposed else (cout, cin, kernel, kernel)
        # Glorot uniform over the full tensor.
        limit = math.sqrt(6.0 / ((cin + cout) * kernel * kernel))
        self.weight = Parameter(f"{name}.weight", rng.uniform(-limit, limit, size=shape))
        self.bias = Parameter(f"{name}.bias", np.zeros(cout))

    @property
    def widths(self) -> int:
        return len(self.spec.cin)

    def channels(self, k: int) -> tuple[int, int]:
        _check_width(self.name, k, self.widths)
        return self.spec.channels(k)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def slice_extents(self, k: int) -> tuple[int, int]:
        cin, cout = self.channels(k)
        return (cin, cout) if self.transposed else (cout, cin)

    def slice_weights(self, k: int, graph: ComputeGraph | None = None) -> tuple[Tensor, Tensor]:
        """Leading sub-block of the weight and bias used at width ``k``."""
        extents = self.slice_extents(k)
        cout = self.channels(k)[1]
        weight = leading_slice(self.weight.tensor(graph), extents)
        bias = leading_slice(self.bias.tensor(graph), (cout,))
        return weight, bias

    def padding(self, height: int, width: int) -> tuple[int, int, int, int]:
        kernel, stride = self.spec.kernel, self.spec.stride
        if self.transposed:
            # Crop so that the output is exactly stride times the input.
            before = (kernel - stride) // 2
            after = kernel - stride - before
            return (before, after, before, after)
        top, bottom = same_padding(kernel, stride, height)
        left, right = same_padding(kernel, stride, width)
        return (top, bottom, left, right)

    def __call__(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        cin, _ = self.channels(k)
        if x.ndim != 4 or x.shape[1] != cin:
            raise ShapeError(
                f"{self.name}: expected {cin} input channels at width {k}, got shape {x.shape}"
            )
        weight, bias = self.slice_weights(k, graph)
        padding = self.padding(x.shape[2], x.shape[3])
        if self.transposed:
            return transposed_conv2d(x, weight, bias, stride=self.spec.stride, padding=padding)
        return conv2d(x, weight, bias, stride=self.spec.stride, padding=padding)


def gdn(x: Tensor, beta_raw: Tensor, gamma_raw: Tensor, inverse: bool = False) -> Tensor:
    """y_i = x_i / sqrt(β_i + Σ_j γ_ij x_j²) (or x_i · sqrt(...) when inverse).

    β = β_raw² + 1e-6 and γ = γ_raw² keep the denominator positive.
    """
    channels = x.shape[1]
    if beta_raw.shape != (channels,) or gamma_raw.shape != (channels, channels):
        raise ShapeError(
            f"gdn: parameters {beta_raw.shape}/{gamma_raw.shape} do not match {channels} channels"
        )
    beta = add(square(beta_raw), GDN_BETA_FLOOR)
    gamma = square(gamma_raw)
    norm = add(channel_mix(square(x), gamma), reshape(beta, (1, channels, 1, 1)))
    denominator = sqrt(norm)
    return mul(x, denominator) if inverse else div(x, denominator)


class SwitchableGDN:
    """GDN or IGDN with an independent parameter pair per width."""

    def __init__(self, name: str, spec: LayerSpec):
        if not spec.kind.is_gdn:
            raise ShapeError(f"{name}: {spec.kind.value} is not a GDN layer")
        self.name = name
        self.spec = spec
        self.inverse = spec.kind is LayerKind.IGDN
        self.beta: list[Parameter] = []
        self.gamma: list[Parameter] = []
        for k, channels in enumerate(spec.cout):
            self.beta.append(Parameter(f"{name}.beta.{k}", np.ones(channels)))
            self.gamma.append(Parameter(f"{name}.gamma.{k}", 0.1 * np.eye(channels)))

    @property
    def widths(self) -> int:
        return len(self.spec.cout)

    def parameters(self, k: int | None = None) -> list[Parameter]:
        if k is not None:
            _check_width(self.name, k, self.widths)
            return [self.beta[k], self.gamma[k]]
        return [p for pair in zip(self.beta, self.gamma) for p in pair]

    def __call__(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        return gdn_forward(x, self, k, graph)


def gdn_forward(x: Tensor, layer: SwitchableGDN, k: int, graph: ComputeGraph | None = None) -> Tensor:
    _check_width(layer.name, k, layer.widths)
    channels = layer.spec.cout[k]
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{layer.name}: expected {channels} channels at width {k}, got shape {x.shape}")
    return gdn(x, layer.beta[k].tensor(graph), layer.gamma[k].tensor(graph), inverse=layer.inverse)


class LeakyReLU:
    def __init__(self, name: str, spec: LayerSpec, slope: float = LEAKY_SLOPE):
        self.name = name
        self.spec = spec
        self.slope = slope

    def parameters(self) -> list[Parameter]:
        return []

    def __call__(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        return leaky_relu(x, self.slope)


Layer = SlimConv | SwitchableGDN | LeakyReLU


def build_layer(name: str, spec: LayerSpec, rng: np.random.Generator) -> Layer:
    if spec.kind.is_conv:
        return SlimConv(name, spec, rng)
    if spec.kind.is_gdn:
        return SwitchableGDN(name, spec)
    return LeakyReLU(name, spec)


class SlimStack:
    """Sequential stack of slimmable layers forming one codec module."""

    def __init__(self, name: str, specs: Sequence[LayerSpec], rng: np.random.Generator):
        self.name = name
        self.layers: list[Layer] = [
            build_layer(f"{name}.{position}", spec, rng) for position, spec in enumerate(specs)
        ]

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def in_channels(self, k: int) -> int:
        return self.layers[0].spec.cin[k]

    def out_channels(self, k: int) -> int:
        return self.layers[-1].spec.cout[k]

    def __call__(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, k, graph)
        return x

    def export(self, k: int) -> "DenseStack":
        """Fixed-width copy of this stack at width ``k``."""
        layers: list[DenseLayer] = []
        for layer in self.layers:
            if isinstance(layer, SlimConv):
                weight, bias = layer.slice_weights(k)
                layers.append(DenseLayer(layer.spec.kind, weight.data.copy(), bias.data.copy(),
                                         layer.spec.kernel, layer.spec.stride))
            elif isinstance(layer, SwitchableGDN):
                layers.append(DenseLayer(layer.spec.kind, layer.beta[k].data.copy(),
                                         layer.gamma[k].data.copy()))
            else:
                layers.append(DenseLayer(layer.spec.kind, slope=layer.slope))
        logger.debug("Exported %s at width %d (%d layers)", self.name, k, len(layers))
        return DenseStack(self.name, k, layers)


@dataclass
class DenseLayer:
    kind: LayerKind
    first: np.ndarray | None = None
    second: np.ndarray | None = None
    kernel: int = 1
    stride: int = 1
    slope: float = LEAKY_SLOPE


class DenseStack:
    """A single-width network built from copied, sliced parameters."""

    def __init__(self, name: str, k: int, layers: list[DenseLayer]):
        self.name = name
        self.k = k
        self.layers = layers

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            if layer.kind is LayerKind.CONV:
                top, bottom = same_padding(layer.kernel, layer.stride, x.shape[2])
                left, right = same_padding(layer.kernel, layer.stride, x.shape[3])
                x = conv2d(x, Tensor(layer.first), Tensor(layer.second), layer.stride,
                           (top, bottom, left, right))
            elif layer.kind is LayerKind.DECONV:
                before = (layer.kernel - layer.stride) // 2
                after = layer.kernel - layer.stride - before
                x = transposed_conv2d(x, Tensor(layer.first), Tensor(layer.second), layer.stride,
                                      (before, after, before, after))
            elif layer.kind.is_gdn:
                x = gdn(x, Tensor(layer.first), Tensor(layer.second),
                        inverse=layer.kind is LayerKind.IGDN)
            else:
                x = leaky_relu(x, layer.slope)
        return x


def slim_forward(layer: SlimConv, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
    return layer(x, k, graph)


def slice_weights(layer: SlimConv, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Copies of the width-``k`` weight and bias blocks."""
    weight, bias = layer.slice_weights(k)
    return weight.data.copy(), bias.data.copy()


__all__ = [
    "LEAKY_SLOPE",
    "SlimConv",
    "SwitchableGDN",
    "LeakyReLU",
    "SlimStack",
    "DenseStack",
    "gdn",
    "gdn_forward",
    "slim_forward",
    "slice_weights",
]
