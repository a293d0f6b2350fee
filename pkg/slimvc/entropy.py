"""Quantization, likelihoods, rate estimation and CDF tables.

Two density families are provided:

* :class:`FactorizedDensity`: a learned per-channel univariate cumulative
  ``c(x)`` (three scalar stages of widths 3-3-3 with positive weights and
  bounded nonlinearities, then a logistic squash), with an independent
  parameter set per width. Used for intra latents and for hyper-latents.
* the conditional Gaussian ``N(μ, σ)`` integrated over unit bins, whose
  parameters come from the entropy-parameter network.

Likelihoods are clamped below at 1e-9. Coding tables cover the support
[-64, 63] plus an escape symbol, quantized to 16-bit frequencies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NumericalError, ShapeError
from .rangecoder import TOTAL, QuantizedCDF
from .tensor import (
    ComputeGraph,
    Parameter,
    Tensor,
    absolute,
    add,
    div,
    log2,
    lower_bound,
    matmul,
    mul,
    neg,
    normal_cdf,
    reshape,
    sigmoid,
    softplus,
    sub,
    sum_all,
    tanh,
    transpose,
)

logger = logging.getLogger(__name__)

LIKELIHOOD_FLOOR = 1e-9
SCALE_FLOOR = 0.04
SUPPORT = (-64, 63)
DENSITY_FILTERS = (3, 3, 3)
DENSITY_INIT_SCALE = 10.0


def quantize_train(z: Tensor, seed: int | np.random.Generator) -> Tensor:
    """Additive uniform noise proxy: z + u, u ~ U(-0.5, 0.5)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.uniform(-0.5, 0.5, size=z.shape).astype(z.dtype)
    return add(z, Tensor(noise))


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize_infer(z: Tensor | np.ndarray) -> Tensor:
    """Elementwise rounding, ties away from zero."""
    data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float32)
    return Tensor(round_half_away(data).astype(data.dtype))


def scale_from_raw(raw: Tensor) -> Tensor:
    """σ = max(softplus(raw), 0.04)."""
    return lower_bound(softplus(raw), SCALE_FLOOR)


@dataclass
class DistributionParams:
    """Per-element mean and scale of the residual latent."""

    mean: Tensor
    scale: Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.scale.shape:
            raise ShapeError(f"mean {self.mean.shape} and scale {self.scale.shape} differ")

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.mean.data)) and np.all(np.isfinite(self.scale.data))):
            raise NumericalError("distribution parameters are not finite", module="epm")
        if np.any(self.scale.data < SCALE_FLOOR * (1 - 1e-6)):
            raise NumericalError(f"scale below {SCALE_FLOOR}", module="epm")


def likelihood_gaussian(q: Tensor, params: DistributionParams) -> Tensor:
    """P(q) = Φ((q-μ+½)/σ) - Φ((q-μ-½)/σ), clamped below at 1e-9."""
    if q.shape != params.mean.shape:
        raise ShapeError(f"symbols {q.shape} do not match distribution {params.mean.shape}")
    params.validate()
    # Symmetric form: evaluate the bin on the left tail for accuracy.
    distance = absolute(sub(q, params.mean))
    upper = normal_cdf(div(sub(0.5, distance), params.scale))
    lower = normal_cdf(div(sub(-0.5, distance), params.scale))
    return lower_bound(sub(upper, lower), LIKELIHOOD_FLOOR)


def rate_bits(p: Tensor) -> Tensor:
    """Σ -log2 p over all elements."""
    return neg(sum_all(log2(p)))


class FactorizedDensity:
    """Per-channel learned cumulative with independent parameters per width."""

    def __init__(self, name: str, channels: tuple[int, ...], rng: np.random.Generator,
                 filters: tuple[int, ...] = DENSITY_FILTERS, init_scale: float = DENSITY_INIT_SCALE):
        self.name = name
        self.channels = tuple(channels)
        self.filters = (1, *filters, 1)
        self.stages: list[list[tuple[Parameter, Parameter, Parameter | None]]] = []
        scale = init_scale ** (1.0 / (len(self.filters) - 1))
        for k, count in enumerate(self.channels):
            stages = []
            for i in range(len(self.filters) - 1):
                fan_in, fan_out = self.filters[i], self.filters[i + 1]
                init = np.log(np.expm1(1.0 / scale / fan_out))
                matrix = Parameter(f"{name}.{k}.matrix{i}", np.full((count, fan_out, fan_in), init))
                bias = Parameter(f"{name}.{k}.bias{i}", rng.uniform(-0.5, 0.5, size=(count, fan_out, 1)))
                factor = None
                if i < len(self.filters) - 2:
                    factor = Parameter(f"{name}.{k}.factor{i}", np.zeros((count, fan_out, 1)))
                stages.append((matrix, bias, factor))
            self.stages.append(stages)

    @property
    def widths(self) -> int:
        return len(self.channels)

    def parameters(self, k: int | None = None) -> list[Parameter]:
        indices = range(self.widths) if k is None else [self._check(k)]
        out: list[Parameter] = []
        for index in indices:
            for matrix, bias, factor in self.stages[index]:
                out.extend(p for p in (matrix, bias, factor) if p is not None)
        return out

    def _check(self, k: int) -> int:
        if not 0 <= k < self.widths:
            raise ShapeError(f"{self.name}: width index {k} out of range [0, {self.widths - 1}]")
        return k

    def logits_cumulative(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        """Logit of c(x) for x shaped [C, 1, N]."""
        logits = x
        for matrix, bias, factor in self.stages[self._check(k)]:
            logits = matmul(softplus(matrix.tensor(graph)), logits)
            logits = add(logits, bias.tensor(graph))
            if factor is not None:
                logits = add(logits, mul(tanh(factor.tensor(graph)), tanh(logits)))
        return logits

    def cdf(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        return sigmoid(self.logits_cumulative(x, k, graph))

    def bin_probabilities(self, values: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        """P(v) = c(v+½) - c(v-½) for values shaped [C, 1, N], unclamped."""
        lower = self.logits_cumulative(sub(values, 0.5), k, graph)
        upper = self.logits_cumulative(add(values, 0.5), k, graph)
        # Evaluate on the side of the logistic where it is far from 1.
        flip = np.where(lower.data + upper.data > 0, -1.0, 1.0).astype(lower.dtype)
        sign = Tensor(flip)
        return absolute(sub(sigmoid(mul(sign, upper)), sigmoid(mul(sign, lower))))

    def pmf(self, k: int, support: tuple[int, int] = SUPPORT) -> np.ndarray:
        """Float64 probability table [C, S] over the integer support."""
        count = self.channels[self._check(k)]
        values = np.arange(support[0], support[1] + 1, dtype=np.float64)
        grid = Tensor(np.broadcast_to(values, (count, 1, values.size)).copy())
        with np.errstate(over="ignore"):
            probabilities = self.bin_probabilities(grid, k).data
        return probabilities.reshape(count, values.size)


def likelihood_factorized(q: Tensor, model: FactorizedDensity, k: int,
                          graph: ComputeGraph | None = None) -> Tensor:
    """Per-channel P(q) under ``model`` at width ``k``, clamped below at 1e-9."""
    if q.ndim != 4:
        raise ShapeError(f"{model.name}: expected [B,C,H,W] symbols, got {q.shape}")
    batch, channels, height, width = q.shape
    if channels != model.channels[model._check(k)]:
        raise ShapeError(
            f"{model.name}: width {k} expects {model.channels[k]} channels, got {channels}"
        )
    flat = reshape(transpose(q, (1, 0, 2, 3)), (channels, 1, batch * height * width))
    probabilities = model.bin_probabilities(flat, k, graph)
    probabilities = transpose(reshape(probabilities, (channels, batch, height, width)), (1, 0, 2, 3))
    return lower_bound(probabilities, LIKELIHOOD_FLOOR)


def gaussian_pmf(mean: np.ndarray, scale: np.ndarray, support: tuple[int, int] = SUPPORT) -> np.ndarray:
    """Float64 probability table [N, S] of N(μ, σ) over the integer support."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1, 1)
    values = np.arange(support[0], support[1] + 1, dtype=np.float64)[None, :]
    distance = np.abs(values - mean)
    return special.ndtr((0.5 - distance) / scale) - special.ndtr((-0.5 - distance) / scale)


def quantize_pmf(pmf: np.ndarray, escape: bool = True) -> np.ndarray:
    """Integer frequencies summing to 65536 for each row of ``pmf``.

    With ``escape`` the leftover mass 1 - Σ p becomes a final escape symbol.
    Every symbol receives one count; the remaining ``65536 - S`` counts are
    shared in proportion to the mass by the largest-remainder rule, ties going
    to the lower index.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    pmf = np.clip(np.nan_to_num(pmf, nan=0.0), 0.0, None)
    if escape:
        tail = np.clip(1.0 - pmf.sum(axis=1, keepdims=True), 0.0, None)
        pmf = np.concatenate([pmf, tail], axis=1)
    rows, symbols = pmf.shape
    if symbols > TOTAL:
        raise ShapeError(f"{symbols} symbols do not fit a {TOTAL}-count table")
    mass = pmf.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise NumericalError("cannot build a CDF from an all-zero probability mass")
    free = TOTAL - symbols
    share = pmf / mass * free
    base = np.floor(share).astype(np.int64)
    remaining = free - base.sum(axis=1)
    order = np.argsort(-(share - base), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(symbols)[None, :].repeat(rows, axis=0), axis=1)
    extra = (ranks < remaining[:, None]).astype(np.int64)
    return 1 + base + extra


def build_cdf(pmf: np.ndarray, offset: int = SUPPORT[0], escape: bool = True) -> QuantizedCDF:
    """Quantized CDF for one probability vector over ``offset, offset+1, ...``."""
    frequencies = quantize_pmf(np.asarray(pmf).reshape(1, -1), escape=escape)[0]
    cumulative = (0, *np.cumsum(frequencies).tolist())
    return QuantizedCDF(tuple(int(c) for c in cumulative), offset,
                        len(frequencies) - 1 if escape else None)


def build_cdfs(pmf: np.ndarray, offset: int = SUPPORT[0], escape: bool = True) -> list[QuantizedCDF]:
    """Row-wise :func:`build_cdf`."""
    frequencies = quantize_pmf(pmf, escape=escape)
    cumulative = np.concatenate(
        [np.zeros((frequencies.shape[0], 1), dtype=np.int64), np.cumsum(frequencies, axis=1)], axis=1
    )
    escape_index = frequencies.shape[1] - 1 if escape else None
    return [QuantizedCDF(tuple(row), offset, escape_index) for row in cumulative.tolist()]


def gaussian_cdfs(params: DistributionParams, support: tuple[int, int] = SUPPORT) -> list[QuantizedCDF]:
    """One table per element, in C-order of the parameter tensors."""
    params.validate()
    return build_cdfs(gaussian_pmf(params.mean.data, params.scale.data, support), support[0])


def factorized_cdfs(model: FactorizedDensity, k: int, support: tuple[int, int] = SUPPORT) -> list[QuantizedCDF]:
    """One table per channel at width ``k``."""
    return build_cdfs(model.pmf(k, support), support[0])


def count_escapes(symbols: np.ndarray, support: tuple[int, int] = SUPPORT) -> int:
    return int(np.count_nonzero((symbols < support[0]) | (symbols > support[1])))


__all__ = [
    "LIKELIHOOD_FLOOR",
    "SCALE_FLOOR",
    "SUPPORT",
    "quantize_train",
    "quantize_infer",
    "round_half_away",
    "scale_from_raw",
    "DistributionParams",
    "likelihood_gaussian",
    "likelihood_factorized",
    "rate_bits",
    "FactorizedDensity",
    "gaussian_pmf",
    "quantize_pmf",
    "build_cdf",
    "build_cdfs",
    "gaussian_cdfs",
    "factorized_cdfs",
    "count_escapes",
]
