"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .tensor import ComputeGraph, Parameter, Tensor

LossFn = Callable[[ComputeGraph], Tensor]


def _scalar(loss: Tensor) -> float:
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar loss, got shape {loss.shape}")
    return float(loss.data.reshape(()))


def _coordinates(shape: tuple[int, ...], samples: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    size = int(np.prod(shape))
    if size <= samples:
        flat = np.arange(size)
    else:
        flat = np.sort(rng.choice(size, size=samples, replace=False))
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat]


def grad_check(
    fn: LossFn,
    params: Sequence[Parameter],
    epsilon: float = 1e-3,
    samples: int = 16,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` builds the loss inside the graph it is given and must be
    deterministic. Analytic gradients come from a float32 graph; the numeric
    side re-evaluates the loss in float64 at ``x ± epsilon`` for up to
    ``samples`` coordinates of every parameter. The error of one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if epsilon <= 0:
        raise ShapeError(f"epsilon must be positive, got {epsilon}")
    graph = ComputeGraph(np.float32)
    grads = graph.backward(fn(graph))
    rng = np.random.default_rng(seed)

    worst = 0.0
    for param in params:
        analytic = grads[param]
        original = param.data
        base = original.astype(np.float64)
        try:
            for index in _coordinates(param.shape, samples, rng):
                shifted = base.copy()
                shifted[index] = base[index] + epsilon
                param.data = shifted
                upper = _scalar(fn(ComputeGraph(np.float64)))
                shifted[index] = base[index] - epsilon
                lower = _scalar(fn(ComputeGraph(np.float64)))
                numeric = (upper - lower) / (2.0 * epsilon)
                value = float(analytic[index])
                error = abs(value - numeric) / max(1.0, abs(value), abs(numeric))
                worst = max(worst, error)
        finally:
            param.data = original
    return worst


__all__ = ["grad_check"]
