"""Rate-distortion losses, the two-stage training schedule and evaluation.

Stage 1 trains the feature encoder/decoder, their switchable GDNs and the
latent prior as an image codec. Stage 2 freezes those and trains the hyper,
temporal-prior and entropy-parameter modules plus the hyper prior on frame
pairs. Both stages sum the per-width losses of every operating point before a
single backward pass, unless the config names one width to train alone (one
independent codec per operating point).

The factorized priors get their own Adam instance and learning rate; the
networks keep the base rate.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .codec import SequenceEncoder, SlimVCModel
from .config import settings
from .datasets import Dataset
from .entropy import (
    likelihood_factorized,
    likelihood_gaussian,
    quantize_infer,
    quantize_train,
    rate_bits,
)
from .errors import FormatError, NumericalError, StorageError, UsageError
from .models import SequenceMetrics, TrainingConfig
from .tensor import ComputeGraph, Parameter, Tensor, add, mean_all, mul, square, sub

logger = logging.getLogger(__name__)

STAGE_MODULES: dict[int, tuple[str, ...]] = {
    1: ("fe", "fd", "latent_prior"),
    2: ("he", "hd", "tpm", "epm", "hyper_prior"),
}
PRIOR_MODULES: tuple[str, ...] = ("latent_prior", "hyper_prior")
TRACE_HEADER = ("step", "loss", "rate_bpp", "mse")


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


def _scalar(t: Tensor) -> float:
    return float(t.data.reshape(()))


def rd_loss(x: Tensor, x_hat: Tensor, total_rate_bits: Tensor, lam: float, pixel_count: int) -> Tensor:
    """MSE(x, x̂) + λ · bits / pixel_count."""
    if lam <= 0:
        raise UsageError(f"λ must be positive, got {lam}")
    distortion = mean_all(square(sub(x, x_hat)))
    return add(distortion, mul(total_rate_bits, lam / pixel_count))


@dataclass
class WidthTerm:
    k: int
    loss: float
    rate_bpp: float
    mse: float


def _intra_term(model: SlimVCModel, x: Tensor, k: int, lam: float, graph: ComputeGraph,
                rng: np.random.Generator) -> tuple[Tensor, WidthTerm]:
    z = model.analyze(x, k, graph)
    z_tilde = quantize_train(z, rng)
    x_hat = model.synthesize(z_tilde, k, graph, clamp=False)
    rate = rate_bits(likelihood_factorized(z_tilde, model.latent_prior, k, graph))
    batch, _, height, width = x.shape
    pixels = batch * height * width
    loss = rd_loss(x, x_hat, rate, lam, pixels)
    mse = _scalar(mean_all(square(sub(x.detach(), x_hat.detach()))))
    return loss, WidthTerm(k, _scalar(loss), _scalar(rate) / pixels, mse)


def _pair_term(model: SlimVCModel, previous: Tensor, current: Tensor, k: int, lam: float,
               graph: ComputeGraph, rng: np.random.Generator) -> tuple[Tensor, WidthTerm]:
    # Frozen stage-1 modules run outside the graph. The residual is taken
    # between rounded latents, as it is coded.
    z_prev = quantize_infer(model.analyze(previous, k))
    z_hat = quantize_infer(model.analyze(current, k))
    x_hat = model.synthesize(z_hat, k, clamp=False)

    h = model.hyper_encode(z_hat, z_prev, k, graph)
    h_tilde = quantize_train(h, rng)
    params = model.inter_params(h_tilde, z_prev, k, graph)
    residual = quantize_train(sub(z_hat, z_prev), rng)
    rate = add(rate_bits(likelihood_gaussian(residual, params)),
               rate_bits(likelihood_factorized(h_tilde, model.hyper_prior, k, graph)))
    batch, _, height, width = current.shape
    pixels = batch * height * width
    loss = rd_loss(current, x_hat, rate, lam, pixels)
    mse = _scalar(mean_all(square(sub(current, x_hat))))
    return loss, WidthTerm(k, _scalar(loss), _scalar(rate) / pixels, mse)


def joint_loss(
    batch: np.ndarray | tuple[np.ndarray, np.ndarray],
    model: SlimVCModel,
    config: TrainingConfig,
    graph: ComputeGraph,
    step: int = 0,
    widths: Sequence[int] | None = None,
) -> tuple[Tensor, list[WidthTerm]]:
    """Σ_k rd_loss at width k with λ_k; stage 1 takes frames, stage 2 frame pairs."""
    if config.widths != model.widths:
        raise UsageError(f"config has {config.widths} λ values, model has {model.widths} widths")
    widths = range(model.widths) if widths is None else widths
    total: Tensor | None = None
    terms: list[WidthTerm] = []
    for k in widths:
        rng = _rng(config.seed, config.stage, step, k)
        lam = config.lambdas[k]
        if config.stage == 1:
            x = Tensor(np.asarray(batch, dtype=graph.dtype))
            loss, term = _intra_term(model, x, k, lam, graph, rng)
        else:
            previous, current = (Tensor(np.asarray(b, dtype=graph.dtype)) for b in batch)
            loss, term = _pair_term(model, previous, current, k, lam, graph, rng)
        total = loss if total is None else add(total, loss)
        terms.append(term)
    return total, terms


class Adam:
    """Adaptive-moment descent with global gradient-norm clipping."""

    def __init__(self, params: Sequence[Parameter], lr: float = 5e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: Mapping[Parameter, np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        present = [(i, grads[p].astype(np.float64)) for i, p in enumerate(self.params) if p in grads]
        norm = math.sqrt(sum(float(np.sum(g * g)) for _, g in present))
        if not math.isfinite(norm):
            raise NumericalError("non-finite gradient norm")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1 ** self.t
        correction2 = 1.0 - beta2 ** self.t
        for i, grad in present:
            grad = grad * scale
            self._m[i] = beta1 * self._m[i] + (1.0 - beta1) * grad
            self._v[i] = beta2 * self._v[i] + (1.0 - beta2) * grad * grad
            update = self.lr * (self._m[i] / correction1) / (np.sqrt(self._v[i] / correction2) + self.eps)
            param = self.params[i]
            param.data = (param.data.astype(np.float64) - update).astype(np.float32)
        return norm


@dataclass
class TraceRow:
    step: int
    loss: float
    rate_bpp: float
    mse: float


@dataclass
class TrainingResult:
    stage: int
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row.loss for row in self.trace])

    def trace_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in self.trace:
            writer.writerow([row.step, repr(row.loss), repr(row.rate_bpp), repr(row.mse)])
        return buffer.getvalue()

    def write_trace(self, path: Path | str) -> None:
        try:
            Path(path).write_text(self.trace_csv(), encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write loss trace {path}: {exc.strerror or exc}") from exc


def smooth(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    values = np.asarray(values, dtype=np.float64)
    sums = np.cumsum(np.concatenate([[0.0], values]))
    counts = np.minimum(np.arange(1, values.size + 1), window)
    ends = np.arange(1, values.size + 1)
    return (sums[ends] - sums[ends - counts]) / counts


def stage_parameters(model: SlimVCModel, stage: int) -> list[Parameter]:
    return [p for name in STAGE_MODULES[stage] for p in model.module_parameters(name)]


def stage_optimizers(model: SlimVCModel, config: TrainingConfig, stage: int) -> list[Adam]:
    """One Adam for the stage's networks, one for its factorized prior."""
    networks = [name for name in STAGE_MODULES[stage] if name not in PRIOR_MODULES]
    priors = [name for name in STAGE_MODULES[stage] if name in PRIOR_MODULES]
    optimizers = []
    for names, lr in ((networks, config.learning_rate), (priors, config.prior_learning_rate)):
        params = [p for name in names for p in model.module_parameters(name)]
        if params:
            optimizers.append(Adam(params, lr, config.betas, clip_norm=config.clip_norm))
    return optimizers


def train_step(model: SlimVCModel, config: TrainingConfig, batch, optimizers: Sequence[Adam], step: int,
               widths: Sequence[int] | None = None) -> TraceRow:
    graph = ComputeGraph()
    try:
        loss, terms = joint_loss(batch, model, config, graph, step, widths)
    except NumericalError as exc:
        raise NumericalError(f"step {step}: {exc.message}", step=step, module=exc.module) from exc
    value = _scalar(loss)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss at step {step}", step=step)
    grads = graph.backward(loss).parameters()
    for optimizer in optimizers:
        trainable = set(optimizer.params)
        try:
            optimizer.step({p: g for p, g in grads.items() if p in trainable})
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc.message}", step=step) from exc
    return TraceRow(step, value, float(np.mean([t.rate_bpp for t in terms])),
                    float(np.mean([t.mse for t in terms])))


def _train(model: SlimVCModel, config: TrainingConfig, dataset: Dataset, stage: int,
           steps: int) -> TrainingResult:
    config = config.model_copy(update={"stage": stage})
    if config.widths != model.widths:
        raise UsageError(f"config has {config.widths} λ values, model has {model.widths} widths")
    widths = None if config.width is None else [config.width]
    frozen = {p.name: p.data.copy() for name in STAGE_MODULES[1] for p in model.module_parameters(name)} \
        if stage == 2 else {}
    optimizers = stage_optimizers(model, config, stage)
    result = TrainingResult(stage)
    logger.info("Stage %d: %d steps, batch %d, crop %d, preset %s, widths %s",
                stage, steps, config.batch, config.crop, model.preset,
                "all" if widths is None else widths[0])
    for step in range(steps):
        if stage == 1:
            batch = dataset.sample_frames(step, config.batch, config.crop)
        else:
            batch = dataset.sample_pairs(step, config.batch, config.crop)
        row = train_step(model, config, batch, optimizers, step, widths)
        result.trace.append(row)
        if (step + 1) % settings.log_every == 0 or step + 1 == steps:
            logger.info("Stage %d step %d/%d: loss %.6f, rate %.4f bpp, mse %.6f",
                        stage, step + 1, steps, row.loss, row.rate_bpp, row.mse)
    named = model.named_parameters()
    for name, before in frozen.items():
        if not np.array_equal(named[name].data, before):
            raise FormatError(f"frozen parameter {name} changed during stage 2")
    return result


def train_stage1(model: SlimVCModel, config: TrainingConfig, dataset: Dataset) -> TrainingResult:
    """Image-codec stage over single frames."""
    return _train(model, config, dataset, 1, config.steps_stage1)


def train_stage2(model: SlimVCModel, config: TrainingConfig, dataset: Dataset) -> TrainingResult:
    """Temporal stage over frame pairs with the feature transforms frozen."""
    return _train(model, config, dataset, 2, config.steps_stage2)


def evaluate(model: SlimVCModel, frames: Sequence[np.ndarray], k: int, gop: int) -> SequenceMetrics:
    """Real quantization and coded lengths of one sequence at width ``k``."""
    encoder = SequenceEncoder(model, k, gop)
    encoder.encode(frames)
    return encoder.metrics


def compare_intra(model: SlimVCModel, frames: Sequence[np.ndarray], gop: int,
                  widths: Sequence[int] | None = None) -> list[tuple[SequenceMetrics, SequenceMetrics]]:
    """(GOP coding, intra-only coding) metrics per width."""
    widths = range(model.widths) if widths is None else widths
    return [(evaluate(model, frames, k, gop), evaluate(model, frames, k, 1)) for k in widths]


def compare_independent(model: SlimVCModel, independent: Mapping[int, SlimVCModel],
                        frames: Sequence[np.ndarray], gop: int) -> list[tuple[SequenceMetrics, SequenceMetrics]]:
    """(jointly trained, trained at that width alone) metrics per width of ``independent``."""
    pairs = []
    for k, single in sorted(independent.items()):
        model.check_width(k)
        if single.preset != model.preset:
            raise UsageError(f"width {k}: independent model uses preset '{single.preset}', "
                             f"joint model uses '{model.preset}'")
        pairs.append((evaluate(model, frames, k, gop), evaluate(single, frames, k, gop)))
    return pairs


__all__ = [
    "STAGE_MODULES",
    "PRIOR_MODULES",
    "rd_loss",
    "joint_loss",
    "WidthTerm",
    "Adam",
    "TraceRow",
    "TrainingResult",
    "smooth",
    "stage_parameters",
    "stage_optimizers",
    "train_step",
    "train_stage1",
    "train_stage2",
    "evaluate",
    "compare_intra",
    "compare_independent",
]
