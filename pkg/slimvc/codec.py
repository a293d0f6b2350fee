"""The slimmable video codec: model graph, frame coding and GOP sequencing.

Intra frames code the quantized latent under the switchable factorized
prior. Inter frames send a hyper-latent computed from the pair of quantized
latents and then only the residual ``ẑ_t − ẑ_{t−1}``, coded under a Gaussian
whose parameters fuse the hyper-decoder output with the temporal prior of
the previous latent. Encoder and decoder derive these parameters from the
same integer tensors, so they agree bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .bitstream import BitstreamContainer, FrameRecord, FrameType
from .channels import MODULES, ChannelTable, build_channel_table, preset_name
from .entropy import (
    DistributionParams,
    FactorizedDensity,
    count_escapes,
    factorized_cdfs,
    gaussian_cdfs,
    likelihood_factorized,
    likelihood_gaussian,
    quantize_infer,
    rate_bits,
    scale_from_raw,
)
from .errors import FormatError, NumericalError, ShapeError, UsageError
from .frames import FRAME_GRID, crop_frame, mse, pad_frame, psnr
from .models import FrameMetrics, SequenceMetrics
from .ops import concat_channels
from .rangecoder import CodedPayload, QuantizedCDF, decode_symbols, encode_symbols
from .slim import SlimStack
from .tensor import ComputeGraph, Parameter, Tensor, channel_split, clip, sub

logger = logging.getLogger(__name__)

PRIORS: tuple[str, ...] = ("latent_prior", "hyper_prior")


def _downsampled(size: int, strides: Sequence[int]) -> int:
    for stride in strides:
        size = math.ceil(size / stride)
    return size


def _ensure_finite(t: Tensor, module: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite activations in {module}", module=module)
    return t


class SlimVCModel:
    """Six slimmable modules plus the switchable latent and hyper priors."""

    def __init__(self, preset: str = "desk", seed: int = 0, table: ChannelTable | None = None):
        self.table = table or build_channel_table(preset)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.fe = SlimStack("fe", self.table.layers("fe"), rng)
        self.fd = SlimStack("fd", self.table.layers("fd"), rng)
        self.he = SlimStack("he", self.table.layers("he"), rng)
        self.hd = SlimStack("hd", self.table.layers("hd"), rng)
        self.tpm = SlimStack("tpm", self.table.layers("tpm"), rng)
        self.epm = SlimStack("epm", self.table.layers("epm"), rng)
        self.latent_prior = FactorizedDensity("latent_prior", self.table.latent, rng)
        self.hyper_prior = FactorizedDensity("hyper_prior", self.table.hyper, rng)
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise FormatError("duplicate parameter names in model")

    @property
    def preset(self) -> str:
        return self.table.preset

    @property
    def preset_id(self) -> int:
        return self.table.preset_id

    @property
    def widths(self) -> int:
        return self.table.widths.count

    def width_factor(self, k: int) -> float:
        return self.table.widths.factor(k)

    def check_width(self, k: int) -> int:
        if not 0 <= k < self.widths:
            raise UsageError(f"width index {k} out of range [0, {self.widths - 1}]")
        return k

    def module(self, name: str) -> SlimStack | FactorizedDensity:
        if name not in (*MODULES, *PRIORS):
            raise UsageError(f"unknown module '{name}'")
        return getattr(self, name)

    def module_parameters(self, name: str) -> list[Parameter]:
        return self.module(name).parameters()

    def parameters(self) -> list[Parameter]:
        return [p for name in (*MODULES, *PRIORS) for p in self.module_parameters(name)]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def latent_shape(self, height: int, width: int, k: int) -> tuple[int, int, int]:
        """(channels, height, width) of the latent for a padded frame size."""
        strides = [layer.stride for layer in self.table.layers("fe") if layer.kind.is_conv]
        return (self.table.latent[self.check_width(k)],
                _downsampled(height, strides), _downsampled(width, strides))

    def hyper_shape(self, height: int, width: int, k: int) -> tuple[int, int, int]:
        _, latent_h, latent_w = self.latent_shape(height, width, k)
        strides = [layer.stride for layer in self.table.layers("he") if layer.kind.is_conv]
        return (self.table.hyper[k], _downsampled(latent_h, strides), _downsampled(latent_w, strides))

    # Forward transforms. ``graph`` is given during training only.

    def analyze(self, x: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"analyze: expected [B, 3, H, W] frames, got shape {x.shape}")
        if x.shape[2] % FRAME_GRID or x.shape[3] % FRAME_GRID:
            raise ShapeError(
                f"analyze: frame size {x.shape[3]}x{x.shape[2]} is not padded to multiples of {FRAME_GRID}"
            )
        return _ensure_finite(self.fe(x, k, graph), "fe")

    def synthesize(self, z_hat: Tensor, k: int, graph: ComputeGraph | None = None,
                   clamp: bool = True) -> Tensor:
        x_hat = _ensure_finite(self.fd(z_hat, k, graph), "fd")
        return clip(x_hat, 0.0, 1.0) if clamp else x_hat

    def hyper_encode(self, z_t: Tensor, z_prev: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        if z_t.shape != z_prev.shape:
            raise ShapeError(f"hyper_encode: latents {z_t.shape} and {z_prev.shape} differ")
        return _ensure_finite(self.he(concat_channels(z_t, z_prev), k, graph), "he")

    def hyper_decode(self, h_hat: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        return _ensure_finite(self.hd(h_hat, k, graph), "hd")

    def temporal_prior(self, z_prev: Tensor, k: int, graph: ComputeGraph | None = None) -> Tensor:
        return _ensure_finite(self.tpm(z_prev, k, graph), "tpm")

    def entropy_params(self, hd_features: Tensor, tpm_features: Tensor, k: int,
                       graph: ComputeGraph | None = None) -> DistributionParams:
        if hd_features.shape[2:] != tpm_features.shape[2:]:
            raise ShapeError(
                f"entropy_params: HD features {hd_features.shape} and TPM features "
                f"{tpm_features.shape} differ spatially"
            )
        fused = _ensure_finite(self.epm(concat_channels(hd_features, tpm_features), k, graph), "epm")
        mean, raw_scale = channel_split(fused, self.table.latent[k])
        return DistributionParams(mean, scale_from_raw(raw_scale))

    def inter_params(self, h_hat: Tensor, z_prev: Tensor, k: int,
                     graph: ComputeGraph | None = None) -> DistributionParams:
        """Residual distribution from the hyper-latent and the previous latent."""
        return self.entropy_params(self.hyper_decode(h_hat, k, graph),
                                   self.temporal_prior(z_prev, k, graph), k, graph)


@dataclass
class FrameState:
    """Previous quantized latent of the running GOP (absent at a GOP start)."""

    latent: np.ndarray | None = None
    width: int | None = None

    @property
    def is_reset(self) -> bool:
        return self.latent is None


class EncodedFrame(NamedTuple):
    record: FrameRecord
    state: FrameState
    metrics: FrameMetrics
    reconstruction: np.ndarray


def _channel_tables(tables: list[QuantizedCDF], spatial: int) -> list[QuantizedCDF]:
    """Repeat one table per channel over the channel's positions (C-order)."""
    return [table for table in tables for _ in range(spatial)]


def _symbols(t: Tensor) -> list[int]:
    return t.data.astype(np.int64).ravel().tolist()


def _check_state(state: FrameState, k: int, shape: tuple[int, ...]) -> np.ndarray:
    if state.width != k:
        raise ShapeError(f"frame state was built at width {state.width}, coding at width {k}")
    if state.latent.shape != shape:
        raise ShapeError(f"previous latent {state.latent.shape} does not match {shape}")
    return state.latent


def encode_frame(x: np.ndarray, state: FrameState, k: int, model: SlimVCModel,
                 index: int = 0, true_size: tuple[int, int] | None = None) -> EncodedFrame:
    """Code one padded [3, H, W] frame; intra when ``state`` is reset."""
    model.check_width(k)
    frame = Tensor(np.asarray(x, dtype=np.float32)[None])
    z_hat = quantize_infer(model.analyze(frame, k))

    if state.is_reset:
        frame_type = FrameType.INTRA
        _, channels, height, width = z_hat.shape
        cdfs = _channel_tables(factorized_cdfs(model.latent_prior, k), height * width)
        main = encode_symbols(_symbols(z_hat), cdfs)
        hyper_data = b""
        estimate = rate_bits(likelihood_factorized(z_hat, model.latent_prior, k)).data.item()
        escapes = count_escapes(z_hat.data)
    else:
        frame_type = FrameType.INTER
        z_prev = Tensor(_check_state(state, k, z_hat.shape))
        h_hat = quantize_infer(model.hyper_encode(z_hat, z_prev, k))
        _, hyper_channels, hyper_h, hyper_w = h_hat.shape
        hyper_cdfs = _channel_tables(factorized_cdfs(model.hyper_prior, k), hyper_h * hyper_w)
        hyper = encode_symbols(_symbols(h_hat), hyper_cdfs)
        params = model.inter_params(h_hat, z_prev, k)
        residual = sub(z_hat, z_prev)
        main = encode_symbols(_symbols(residual), gaussian_cdfs(params))
        hyper_data = hyper.data
        estimate = (rate_bits(likelihood_factorized(h_hat, model.hyper_prior, k)).data.item()
                         + rate_bits(likelihood_gaussian(residual, params)).data.item())
        escapes = count_escapes(residual.data) + count_escapes(h_hat.data)

    record = FrameRecord(frame_type, hyper_data, main.data)
    reconstruction = model.synthesize(z_hat, k).data[0]
    source = np.asarray(x, dtype=np.float32)
    if true_size is not None:
        reconstruction = crop_frame(reconstruction, *true_size)
        source = crop_frame(source, *true_size)
    error = mse(source, reconstruction)
    metrics = FrameMetrics(
        frame=index,
        frame_type="intra" if frame_type is FrameType.INTRA else "inter",
        bits_hyper=8 * len(hyper_data),
        bits_main=main.bits,
        pixels=source.shape[1] * source.shape[2],
        mse=error,
        psnr=psnr(error),
        estimated_bits=estimate,
    )
    logger.debug("Frame %d %s at width %d: %d hyper + %d main bits (%.1f estimated, %d escapes)",
                 index, metrics.frame_type, k, metrics.bits_hyper, metrics.bits_main, estimate, escapes)
    return EncodedFrame(record, FrameState(z_hat.data.copy(), k), metrics, reconstruction)


def _decode_at_width(data: bytes, cdfs: list[QuantizedCDF], k: int, part: str) -> list[int]:
    """Payloads carry no width; one coded at another width fails to terminate cleanly."""
    try:
        return decode_symbols(CodedPayload(data, len(cdfs)), cdfs)
    except FormatError as exc:
        raise FormatError(f"{part} payload does not match width index {k}: {exc.message}") from exc


def decode_frame(record: FrameRecord, state: FrameState, k: int, model: SlimVCModel,
                 padded_size: tuple[int, int], true_size: tuple[int, int] | None = None,
                 ) -> tuple[np.ndarray, FrameState]:
    """Inverse of :func:`encode_frame` for a frame of the given padded (H, W)."""
    model.check_width(k)
    shape = (1, *model.latent_shape(*padded_size, k))
    channels, height, width = shape[1:]

    if record.frame_type is FrameType.INTRA:
        cdfs = _channel_tables(factorized_cdfs(model.latent_prior, k), height * width)
        symbols = _decode_at_width(record.main, cdfs, k, "intra")
        z_hat = np.asarray(symbols, dtype=np.float32).reshape(shape)
    else:
        if state.is_reset:
            raise FormatError("inter frame without a previous latent")
        z_prev = Tensor(_check_state(state, k, shape))
        hyper_shape = (1, *model.hyper_shape(*padded_size, k))
        hyper_cdfs = _channel_tables(factorized_cdfs(model.hyper_prior, k),
                                     hyper_shape[2] * hyper_shape[3])
        h_symbols = _decode_at_width(record.hyper, hyper_cdfs, k, "hyper")
        h_hat = Tensor(np.asarray(h_symbols, dtype=np.float32).reshape(hyper_shape))
        cdfs = gaussian_cdfs(model.inter_params(h_hat, z_prev, k))
        symbols = _decode_at_width(record.main, cdfs, k, "residual")
        residual = np.asarray(symbols, dtype=np.float32).reshape(shape)
        z_hat = residual + z_prev.data

    reconstruction = model.synthesize(Tensor(z_hat), k).data[0]
    if true_size is not None:
        reconstruction = crop_frame(reconstruction, *true_size)
    return reconstruction, FrameState(z_hat, k)


@dataclass
class SequenceEncoder:
    """One encode session: owns its frame state, keeps per-frame results."""

    model: SlimVCModel
    width_index: int
    gop_size: int
    metrics: SequenceMetrics | None = None
    reconstructions: list[np.ndarray] = field(default_factory=list)
    latents: list[np.ndarray] = field(default_factory=list)

    def encode(self, frames: Sequence[np.ndarray]) -> BitstreamContainer:
        k = self.model.check_width(self.width_index)
        if self.gop_size < 1:
            raise UsageError(f"gop size must be at least 1, got {self.gop_size}")
        if not frames:
            raise UsageError("cannot encode an empty sequence")
        shape = frames[0].shape
        if len(shape) != 3 or shape[0] != 3:
            raise ShapeError(f"expected [3, H, W] frames, got shape {shape}")
        for index, frame in enumerate(frames):
            if frame.shape != shape:
                raise ShapeError(f"frame {index} has shape {frame.shape}, expected {shape}")

        true_size = (shape[1], shape[2])
        container = None
        state = FrameState()
        self.metrics = SequenceMetrics(width_index=k, width_factor=self.model.width_factor(k),
                                       gop=self.gop_size)
        self.reconstructions.clear()
        self.latents.clear()
        records = []
        for index, frame in enumerate(frames):
            if index % self.gop_size == 0:
                state = FrameState()
            padded = pad_frame(frame)
            if container is None:
                container = BitstreamContainer(
                    width_index=k,
                    gop_size=self.gop_size,
                    padded_width=padded.shape[2],
                    padded_height=padded.shape[1],
                    true_width=true_size[1],
                    true_height=true_size[0],
                    preset_id=self.model.preset_id,
                )
            encoded = encode_frame(padded, state, k, self.model, index=index, true_size=true_size)
            state = encoded.state
            records.append(encoded.record)
            self.metrics.frames.append(encoded.metrics)
            self.reconstructions.append(encoded.reconstruction)
            self.latents.append(state.latent)
        container.frames = records
        logger.info("Encoded %d frames at width %d (gop %d): %.4f bpp, %.2f dB",
                    len(records), k, self.gop_size, self.metrics.bpp, self.metrics.psnr)
        return container


def encode_sequence(frames: Sequence[np.ndarray], k: int, gop_size: int,
                    model: SlimVCModel) -> BitstreamContainer:
    """Frame t is intra iff t mod gop_size == 0."""
    return SequenceEncoder(model, k, gop_size).encode(frames)


@dataclass
class SequenceDecoder:
    model: SlimVCModel
    latents: list[np.ndarray] = field(default_factory=list)

    def check(self, container: BitstreamContainer) -> int:
        if container.preset_id != self.model.preset_id:
            raise FormatError(
                f"container was coded with preset '{preset_name(container.preset_id)}', "
                f"model uses '{self.model.preset}'"
            )
        if not 0 <= container.width_index < self.model.widths:
            raise FormatError(f"container width index {container.width_index} out of range")
        if container.padded_width % FRAME_GRID or container.padded_height % FRAME_GRID:
            raise FormatError("container padded size is not a multiple of the frame grid")
        return container.width_index

    def decode(self, container: BitstreamContainer) -> list[np.ndarray]:
        k = self.check(container)
        padded = (container.padded_height, container.padded_width)
        true_size = (container.true_height, container.true_width)
        state = FrameState()
        frames = []
        self.latents.clear()
        for index, record in enumerate(container.frames):
            if index % container.gop_size == 0:
                if record.frame_type is not FrameType.INTRA:
                    raise FormatError(f"frame {index} opens a GOP but is not intra")
                state = FrameState()
            frame, state = decode_frame(record, state, k, self.model, padded, true_size)
            frames.append(frame)
            self.latents.append(state.latent)
        logger.info("Decoded %d frames at width %d", len(frames), k)
        return frames


def decode_sequence(container: BitstreamContainer, model: SlimVCModel) -> list[np.ndarray]:
    return SequenceDecoder(model).decode(container)


__all__ = [
    "SlimVCModel",
    "FrameState",
    "EncodedFrame",
    "encode_frame",
    "decode_frame",
    "SequenceEncoder",
    "SequenceDecoder",
    "encode_sequence",
    "decode_sequence",
]
