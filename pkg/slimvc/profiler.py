"""Closed-form parameter, MAC and memory accounting, plus wall-clock latency.

Counting convention:

* parameters: kh·kw·Cin·Cout per (transposed) convolution, C² + C per GDN,
  biases excluded;
* MACs: output positions · kh·kw·Cin·Cout per convolution, input positions ·
  kh·kw·Cin·Cout per transposed convolution, positions · (C² + 2C) per GDN,
  nothing for leaky ReLUs. One FLOP is one MAC.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channels import MODULE_TITLES, MODULES, ChannelTable, LayerKind, LayerSpec, build_channel_table
from .codec import FrameState, SlimVCModel, decode_frame, encode_frame
from .config import settings
from .datasets import SyntheticDataset
from .errors import ShapeError, UsageError
from .frames import pad_frame
from .models import CostReport, CostRow

ENCODE_MODULES: tuple[str, ...] = ("fe", "he", "hd", "tpm", "epm")
DECODE_MODULES: tuple[str, ...] = ("fd", "hd", "tpm", "epm")
BYTES_PER_PARAM = 4
MAC_GRID = 12
CSV_HEADER = ("module", "width_factor", "params", "param_bytes", "macs_encode", "macs_decode")


def layer_params(layer: LayerSpec, k: int) -> int:
    cin, cout = layer.channels(k)
    if layer.kind.is_conv:
        return layer.kernel * layer.kernel * cin * cout
    if layer.kind.is_gdn:
        return cout * cout + cout
    return 0


def layer_macs(layer: LayerSpec, k: int, height: int, width: int) -> tuple[int, int, int]:
    """(MACs, output height, output width) of one layer on an input of the given size."""
    cin, cout = layer.channels(k)
    per_position = layer.kernel * layer.kernel * cin * cout
    if layer.kind is LayerKind.CONV:
        out_h, out_w = math.ceil(height / layer.stride), math.ceil(width / layer.stride)
        return out_h * out_w * per_position, out_h, out_w
    if layer.kind is LayerKind.DECONV:
        return height * width * per_position, height * layer.stride, width * layer.stride
    if layer.kind.is_gdn:
        return height * width * (cout * cout + 2 * cout), height, width
    return 0, height, width


def count_params(table: ChannelTable, module: str, k: int) -> int:
    table.widths.check(k)
    return sum(layer_params(layer, k) for layer in table.layers(module))


def _input_size(table: ChannelTable, module: str, height: int, width: int) -> tuple[int, int]:
    """Spatial size a module consumes for a frame of the given size."""
    def through(stack: str, h: int, w: int) -> tuple[int, int]:
        for layer in table.layers(stack):
            _, h, w = layer_macs(layer, 0, h, w)
        return h, w

    if module == "fe":
        return height, width
    latent = through("fe", height, width)
    if module == "hd":
        return through("he", *latent)
    return latent


def count_macs(table: ChannelTable, module: str, k: int, height: int, width: int) -> int:
    """MACs of one module at width ``k`` for a frame of ``width``×``height``."""
    table.widths.check(k)
    if height <= 0 or width <= 0 or height % MAC_GRID or width % MAC_GRID:
        raise ShapeError(f"resolution {width}x{height} is not a multiple of {MAC_GRID}")
    h, w = _input_size(table, module, height, width)
    total = 0
    for layer in table.layers(module):
        macs, h, w = layer_macs(layer, k, h, w)
        total += macs
    return total


@dataclass
class MemoryReport:
    width_index: int
    module_bytes: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.module_bytes.values())

    @property
    def largest(self) -> str:
        return max(self.module_bytes, key=self.module_bytes.__getitem__)


def memory_report(table: ChannelTable, k: int) -> MemoryReport:
    """Parameter memory (float32) per module at width ``k``."""
    return MemoryReport(k, {m: count_params(table, m, k) * BYTES_PER_PARAM for m in MODULES})


def parse_resolution(text: str) -> tuple[int, int]:
    """'WxH' to (width, height)."""
    try:
        width, height = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"resolution must look like WIDTHxHEIGHT, got '{text}'") from None
    if width <= 0 or height <= 0:
        raise UsageError(f"resolution must be positive, got '{text}'")
    return width, height


def cost_report(preset: str, width: int, height: int) -> CostReport:
    table = build_channel_table(preset)
    report = CostReport(preset=preset, width=width, height=height)
    for k in range(table.widths.count):
        for module in MODULES:
            params = count_params(table, module, k)
            macs = count_macs(table, module, k, height, width)
            report.rows.append(CostRow(
                module=module,
                width_index=k,
                width_factor=table.widths.factor(k),
                params=params,
                param_bytes=params * BYTES_PER_PARAM,
                macs_encode=macs if module in ENCODE_MODULES else 0,
                macs_decode=macs if module in DECODE_MODULES else 0,
            ))
    return report


def encode_ratio(report: CostReport) -> float:
    """Encoding MACs at the smallest width over the largest."""
    widths = sorted({row.width_index for row in report.rows})
    return report.total_macs_encode(widths[0]) / report.total_macs_encode(widths[-1])


def report_csv(report: CostReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        writer.writerow([row.module, row.width_factor, row.params, row.param_bytes,
                         row.macs_encode, row.macs_decode])
    return buffer.getvalue()


def report_table(report: CostReport) -> str:
    """Aligned plain-text table: params in millions, MACs in G, per module and width."""
    header = ["module", "width", "params (M)", "memory (MB)", "enc GMACs", "dec GMACs"]
    lines = []
    widths = sorted({row.width_index for row in report.rows})
    for k in widths:
        rows = report.for_width(k)
        for row in rows:
            lines.append([MODULE_TITLES[row.module], f"{row.width_factor:g}", f"{row.params / 1e6:.1f}",
                          f"{row.param_bytes / 2**20:.2f}", f"{row.macs_encode / 1e9:.1f}",
                          f"{row.macs_decode / 1e9:.1f}"])
        lines.append(["total", f"{rows[0].width_factor:g}", f"{report.total_params(k) / 1e6:.1f}",
                      f"{sum(r.param_bytes for r in rows) / 2**20:.2f}",
                      f"{report.total_macs_encode(k) / 1e9:.1f}",
                      f"{report.total_macs_decode(k) / 1e9:.1f}"])
    columns = [max(len(str(cell)) for cell in column) for column in zip(header, *lines)]
    out = ["  ".join(cell.rjust(size) for cell, size in zip(header, columns))]
    out.extend("  ".join(cell.rjust(size) for cell, size in zip(line, columns)) for line in lines)
    out.append(f"encode MACs ratio (smallest/largest width): {encode_ratio(report):.3f}")
    return "\n".join(out) + "\n"


@dataclass
class LatencyReport:
    width_index: int
    encode_seconds: float
    decode_seconds: float
    macs_encode: int
    macs_decode: int


def bench_latency(model: SlimVCModel, k: int, frames: int | None = None,
                  resolution: tuple[int, int] = (48, 48), warmup: int | None = None,
                  seed: int = 0) -> LatencyReport:
    """Median per-frame encode and decode seconds over an intra-led GOP."""
    frames = settings.bench_frames if frames is None else frames
    warmup = settings.bench_warmup if warmup is None else warmup
    if frames < 1 or warmup < 0:
        raise UsageError("benchmark needs at least one frame and a non-negative warmup")
    width, height = resolution
    clip = SyntheticDataset("translate", seed=seed).clip(height, width, length=warmup + frames)
    padded = [pad_frame(frame) for frame in clip]
    size = (padded[0].shape[1], padded[0].shape[2])

    encode_times, decode_times = [], []
    encoder_state, decoder_state = FrameState(), FrameState()
    for index, frame in enumerate(padded):
        start = time.perf_counter()
        encoded = encode_frame(frame, encoder_state, k, model, index=index)
        middle = time.perf_counter()
        _, decoder_state = decode_frame(encoded.record, decoder_state, k, model, size)
        end = time.perf_counter()
        encoder_state = encoded.state
        if index >= warmup:
            encode_times.append(middle - start)
            decode_times.append(end - middle)

    table = model.table
    grid_h, grid_w = size
    return LatencyReport(
        width_index=k,
        encode_seconds=float(np.median(encode_times)),
        decode_seconds=float(np.median(decode_times)),
        macs_encode=sum(count_macs(table, m, k, grid_h, grid_w) for m in ENCODE_MODULES),
        macs_decode=sum(count_macs(table, m, k, grid_h, grid_w) for m in DECODE_MODULES),
    )


__all__ = [
    "ENCODE_MODULES",
    "DECODE_MODULES",
    "layer_params",
    "layer_macs",
    "count_params",
    "count_macs",
    "MemoryReport",
    "memory_report",
    "parse_resolution",
    "cost_report",
    "encode_ratio",
    "report_csv",
    "report_table",
    "LatencyReport",
    "bench_latency",
]
