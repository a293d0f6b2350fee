"""Convolution-family operations used by the codec networks.

Convolutions accumulate in a fixed order: kernel row, kernel column, input
channel, with one rounding per multiply and per add. The per-position sums are
evaluated with ``np.cumsum`` over a stacked channel axis, which is a strictly
sequential accumulation, so results match a scalar nested loop bit for bit.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, apply

Padding = tuple[int, int, int, int]

# Upper bound on elements materialised per accumulation chunk.
_CHUNK_ELEMENTS = 1 << 22


def same_padding(kernel: int, stride: int, size: int) -> tuple[int, int]:
    """"Same"-style padding; the odd extra row/column goes bottom/right."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def conv_output_size(size: int, kernel: int, stride: int, before: int, after: int) -> int:
    return (size + before + after - kernel) // stride + 1


def transposed_output_size(size: int, kernel: int, stride: int, before: int, after: int,
                           output_padding: int = 0) -> int:
    return (size - 1) * stride + kernel - before - after + output_padding


def _as_padding(padding: int | Sequence[int]) -> Padding:
    if isinstance(padding, int):
        return (padding, padding, padding, padding)
    if len(padding) == 2:
        return (padding[0], padding[0], padding[1], padding[1])
    if len(padding) == 4:
        return tuple(int(p) for p in padding)  # type: ignore[return-value]
    raise ShapeError(f"padding must have 1, 2 or 4 entries, got {padding!r}")


def _chunk(channels: int, per_channel: int) -> int:
    return max(1, min(channels, _CHUNK_ELEMENTS // max(per_channel, 1)))


def _accumulate(acc: np.ndarray, terms: np.ndarray) -> np.ndarray:
    """acc + terms[0] + terms[1] + ..., added strictly left to right.

    ``terms`` is a scratch product and is overwritten.
    """
    terms[0] += acc
    return np.cumsum(terms, axis=0)[-1]


def _check_conv(x: Tensor, w: Tensor, bias: Tensor | None, transposed: bool) -> None:
    name = "transposed_conv2d" if transposed else "conv2d"
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be 4-D [B,C,H,W], got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"{name}: weight must be 4-D, got {w.shape}")
    if x.shape[1] != w.shape[0 if transposed else 1]:
        raise ShapeError(
            f"{name}: input channels {x.shape[1]} do not match weight "
            f"{'dim 0' if transposed else 'dim 1'} = {w.shape[0 if transposed else 1]}"
        )
    out_channels = w.shape[1] if transposed else w.shape[0]
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"{name}: bias shape {bias.shape} does not match {out_channels} output channels")


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | Sequence[int] = 0,
) -> Tensor:
    """Cross-correlation of x [B,Cin,H,W] with w [Cout,Cin,kh,kw]."""
    _check_conv(x, w, bias, transposed=False)
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    top, bottom, left, right = _as_padding(padding)
    batch, cin, height, width = x.shape
    cout, _, kh, kw = w.shape
    if kh > height + top + bottom:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded height {height + top + bottom}")
    if kw > width + left + right:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded width {width + left + right}")
    out_h = conv_output_size(height, kh, stride, top, bottom)
    out_w = conv_output_size(width, kw, stride, left, right)

    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    wd = w.data
    acc = np.zeros((batch, cout, out_h, out_w), dtype=np.result_type(x.data, wd))
    chunk = _chunk(cin, acc.size)
    span_h = (out_h - 1) * stride + 1
    span_w = (out_w - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i:i + span_h:stride, j:j + span_w:stride]
            for start in range(0, cin, chunk):
                stop = min(start + chunk, cin)
                terms = window[:, start:stop, None] * wd[:, start:stop, i, j].T[None, :, :, None, None]
                acc = _accumulate(acc, np.moveaxis(terms, 1, 0))
    out = acc if bias is None else acc + bias.data[None, :, None, None]

    def vjp(g, needs):
        gx = gw = gb = None
        if needs[0]:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(wd[:, :, i, j], g, axes=([0], [1]))
                    gxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += contrib.transpose(1, 0, 2, 3)
            gx = gxp[:, :, top:top + height, left:left + width]
        if needs[1]:
            gw = np.zeros(wd.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    window = xp[:, :, i:i + span_h:stride, j:j + span_w:stride]
                    gw[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and len(needs) > 2 and needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    inputs = (x, w) if bias is None else (x, w, bias)
    return apply("conv2d", inputs, out, vjp, stride=stride, padding=(top, bottom, left, right))


def transposed_conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | Sequence[int] = 0,
    output_padding: int = 0,
) -> Tensor:
    """Scatter-accumulate (gradient of convolution) with w [Cin,Cout,kh,kw]."""
    _check_conv(x, w, bias, transposed=True)
    if stride < 1:
        raise ShapeError(f"transposed_conv2d: stride must be positive, got {stride}")
    top, bottom, left, right = _as_padding(padding)
    batch, cin, height, width = x.shape
    _, cout, kh, kw = w.shape
    full_h = (height - 1) * stride + kh
    full_w = (width - 1) * stride + kw
    out_h = transposed_output_size(height, kh, stride, top, bottom, output_padding)
    out_w = transposed_output_size(width, kw, stride, left, right, output_padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"transposed_conv2d: padding {padding} leaves an empty output")

    xd, wd = x.data, w.data
    full = np.zeros((batch, cout, full_h, full_w), dtype=np.result_type(xd, wd))
    span_h = (height - 1) * stride + 1
    span_w = (width - 1) * stride + 1
    chunk = _chunk(cin, batch * cout * height * width)
    for i in range(kh):
        for j in range(kw):
            region = (slice(None), slice(None), slice(i, i + span_h, stride), slice(j, j + span_w, stride))
            acc = full[region]
            for start in range(0, cin, chunk):
                stop = min(start + chunk, cin)
                terms = xd[:, start:stop, None] * wd[start:stop, :, i, j][None, :, :, None, None]
                acc = _accumulate(acc, np.moveaxis(terms, 1, 0))
            full[region] = acc

    keep_h = min(out_h, full_h - top)
    keep_w = min(out_w, full_w - left)
    out = np.zeros((batch, cout, out_h, out_w), dtype=full.dtype)
    out[:, :, :keep_h, :keep_w] = full[:, :, top:top + keep_h, left:left + keep_w]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g, needs):
        gx = gw = gb = None
        gfull = np.zeros(full.shape, dtype=g.dtype)
        gfull[:, :, top:top + keep_h, left:left + keep_w] = g[:, :, :keep_h, :keep_w]
        if needs[0]:
            gx = np.zeros(xd.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    region = gfull[:, :, i:i + span_h:stride, j:j + span_w:stride]
                    gx += np.tensordot(region, wd[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
        if needs[1]:
            gw = np.zeros(wd.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    region = gfull[:, :, i:i + span_h:stride, j:j + span_w:stride]
                    gw[:, :, i, j] = np.tensordot(xd, region, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and len(needs) > 2 and needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    inputs = (x, w) if bias is None else (x, w, bias)
    return apply("transposed_conv2d", inputs, out, vjp, stride=stride,
                 padding=(top, bottom, left, right), output_padding=output_padding)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """Elementwise max(x, slope·x)."""
    if not 0.0 < slope < 1.0:
        raise ShapeError(f"leaky_relu: slope must lie in (0, 1), got {slope}")
    positive = x.data >= 0
    factor = np.where(positive, x.dtype.type(1), x.dtype.type(slope))
    return apply("leaky_relu", (x,), x.data * factor, lambda g, needs: (g * factor,), slope=slope)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """a occupies channels [0, Ca), b occupies [Ca, Ca+Cb)."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels: expected 4-D tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return apply("concat_channels", (a, b), out,
                 lambda g, needs: (g[:, :split], g[:, split:]), split=split)


def channel_mix(x: Tensor, matrix: Tensor) -> Tensor:
    """y[b,i] = Σ_j matrix[i,j]·x[b,j] at every spatial position."""
    if matrix.ndim != 2 or matrix.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_mix: matrix {matrix.shape} does not act on {x.shape[1]} channels")
    out = np.einsum("ij,bjhw->bihw", matrix.data, x.data)

    def vjp(g, needs):
        gx = np.einsum("ij,bihw->bjhw", matrix.data, g) if needs[0] else None
        gm = np.einsum("bihw,bjhw->ij", g, x.data) if needs[1] else None
        return (gx, gm)

    return apply("channel_mix", (x, matrix), out, vjp)


__all__ = [
    "same_padding",
    "conv_output_size",
    "transposed_output_size",
    "conv2d",
    "transposed_conv2d",
    "leaky_relu",
    "concat_channels",
    "channel_mix",
]
