"""Carry-less 32-bit range coder over 16-bit quantized CDFs.

Integer-only state: ``low`` and ``range`` are 32-bit unsigned values, bytes
are emitted most significant first whenever the top byte of the interval is
settled, and a range that shrinks below 2**16 while straddling a byte
boundary is truncated to the boundary (the carry-less trick), so no carry
ever propagates into bytes already written.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import Sequence

from .errors import FormatError, ShapeError, TruncatedPayloadError

logger = logging.getLogger(__name__)

PRECISION = 16
TOTAL = 1 << PRECISION
RAW_BITS = 16
RAW_MAGNITUDE_MAX = (1 << (RAW_BITS - 1)) - 1

_MASK = 0xFFFFFFFF
_TOP = 1 << 24
_BOTTOM = 1 << 16


@dataclass(frozen=True)
class QuantizedCDF:
    """Cumulative frequencies ``0 = c[0] < c[1] < ... < c[n] = 65536``.

    Symbol index ``i`` stands for the value ``offset + i``; when ``escape`` is
    set it is the last index and carries out-of-table values.
    """

    cumulative: tuple[int, ...]
    offset: int = 0
    escape: int | None = None

    def __post_init__(self) -> None:
        cum = self.cumulative
        if len(cum) < 2 or cum[0] != 0 or cum[-1] != TOTAL:
            raise FormatError(f"CDF must start at 0 and end at {TOTAL}")
        if any(b <= a for a, b in zip(cum, cum[1:])):
            raise FormatError("CDF must be strictly increasing (every frequency >= 1)")
        if self.escape is not None and self.escape != len(cum) - 2:
            raise FormatError("escape symbol must be the last table entry")

    @property
    def size(self) -> int:
        return len(self.cumulative) - 1

    @property
    def regular(self) -> int:
        """Number of in-table (non-escape) symbols."""
        return self.size - (1 if self.escape is not None else 0)

    def frequency(self, index: int) -> int:
        return self.cumulative[index + 1] - self.cumulative[index]

    def frequencies(self) -> list[int]:
        return [b - a for a, b in zip(self.cumulative, self.cumulative[1:])]

    def index_of(self, value: int) -> int | None:
        index = value - self.offset
        if 0 <= index < self.regular:
            return index
        return None

    @property
    def deterministic(self) -> bool:
        return self.size == 1


@dataclass(frozen=True)
class CodedPayload:
    data: bytes
    symbol_count: int

    def __len__(self) -> int:
        return len(self.data)

    @property
    def bits(self) -> int:
        return 8 * len(self.data)


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK
        self._out = bytearray()

    def _shift(self) -> None:
        self._out.append(self.low >> 24)
        self.low = (self.low << 8) & _MASK
        self.range = (self.range << 8) & _MASK

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                self._shift()
            elif self.range < _BOTTOM:
                self.range = (-self.low) & (_BOTTOM - 1)
                self._shift()
            else:
                return

    def encode(self, cumulative: int, frequency: int) -> None:
        step = self.range // TOTAL
        self.low += cumulative * step
        self.range = step * frequency
        self._normalize()

    def encode_raw(self, value: int) -> None:
        """Encode a 16-bit literal with uniform probability."""
        self.encode(value, 1)

    def finish(self) -> bytes:
        for _ in range(4):
            self._out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._position = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    @property
    def position(self) -> int:
        return self._position

    def _next_byte(self) -> int:
        if self._position >= len(self._data):
            raise TruncatedPayloadError(
                f"payload truncated after {len(self._data)} bytes"
            )
        byte = self._data[self._position]
        self._position += 1
        return byte

    def _shift(self) -> None:
        self.code = ((self.code << 8) | self._next_byte()) & _MASK
        self.low = (self.low << 8) & _MASK
        self.range = (self.range << 8) & _MASK

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                self._shift()
            elif self.range < _BOTTOM:
                self.range = (-self.low) & (_BOTTOM - 1)
                self._shift()
            else:
                return

    def _target(self) -> tuple[int, int]:
        step = self.range // TOTAL
        offset = self.code - self.low
        if offset < 0 or step == 0:
            raise FormatError("corrupt payload: code left the coding interval")
        target = offset // step
        if target >= TOTAL:
            raise FormatError("corrupt payload: cumulative target out of range")
        return step, target

    def decode(self, cumulative: Sequence[int]) -> int:
        step, target = self._target()
        index = bisect.bisect_right(cumulative, target) - 1
        self.low += cumulative[index] * step
        self.range = step * (cumulative[index + 1] - cumulative[index])
        self._normalize()
        return index

    def decode_raw(self) -> int:
        step, target = self._target()
        self.low += target * step
        self.range = step
        self._normalize()
        return target


def _to_raw(value: int) -> int:
    magnitude = abs(value)
    if magnitude > RAW_MAGNITUDE_MAX:
        raise FormatError(f"value {value} exceeds the {RAW_BITS}-bit escape range")
    return (1 << (RAW_BITS - 1) if value < 0 else 0) | magnitude


def _from_raw(raw: int) -> int:
    magnitude = raw & RAW_MAGNITUDE_MAX
    return -magnitude if raw >> (RAW_BITS - 1) else magnitude


def encode_symbols(symbols: Sequence[int], cdfs: Sequence[QuantizedCDF]) -> CodedPayload:
    """Range-code ``symbols[i]`` under ``cdfs[i]``.

    Values outside a table are sent as the escape symbol followed by a raw
    16-bit sign-magnitude literal. Single-symbol tables carry no information
    and do not touch the coder state.
    """
    if len(symbols) != len(cdfs):
        raise ShapeError(f"{len(symbols)} symbols but {len(cdfs)} CDFs")
    encoder = RangeEncoder()
    escapes = 0
    for value, cdf in zip(symbols, cdfs):
        value = int(value)
        index = cdf.index_of(value)
        if index is None:
            if cdf.escape is None:
                raise FormatError(
                    f"symbol {value} outside table [{cdf.offset}, {cdf.offset + cdf.regular - 1}] "
                    "and no escape symbol"
                )
            escapes += 1
            encoder.encode(cdf.cumulative[cdf.escape], cdf.frequency(cdf.escape))
            encoder.encode_raw(_to_raw(value))
        elif not cdf.deterministic:
            encoder.encode(cdf.cumulative[index], cdf.frequency(index))
    data = encoder.finish()
    if escapes:
        logger.debug("Encoded %d symbols with %d escapes into %d bytes", len(symbols), escapes, len(data))
    return CodedPayload(data, len(symbols))


def decode_symbols(payload: CodedPayload, cdfs: Sequence[QuantizedCDF]) -> list[int]:
    """Exact inverse of :func:`encode_symbols` for the same CDF sequence."""
    if payload.symbol_count != len(cdfs):
        raise ShapeError(f"payload holds {payload.symbol_count} symbols but {len(cdfs)} CDFs given")
    decoder = RangeDecoder(payload.data)
    symbols: list[int] = []
    for cdf in cdfs:
        if cdf.deterministic:
            symbols.append(cdf.offset)
            continue
        index = decoder.decode(cdf.cumulative)
        if index == cdf.escape:
            symbols.append(_from_raw(decoder.decode_raw()))
        else:
            symbols.append(cdf.offset + index)
    if decoder.position != len(payload.data):
        raise FormatError(
            f"payload has {len(payload.data) - decoder.position} unread trailing bytes"
        )
    return symbols


__all__ = [
    "PRECISION",
    "TOTAL",
    "QuantizedCDF",
    "CodedPayload",
    "RangeEncoder",
    "RangeDecoder",
    "encode_symbols",
    "decode_symbols",
]
