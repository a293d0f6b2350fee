"""Binary container for coded sequences.

Layout (all multi-byte integers little-endian)::

    header  magic "SVC1" | version u8 | width index u8 | gop size u8 | flags u8
            | padded width u16 | padded height u16 | true width u16 | true height u16
            | frame count u32 | preset id u8
    frame   type u8 (0 intra, 1 inter) | hyper length u32 | main length u32
            | hyper payload | main payload

Intra frames carry an empty hyper payload. The flags byte is reserved (0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import FormatError, TruncatedPayloadError

MAGIC = b"SVC1"
VERSION = 1
HEADER = struct.Struct("<4sBBBBHHHHIB")
FRAME = struct.Struct("<BII")


class FrameType(IntEnum):
    INTRA = 0
    INTER = 1


@dataclass(frozen=True)
class FrameRecord:
    frame_type: FrameType
    hyper: bytes = b""
    main: bytes = b""

    @property
    def bits(self) -> int:
        return 8 * (len(self.hyper) + len(self.main))


@dataclass
class BitstreamContainer:
    width_index: int
    gop_size: int
    padded_width: int
    padded_height: int
    true_width: int
    true_height: int
    preset_id: int
    frames: list[FrameRecord] = field(default_factory=list)
    version: int = VERSION
    flags: int = 0

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def to_bytes(self) -> bytes:
        for name, value, limit in (
            ("width index", self.width_index, 0xFF),
            ("gop size", self.gop_size, 0xFF),
            ("padded width", self.padded_width, 0xFFFF),
            ("padded height", self.padded_height, 0xFFFF),
            ("true width", self.true_width, 0xFFFF),
            ("true height", self.true_height, 0xFFFF),
        ):
            if not 0 <= value <= limit:
                raise FormatError(f"{name} {value} does not fit the container header")
        parts = [HEADER.pack(
            MAGIC, self.version, self.width_index, self.gop_size, self.flags,
            self.padded_width, self.padded_height, self.true_width, self.true_height,
            self.frame_count, self.preset_id,
        )]
        for record in self.frames:
            parts.append(FRAME.pack(int(record.frame_type), len(record.hyper), len(record.main)))
            parts.append(record.hyper)
            parts.append(record.main)
        return b"".join(parts)

    @classmethod
    def read_header(cls, data: bytes) -> "BitstreamContainer":
        """Parse and validate only the fixed header."""
        if len(data) < HEADER.size:
            raise TruncatedPayloadError(f"container shorter than its {HEADER.size}-byte header")
        (magic, version, width_index, gop_size, flags, padded_width, padded_height,
         true_width, true_height, _, preset_id) = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if flags != 0:
            raise FormatError(f"unsupported container flags 0x{flags:02x}")
        if gop_size < 1:
            raise FormatError("gop size must be at least 1")
        if true_width > padded_width or true_height > padded_height:
            raise FormatError("true frame size exceeds padded size")
        return cls(width_index, gop_size, padded_width, padded_height, true_width, true_height,
                   preset_id, version=version, flags=flags)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamContainer":
        container = cls.read_header(data)
        frame_count = HEADER.unpack_from(data, 0)[9]
        offset = HEADER.size
        for index in range(frame_count):
            if offset + FRAME.size > len(data):
                raise TruncatedPayloadError(f"container truncated in frame {index} record")
            frame_type, hyper_length, main_length = FRAME.unpack_from(data, offset)
            offset += FRAME.size
            try:
                kind = FrameType(frame_type)
            except ValueError:
                raise FormatError(f"frame {index}: unknown frame type {frame_type}") from None
            if kind is FrameType.INTRA and hyper_length:
                raise FormatError(f"frame {index}: intra frame with a hyper payload")
            end = offset + hyper_length + main_length
            if end > len(data):
                raise TruncatedPayloadError(f"container truncated in frame {index} payload")
            container.frames.append(FrameRecord(
                kind, data[offset:offset + hyper_length], data[offset + hyper_length:end],
            ))
            offset = end
        if offset != len(data):
            raise FormatError(f"{len(data) - offset} trailing bytes after the last frame")
        return container


__all__ = ["MAGIC", "VERSION", "FrameType", "FrameRecord", "BitstreamContainer"]
