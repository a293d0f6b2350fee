"""Checkpoint files: every named model parameter as raw little-endian float32.

Layout::

    magic "SVCW" | version u8 | preset id u8 | entry count u32
    entry        name length u16 | UTF-8 name | rank u8 | dims u32 × rank | float32 data
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .channels import preset_name
from .codec import SlimVCModel
from .errors import FormatError, StorageError, TruncatedPayloadError

logger = logging.getLogger(__name__)

MAGIC = b"SVCW"
VERSION = 1
_HEADER = struct.Struct("<4sBBI")
_DTYPE = np.dtype("<f4")


def checkpoint_bytes(model: SlimVCModel) -> bytes:
    params = model.parameters()
    parts = [_HEADER.pack(MAGIC, VERSION, model.preset_id, len(params))]
    for param in params:
        name = param.name.encode("utf-8")
        data = np.ascontiguousarray(param.data, dtype=_DTYPE)
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack(f"<B{data.ndim}I", data.ndim, *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise TruncatedPayloadError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_entries(data: bytes) -> tuple[int, dict[str, np.ndarray]]:
    """Preset id and named arrays of a serialized checkpoint."""
    reader = _Reader(data)
    magic, version, preset_id, count = reader.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.unpack("<H")
        try:
            name = reader.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("checkpoint entry name is not valid UTF-8") from None
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * _DTYPE.itemsize)
        if name in entries:
            raise FormatError(f"duplicate checkpoint entry '{name}'")
        entries[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float32)
    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} trailing bytes in checkpoint")
    return preset_id, entries


def restore(model: SlimVCModel, data: bytes) -> SlimVCModel:
    """Copy checkpoint values into ``model`` after validating every shape."""
    preset_id, entries = read_entries(data)
    if preset_id != model.preset_id:
        raise FormatError(
            f"checkpoint preset '{preset_name(preset_id)}' does not match model preset '{model.preset}'"
        )
    params = model.named_parameters()
    missing = sorted(set(params) - set(entries))
    unknown = sorted(set(entries) - set(params))
    if missing or unknown:
        raise FormatError(
            "checkpoint does not match the model",
            detail=f"missing: {', '.join(missing[:5]) or '-'}; unknown: {', '.join(unknown[:5]) or '-'}",
        )
    for name, value in entries.items():
        if value.shape != params[name].shape:
            raise FormatError(f"checkpoint entry '{name}' has shape {value.shape}, "
                              f"model expects {params[name].shape}")
    for name, value in entries.items():
        params[name].data = value
    return model


def save_checkpoint(model: SlimVCModel, path: Path | str) -> None:
    data = checkpoint_bytes(model)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc
    logger.info("Saved %d parameters (%d bytes) to %s", len(model.parameters()), len(data), path)


def load_checkpoint(path: Path | str, model: SlimVCModel | None = None) -> SlimVCModel:
    """Load into ``model``, or into a fresh model of the checkpoint's preset."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    if model is None:
        preset_id, _ = read_entries(data)
        model = SlimVCModel(preset_name(preset_id))
    return restore(model, data)


__all__ = ["MAGIC", "VERSION", "checkpoint_bytes", "read_entries", "restore",
           "save_checkpoint", "load_checkpoint"]
