"""Frame I/O (binary PPM), padding to the codec grid, and distortion metrics.

Frames are float32 arrays shaped [3, H, W] with values in [0, 1]; PPM bytes
map to reals by v/255 and back by rounding half up.
"""

from __future__ import annotations

import logging
import math
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ShapeError, StorageError

logger = logging.getLogger(__name__)

FRAME_GRID = 48
FRAME_PATTERN = "frame_{:06d}.ppm"
_FRAME_NAME = re.compile(r"^frame_(\d{6})\.ppm$")
_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary P6 image with maxval 255 into a [3, H, W] float32 frame."""
    tokens: list[bytes] = []
    position = 0
    while len(tokens) < 4:
        match = _HEADER_TOKEN.match(data, position)
        if match is None:
            raise FormatError("truncated PPM header")
        tokens.append(match.group(1))
        position = match.end()
    magic, width, height, maxval = tokens
    if magic != b"P6":
        raise FormatError(f"unsupported PPM magic {magic!r}, expected b'P6'")
    try:
        width_px, height_px, maxval_int = int(width), int(height), int(maxval)
    except ValueError:
        raise FormatError("non-numeric PPM header field") from None
    if maxval_int != 255:
        raise FormatError(f"unsupported PPM maxval {maxval_int}, expected 255")
    if width_px <= 0 or height_px <= 0:
        raise FormatError(f"invalid PPM size {width_px}x{height_px}")
    # Exactly one whitespace byte separates the header from the raster.
    position += 1
    expected = width_px * height_px * 3
    raster = data[position:position + expected]
    if len(raster) != expected:
        raise FormatError(f"PPM raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height_px, width_px, 3)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def to_bytes(frame: np.ndarray) -> np.ndarray:
    """[3, H, W] reals to [H, W, 3] uint8, rounding half up and clamping."""
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ShapeError(f"expected a [3, H, W] frame, got shape {frame.shape}")
    scaled = np.floor(np.clip(frame.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def encode_ppm(frame: np.ndarray) -> bytes:
    pixels = to_bytes(frame)
    height, width = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (width, height) + np.ascontiguousarray(pixels).tobytes()


def read_ppm(path: Path | str) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode_ppm(data)


def write_ppm(path: Path | str, frame: np.ndarray) -> None:
    try:
        Path(path).write_bytes(encode_ppm(frame))
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def frame_paths(directory: Path | str) -> list[Path]:
    """``frame_%06d.ppm`` files of a directory in frame order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise StorageError(f"frame directory {directory} does not exist")
    paths = [p for p in directory.iterdir() if _FRAME_NAME.match(p.name)]
    return sorted(paths, key=lambda p: int(_FRAME_NAME.match(p.name).group(1)))


def read_frames(directory: Path | str) -> list[np.ndarray]:
    paths = frame_paths(directory)
    if not paths:
        raise StorageError(f"no frame_*.ppm files in {directory}")
    frames = [read_ppm(p) for p in paths]
    shape = frames[0].shape
    for path, frame in zip(paths, frames):
        if frame.shape != shape:
            raise ShapeError(f"{path.name} is {frame.shape[2]}x{frame.shape[1]}, "
                             f"expected {shape[2]}x{shape[1]}")
    logger.debug("Read %d frames of %dx%d from %s", len(frames), shape[2], shape[1], directory)
    return frames


def write_frames(directory: Path | str, frames: Sequence[np.ndarray]) -> list[Path]:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {directory}: {exc.strerror or exc}") from exc
    paths = []
    for index, frame in enumerate(frames):
        path = directory / FRAME_PATTERN.format(index)
        write_ppm(path, frame)
        paths.append(path)
    return paths


def padded_size(size: int, grid: int = FRAME_GRID) -> int:
    return grid * math.ceil(size / grid)


def pad_frame(frame: np.ndarray, grid: int = FRAME_GRID) -> np.ndarray:
    """Reflect-pad a [C, H, W] frame at the bottom and right to multiples of ``grid``."""
    _, height, width = frame.shape
    extra_h = padded_size(height, grid) - height
    extra_w = padded_size(width, grid) - width
    if not extra_h and not extra_w:
        return frame
    mode = "reflect" if extra_h < height and extra_w < width else "symmetric"
    return np.pad(frame, ((0, 0), (0, extra_h), (0, extra_w)), mode=mode)


def crop_frame(frame: np.ndarray, height: int, width: int) -> np.ndarray:
    return frame[..., :height, :width]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare frames of shapes {a.shape} and {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(mse_value: float) -> float:
    """10·log10(1/mse) for signals in [0, 1]; infinite for a perfect match."""
    if mse_value <= 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse_value)


__all__ = [
    "FRAME_GRID",
    "FRAME_PATTERN",
    "decode_ppm",
    "encode_ppm",
    "to_bytes",
    "read_ppm",
    "write_ppm",
    "frame_paths",
    "read_frames",
    "write_frames",
    "padded_size",
    "pad_frame",
    "crop_frame",
    "mse",
    "psnr",
]
