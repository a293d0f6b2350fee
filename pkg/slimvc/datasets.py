"""Deterministic synthetic video and PPM directory datasets.

Every sample is a pure function of (seed, step, slot): generation never
depends on what was drawn before, so any step can be regenerated alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .frames import read_frames

logger = logging.getLogger(__name__)

Pattern = Literal["static", "translate", "brightness", "noise"]
PATTERNS: tuple[str, ...] = ("static", "translate", "brightness", "noise")

_WAVES = 4
_BLOBS = 3


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


def texture(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour texture [3, H, W] in [0, 1]: oriented waves plus soft blobs."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    image = np.empty((3, height, width))
    for channel in range(3):
        layer = np.zeros((height, width))
        for _ in range(_WAVES):
            angle = rng.uniform(0.0, np.pi)
            period = rng.uniform(8.0, 48.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            layer += np.sin(2.0 * np.pi * (xs * np.cos(angle) + ys * np.sin(angle)) / period + phase)
        for _ in range(_BLOBS):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            radius = rng.uniform(4.0, 16.0)
            layer += 2.0 * rng.uniform(-1, 1) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * radius ** 2))
        image[channel] = layer
    low, high = image.min(), image.max()
    image = (image - low) / max(high - low, 1e-12)
    return (0.1 + 0.8 * image).astype(np.float32)


@dataclass(frozen=True)
class SyntheticDataset:
    """Clips of a moving, drifting or noisy texture."""

    pattern: Pattern = "translate"
    clip_length: int = 2
    seed: int = 0
    shift: tuple[int, int] = (2, 1)
    drift: float = 0.01
    noise: float = 0.02

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise UsageError(f"unknown pattern '{self.pattern}', expected one of {', '.join(PATTERNS)}")
        if self.clip_length < 1:
            raise UsageError("clip length must be at least 1")

    def clip(self, height: int, width: int, index: int = 0, length: int | None = None) -> list[np.ndarray]:
        """Frames of clip ``index`` as [3, H, W] float32 arrays in [0, 1]."""
        length = length or self.clip_length
        rng = _rng(self.seed, index)
        dx, dy = self.shift if self.pattern == "translate" else (0, 0)
        canvas = texture(height + abs(dy) * (length - 1), width + abs(dx) * (length - 1), rng)
        y0 = abs(dy) * (length - 1) if dy < 0 else 0
        x0 = abs(dx) * (length - 1) if dx < 0 else 0
        frames = []
        for t in range(length):
            top, left = y0 + t * dy, x0 + t * dx
            frame = canvas[:, top:top + height, left:left + width]
            if self.pattern == "brightness":
                frame = frame + np.float32(self.drift * t)
            elif self.pattern == "noise":
                frame = frame + rng.normal(0.0, self.noise, size=frame.shape).astype(np.float32)
            frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))
        return frames

    def sample_frames(self, step: int, batch: int, crop: int) -> np.ndarray:
        """[B, 3, crop, crop] single frames for training step ``step``."""
        return np.stack([self.clip(crop, crop, _slot(self.seed, step, b), 1)[0] for b in range(batch)])

    def sample_pairs(self, step: int, batch: int, crop: int) -> tuple[np.ndarray, np.ndarray]:
        """(previous, current) frame batches for training step ``step``."""
        pairs = [self.clip(crop, crop, _slot(self.seed, step, b), 2) for b in range(batch)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def _slot(seed: int, step: int, slot: int) -> int:
    return int(_rng(seed, step, slot).integers(0, 2**31 - 1))


class FrameDirectoryDataset:
    """Random crops from a directory of ``frame_%06d.ppm`` files."""

    def __init__(self, directory: Path | str, seed: int = 0):
        self.directory = Path(directory)
        self.seed = seed
        self.frames = read_frames(self.directory)
        logger.info("Loaded %d frames from %s", len(self.frames), self.directory)

    def _crop(self, frame: np.ndarray, top: int, left: int, crop: int) -> np.ndarray:
        return frame[:, top:top + crop, left:left + crop]

    def _window(self, rng: np.random.Generator, crop: int) -> tuple[int, int]:
        _, height, width = self.frames[0].shape
        if height < crop or width < crop:
            raise ShapeError(f"frames of {width}x{height} are smaller than the {crop}px crop")
        return int(rng.integers(0, height - crop + 1)), int(rng.integers(0, width - crop + 1))

    def sample_frames(self, step: int, batch: int, crop: int) -> np.ndarray:
        rng = _rng(self.seed, step)
        out = []
        for _ in range(batch):
            index = int(rng.integers(0, len(self.frames)))
            out.append(self._crop(self.frames[index], *self._window(rng, crop), crop))
        return np.stack(out)

    def sample_pairs(self, step: int, batch: int, crop: int) -> tuple[np.ndarray, np.ndarray]:
        if len(self.frames) < 2:
            raise ShapeError("frame pairs need at least two frames")
        rng = _rng(self.seed, step)
        previous, current = [], []
        for _ in range(batch):
            index = int(rng.integers(1, len(self.frames)))
            window = self._window(rng, crop)
            previous.append(self._crop(self.frames[index - 1], *window, crop))
            current.append(self._crop(self.frames[index], *window, crop))
        return np.stack(previous), np.stack(current)


class Dataset(Protocol):
    def sample_frames(self, step: int, batch: int, crop: int) -> np.ndarray: ...

    def sample_pairs(self, step: int, batch: int, crop: int) -> tuple[np.ndarray, np.ndarray]: ...


class MixedDataset:
    """Rotates through several datasets, one per training step."""

    def __init__(self, datasets: Sequence[Dataset]):
        if not datasets:
            raise UsageError("a mixed dataset needs at least one member")
        self.datasets = list(datasets)

    def _member(self, step: int) -> Dataset:
        return self.datasets[step % len(self.datasets)]

    def sample_frames(self, step: int, batch: int, crop: int) -> np.ndarray:
        return self._member(step).sample_frames(step, batch, crop)

    def sample_pairs(self, step: int, batch: int, crop: int) -> tuple[np.ndarray, np.ndarray]:
        return self._member(step).sample_pairs(step, batch, crop)


def synthetic_mix(seed: int = 0) -> MixedDataset:
    """All four patterns, rotating per step."""
    return MixedDataset([SyntheticDataset(pattern, 2, seed) for pattern in PATTERNS])


__all__ = [
    "PATTERNS",
    "texture",
    "SyntheticDataset",
    "FrameDirectoryDataset",
    "MixedDataset",
    "synthetic_mix",
    "Dataset",
]
