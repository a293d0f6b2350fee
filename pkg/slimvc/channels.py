"""Width factors and per-module, per-layer, per-width channel tables.

Two presets exist. ``paper`` lists the full architecture (Cout per width for
every slimmable layer: SConv 9x9/s3 feature encoder, switchable GDNs, 5x5
temporal prior stack, 1x1 entropy-parameter stack, ...). ``desk`` divides every
channel count by 8, rounding up, which keeps the wiring and the width ratios
while making CPU training take minutes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

from .errors import FormatError, ShapeError, UsageError

WIDTH_FACTORS: tuple[float, ...] = (0.25, 0.375, 0.5, 0.75, 1.0)

PresetName = Literal["desk", "paper"]
PRESET_IDS: dict[str, int] = {"paper": 0, "desk": 1}
MODULES: tuple[str, ...] = ("fe", "fd", "he", "hd", "tpm", "epm")
MODULE_TITLES: dict[str, str] = {
    "fe": "SlimFE",
    "fd": "SlimFD",
    "he": "SlimHE",
    "hd": "SlimHD",
    "tpm": "SlimTPM",
    "epm": "SlimEPM",
}

# Full-size channel counts per width index.
_PAPER_COUNTS: dict[str, tuple[int, ...]] = {
    "latent": (48, 72, 96, 144, 192),
    "hyper": (64, 96, 128, 192, 256),
    "tpm1": (107, 160, 213, 320, 426),
    "tpm2": (133, 200, 267, 400, 533),
    "prior": (160, 240, 320, 480, 640),
    "epm1": (400, 600, 800, 1200, 1600),
    "epm2": (320, 480, 640, 960, 1280),
    "epm_out": (96, 144, 192, 288, 384),
}
DESK_DIVISOR = 8
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class WidthConfig:
    """Ordered width factors; index k selects the k-th operating point."""

    factors: tuple[float, ...] = WIDTH_FACTORS

    def __post_init__(self) -> None:
        if not self.factors:
            raise ShapeError("width config needs at least one factor")
        if any(b <= a for a, b in zip(self.factors, self.factors[1:])):
            raise ShapeError(f"width factors must be strictly increasing, got {self.factors}")
        if self.factors[-1] != 1.0:
            raise ShapeError(f"last width factor must be 1.0, got {self.factors[-1]}")

    @property
    def count(self) -> int:
        return len(self.factors)

    def check(self, k: int) -> int:
        if not 0 <= k < self.count:
            raise ShapeError(f"width index {k} out of range [0, {self.count - 1}]")
        return k

    def factor(self, k: int) -> float:
        return self.factors[self.check(k)]


class LayerKind(str, Enum):
    CONV = "conv"
    DECONV = "deconv"
    GDN = "gdn"
    IGDN = "igdn"
    LRELU = "lrelu"

    @property
    def is_conv(self) -> bool:
        return self in (LayerKind.CONV, LayerKind.DECONV)

    @property
    def is_gdn(self) -> bool:
        return self in (LayerKind.GDN, LayerKind.IGDN)


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind, kernel, stride and (Cin, Cout) per width index."""

    kind: LayerKind
    cin: tuple[int, ...]
    cout: tuple[int, ...]
    kernel: int = 1
    stride: int = 1

    def channels(self, k: int) -> tuple[int, int]:
        return self.cin[k], self.cout[k]

    @property
    def label(self) -> str:
        if self.kind is LayerKind.CONV:
            return f"SConv{self.kernel}x{self.kernel}s{self.stride}"
        if self.kind is LayerKind.DECONV:
            return f"SDeconv{self.kernel}x{self.kernel}s{self.stride}"
        return {"gdn": "swGDN", "igdn": "swIGDN", "lrelu": "LReLU"}[self.kind.value]


def _conv(kernel: int, stride: int, cin: tuple[int, ...], cout: tuple[int, ...]) -> LayerSpec:
    return LayerSpec(LayerKind.CONV, cin, cout, kernel, stride)


def _deconv(kernel: int, stride: int, cin: tuple[int, ...], cout: tuple[int, ...]) -> LayerSpec:
    return LayerSpec(LayerKind.DECONV, cin, cout, kernel, stride)


def _norm(kind: LayerKind, channels: tuple[int, ...]) -> LayerSpec:
    return LayerSpec(kind, channels, channels)


@dataclass(frozen=True)
class ChannelTable:
    """Layer stacks of the six slimmable modules for one preset."""

    preset: str
    widths: WidthConfig
    latent: tuple[int, ...]
    hyper: tuple[int, ...]
    prior: tuple[int, ...]
    modules: dict[str, tuple[LayerSpec, ...]] = field(default_factory=dict)

    @property
    def preset_id(self) -> int:
        return PRESET_IDS[self.preset]

    def layers(self, module: str) -> tuple[LayerSpec, ...]:
        try:
            return self.modules[module]
        except KeyError:
            raise UsageError(f"unknown module '{module}', expected one of {', '.join(MODULES)}") from None

    def validate(self) -> None:
        """Check monotone channel counts and the inter-module wiring."""
        for name, layers in self.modules.items():
            previous = None
            for position, layer in enumerate(layers):
                for counts in (layer.cin, layer.cout):
                    if len(counts) != self.widths.count:
                        raise FormatError(f"{name}[{position}]: expected {self.widths.count} widths")
                    if any(b < a for a, b in zip(counts, counts[1:])):
                        raise FormatError(f"{name}[{position}]: channel counts decrease with width")
                if previous is not None and layer.cin != previous.cout:
                    raise FormatError(f"{name}[{position}]: input channels do not match previous layer")
                previous = layer
        for k in range(self.widths.count):
            latent = self.latent[k]
            if self.modules["fe"][-1].cout[k] != latent:
                raise FormatError("FE output channels differ from the latent width")
            if self.modules["he"][0].cin[k] != 2 * latent:
                raise FormatError("HE input channels must be twice the latent width")
            if self.modules["tpm"][0].cin[k] != latent:
                raise FormatError("TPM input channels differ from the latent width")
            if self.modules["epm"][-1].cout[k] != 2 * latent:
                raise FormatError("EPM output channels must be twice the latent width")
            if self.modules["hd"][-1].cout[k] != self.modules["tpm"][-1].cout[k]:
                raise FormatError("HD and TPM output channels differ")


def _scaled(counts: tuple[int, ...], divisor: int) -> tuple[int, ...]:
    return tuple(math.ceil(c / divisor) for c in counts)


def build_channel_table(preset: str, widths: WidthConfig | None = None) -> ChannelTable:
    """Channel table for the ``paper`` or ``desk`` preset."""
    if preset not in PRESET_IDS:
        raise UsageError(f"unknown preset '{preset}', expected 'desk' or 'paper'")
    widths = widths or WidthConfig()
    if widths.count != len(WIDTH_FACTORS):
        raise ShapeError(f"channel presets are defined for {len(WIDTH_FACTORS)} widths")
    divisor = 1 if preset == "paper" else DESK_DIVISOR
    c = {name: _scaled(counts, divisor) for name, counts in _PAPER_COUNTS.items()}
    image = (IMAGE_CHANNELS,) * widths.count
    latent, hyper, prior = c["latent"], c["hyper"], c["prior"]
    pair = tuple(2 * v for v in latent)
    fused = tuple(2 * v for v in prior)

    modules = {
        "fe": (
            _conv(9, 3, image, latent), _norm(LayerKind.GDN, latent),
            _conv(5, 2, latent, latent), _norm(LayerKind.GDN, latent),
            _conv(5, 2, latent, latent), _norm(LayerKind.GDN, latent),
        ),
        "fd": (
            _norm(LayerKind.IGDN, latent), _deconv(5, 2, latent, latent),
            _norm(LayerKind.IGDN, latent), _deconv(5, 2, latent, latent),
            _norm(LayerKind.IGDN, latent), _deconv(9, 3, latent, image),
        ),
        "he": (
            _conv(3, 1, pair, hyper), _norm(LayerKind.LRELU, hyper),
            _conv(5, 2, hyper, hyper), _norm(LayerKind.LRELU, hyper),
            _conv(5, 2, hyper, hyper),
        ),
        "hd": (
            _deconv(5, 2, hyper, hyper), _norm(LayerKind.LRELU, hyper),
            _deconv(5, 2, hyper, hyper), _norm(LayerKind.LRELU, hyper),
            _conv(3, 1, hyper, prior),
        ),
        "tpm": (
            _conv(5, 1, latent, c["tpm1"]), _norm(LayerKind.LRELU, c["tpm1"]),
            _conv(5, 1, c["tpm1"], c["tpm2"]), _norm(LayerKind.LRELU, c["tpm2"]),
            _conv(5, 1, c["tpm2"], prior),
        ),
        "epm": (
            _conv(1, 1, fused, c["epm1"]), _norm(LayerKind.LRELU, c["epm1"]),
            _conv(1, 1, c["epm1"], c["epm2"]), _norm(LayerKind.LRELU, c["epm2"]),
            _conv(1, 1, c["epm2"], c["epm_out"]),
        ),
    }
    table = ChannelTable(preset=preset, widths=widths, latent=latent, hyper=hyper, prior=prior,
                         modules=modules)
    table.validate()
    return table


def preset_name(preset_id: int) -> str:
    for name, value in PRESET_IDS.items():
        if value == preset_id:
            return name
    raise FormatError(f"unknown preset id {preset_id}")


__all__ = [
    "WIDTH_FACTORS",
    "PRESET_IDS",
    "MODULES",
    "MODULE_TITLES",
    "WidthConfig",
    "LayerKind",
    "LayerSpec",
    "ChannelTable",
    "build_channel_table",
    "preset_name",
]
