"""Pydantic models for run configuration, metrics, cost reports and the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

DEFAULT_LAMBDAS: tuple[float, ...] = (0.20, 0.10, 0.05, 0.025, 0.0125)

# Keys accepted in a ``key=value`` config file.
CONFIG_KEYS: tuple[str, ...] = (
    "preset",
    *(f"lambda_{k}" for k in range(len(DEFAULT_LAMBDAS))),
    "steps_stage1",
    "steps_stage2",
    "batch",
    "seed",
    "gop",
)


class TrainingConfig(BaseModel):
    """Resolved configuration of a training or coding run."""

    preset: Literal["desk", "paper"] = "desk"
    lambdas: tuple[float, ...] = Field(default=DEFAULT_LAMBDAS, description="λ per width index")
    learning_rate: float = Field(default=5e-5, gt=0)
    prior_learning_rate: float = Field(default=1e-3, gt=0, description="Adam rate of the factorized priors")
    betas: tuple[float, float] = (0.9, 0.999)
    clip_norm: float = Field(default=1.0, gt=0)
    steps_stage1: int = Field(default=2000, ge=0)
    steps_stage2: int = Field(default=2000, ge=0)
    batch: int = Field(default=1, ge=1)
    crop: int = Field(default=48, ge=48)
    seed: int = Field(default=0, ge=0)
    gop: int = Field(default=10, ge=1, le=255)
    stage: Literal[1, 2] = 1
    width: int | None = Field(default=None, ge=0, description="Train this width index alone")

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("at least one λ is required")
        if any(v <= 0 for v in value):
            raise ValueError(f"every λ must be positive, got {value}")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError(f"λ must be strictly decreasing in width index, got {value}")
        return value

    @field_validator("betas")
    @classmethod
    def _check_betas(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError(f"moment decays must lie in [0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainingConfig":
        if self.crop % 48:
            raise ValueError(f"crop must be a multiple of 48, got {self.crop}")
        if self.width is not None and self.width >= len(self.lambdas):
            raise ValueError(f"width index {self.width} out of range [0, {len(self.lambdas) - 1}]")
        return self

    @property
    def widths(self) -> int:
        return len(self.lambdas)

    @classmethod
    def from_entries(cls, entries: dict[str, str], **overrides) -> "TrainingConfig":
        """Build from parsed ``key=value`` strings; ``lambda_k`` keys replace single entries."""
        values: dict[str, object] = {}
        lambdas = list(DEFAULT_LAMBDAS)
        for key, raw in entries.items():
            if key.startswith("lambda_"):
                lambdas[int(key.removeprefix("lambda_"))] = float(raw)
            else:
                values[key] = raw
        values["lambdas"] = tuple(lambdas)
        values.update(overrides)
        return cls.model_validate(values)

    def resolved_lines(self) -> list[str]:
        """Sorted ``key=value`` dump of every resolved value."""
        entries = {
            "preset": self.preset,
            "learning_rate": repr(self.learning_rate),
            "prior_learning_rate": repr(self.prior_learning_rate),
            "beta1": repr(self.betas[0]),
            "beta2": repr(self.betas[1]),
            "clip_norm": repr(self.clip_norm),
            "steps_stage1": str(self.steps_stage1),
            "steps_stage2": str(self.steps_stage2),
            "batch": str(self.batch),
            "crop": str(self.crop),
            "seed": str(self.seed),
            "gop": str(self.gop),
            "stage": str(self.stage),
            "width": "all" if self.width is None else str(self.width),
        }
        for k, value in enumerate(self.lambdas):
            entries[f"lambda_{k}"] = repr(value)
        return [f"{key}={entries[key]}" for key in sorted(entries)]


class FrameMetrics(BaseModel):
    """Real coded cost and distortion of one frame."""

    frame: int
    frame_type: Literal["intra", "inter"]
    bits_hyper: int = 0
    bits_main: int = 0
    pixels: int = Field(..., gt=0, description="True (unpadded) pixel count")
    mse: float
    psnr: float
    estimated_bits: float | None = Field(None, description="Rate estimate from the entropy model")

    @property
    def bits(self) -> int:
        return self.bits_hyper + self.bits_main

    @property
    def bpp(self) -> float:
        return self.bits / self.pixels


class SequenceMetrics(BaseModel):
    """Per-frame metrics of one coded sequence plus their means."""

    width_index: int
    width_factor: float
    gop: int
    frames: list[FrameMetrics] = Field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return sum(f.bits for f in self.frames)

    @property
    def bpp(self) -> float:
        """Total payload bits over the true pixel count of all frames."""
        return self.total_bits / sum(f.pixels for f in self.frames)

    @property
    def mse(self) -> float:
        return sum(f.mse for f in self.frames) / len(self.frames)

    @property
    def psnr(self) -> float:
        return sum(f.psnr for f in self.frames) / len(self.frames)


class CostRow(BaseModel):
    """Parameter and MAC counts of one module at one width."""

    module: str
    width_index: int
    width_factor: float
    params: int
    param_bytes: int
    macs_encode: int
    macs_decode: int


class CostReport(BaseModel):
    preset: str
    width: int
    height: int
    rows: list[CostRow] = Field(default_factory=list)

    def for_width(self, k: int) -> list[CostRow]:
        return [row for row in self.rows if row.width_index == k]

    def row(self, module: str, k: int) -> CostRow:
        for row in self.rows:
            if row.module == module and row.width_index == k:
                return row
        raise KeyError(f"no row for {module} at width {k}")

    def total_params(self, k: int) -> int:
        return sum(row.params for row in self.for_width(k))

    def total_macs_encode(self, k: int) -> int:
        return sum(row.macs_encode for row in self.for_width(k))

    def total_macs_decode(self, k: int) -> int:
        return sum(row.macs_decode for row in self.for_width(k))


class HealthResponse(BaseModel):
    """Health check response."""

    status: str = Field(default="healthy")
    version: str = Field(default="0.1.0")


class ErrorResponse(BaseModel):
    """Error response envelope."""

    error: str = Field(..., description="High-level error message")
    detail: str | None = Field(None, description="Additional context for debugging")


class ProfileRequest(BaseModel):
    preset: Literal["desk", "paper"] = "paper"
    width: int = Field(1920, gt=0, le=0xFFFF)
    height: int = Field(1080, gt=0, le=0xFFFF)


class ProfileResponse(BaseModel):
    report: CostReport
    encode_ratio: float = Field(..., description="Encoding MACs at the smallest width over the largest")
    largest_module: str


class InspectRequest(BaseModel):
    container: str = Field(..., description="Base64-encoded SVC1 container")


class FrameSummary(BaseModel):
    index: int
    frame_type: Literal["intra", "inter"]
    hyper_bytes: int
    main_bytes: int


class InspectResponse(BaseModel):
    version: int
    preset: str
    width_index: int
    width_factor: float
    gop: int
    padded_width: int
    padded_height: int
    true_width: int
    true_height: int
    frame_count: int
    total_bytes: int
    frames: list[FrameSummary] = Field(default_factory=list)


__all__ = [
    "DEFAULT_LAMBDAS",
    "CONFIG_KEYS",
    "TrainingConfig",
    "FrameMetrics",
    "SequenceMetrics",
    "CostRow",
    "CostReport",
    "HealthResponse",
    "ErrorResponse",
    "ProfileRequest",
    "ProfileResponse",
    "InspectRequest",
    "FrameSummary",
    "InspectResponse",
]
