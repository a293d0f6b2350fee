"""SlimVC: a slimmable neural video codec with five operating points in one model."""

__version__ = "0.1.0"

from .bitstream import BitstreamContainer, FrameRecord, FrameType
from .channels import WIDTH_FACTORS, ChannelTable, WidthConfig, build_channel_table
from .codec import (
    FrameState,
    SlimVCModel,
    decode_frame,
    decode_sequence,
    encode_frame,
    encode_sequence,
)
from .config import Settings, settings
from .errors import (
    FormatError,
    NumericalError,
    ShapeError,
    SlimVCError,
    StorageError,
    TruncatedPayloadError,
    UsageError,
)
from .models import CostReport, FrameMetrics, SequenceMetrics, TrainingConfig
from .profiler import count_macs, count_params, cost_report, memory_report
from .tensor import ComputeGraph, Parameter, Tensor, backward

__all__ = [
    "__version__",
    "BitstreamContainer",
    "FrameRecord",
    "FrameType",
    "WIDTH_FACTORS",
    "ChannelTable",
    "WidthConfig",
    "build_channel_table",
    "FrameState",
    "SlimVCModel",
    "encode_frame",
    "decode_frame",
    "encode_sequence",
    "decode_sequence",
    "Settings",
    "settings",
    "SlimVCError",
    "UsageError",
    "StorageError",
    "FormatError",
    "TruncatedPayloadError",
    "ShapeError",
    "NumericalError",
    "TrainingConfig",
    "FrameMetrics",
    "SequenceMetrics",
    "CostReport",
    "count_params",
    "count_macs",
    "cost_report",
    "memory_report",
    "ComputeGraph",
    "Parameter",
    "Tensor",
    "backward",
]
