"""Stateless HTTP service for cost reports and container inspection.

No video is coded over the network: the service answers questions about
presets, cost accounting and the headers of containers it is handed.
"""

import asyncio
import base64
import binascii
import inspect
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, List, Literal

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ValidationError

from . import __version__
from .bitstream import BitstreamContainer, FrameType
from .channels import MODULE_TITLES, MODULES, WIDTH_FACTORS, build_channel_table, preset_name
from .config import settings
from .errors import FormatError, SlimVCError
from .models import (
    ErrorResponse,
    FrameSummary,
    HealthResponse,
    InspectRequest,
    InspectResponse,
    ProfileRequest,
    ProfileResponse,
)
from .profiler import count_params, cost_report, encode_ratio, memory_report

logger = logging.getLogger(__name__)


@dataclass
class StatelessAction:
    """
    Definition of a stateless API route backed by a processor method.

    Attributes:
        name: Short identifier used for logging and OpenAPI docs.
        path: FastAPI route path (e.g., "/profile").
        handler: Callable invoked with the validated payload and/or path parameters.
        request_model: Optional Pydantic model for request validation.
        response_model: Optional Pydantic model for response serialization.
        methods: HTTP methods to expose (defaults to POST).
        path_params_model: Optional Pydantic model for path parameter validation.
        summary: Optional OpenAPI summary.
        tags: Optional OpenAPI tags.
    """

    name: str
    path: str
    handler: Callable[..., Awaitable[Any] | Any]
    request_model: type[BaseModel] | None = None
    response_model: type[BaseModel] | None = None
    methods: tuple[str, ...] = ("POST",)
    path_params_model: type[BaseModel] | None = None
    summary: str | None = None
    tags: tuple[str, ...] | None = None


class BaseProcessor(ABC):
    """Hook point for stateless services."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Processor name used for logging and metadata."""

    @property
    def version(self) -> str:
        return __version__

    def get_stateless_actions(self) -> List[StatelessAction]:
        return []


async def run_blocking(func: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    """Run a blocking function in a worker thread to keep the event loop free."""
    return await asyncio.to_thread(func, *args, **kwargs)


class PresetPath(BaseModel):
    preset: Literal["desk", "paper"]


class ModuleChannels(BaseModel):
    module: str
    title: str
    params: list[int]


class PresetResponse(BaseModel):
    preset: str
    width_factors: list[float]
    latent_channels: list[int]
    hyper_channels: list[int]
    modules: list[ModuleChannels]


class CodecProcessor(BaseProcessor):
    """Exposes the profiler and the container parser."""

    @property
    def name(self) -> str:
        return "slimvc"

    def get_stateless_actions(self) -> List[StatelessAction]:
        return [
            StatelessAction(
                name="profile",
                path="/profile",
                request_model=ProfileRequest,
                response_model=ProfileResponse,
                handler=self.handle_profile,
                summary="Parameter and MAC counts per module and width",
                tags=("profiler",),
            ),
            StatelessAction(
                name="inspect",
                path="/inspect",
                request_model=InspectRequest,
                response_model=InspectResponse,
                handler=self.handle_inspect,
                summary="Decode a container header and list its frames",
                tags=("bitstream",),
            ),
            StatelessAction(
                name="preset",
                path="/presets/{preset}",
                path_params_model=PresetPath,
                response_model=PresetResponse,
                handler=self.handle_preset,
                methods=("GET",),
                summary="Channel counts of a preset",
                tags=("profiler",),
            ),
        ]

    async def handle_profile(self, request: ProfileRequest) -> ProfileResponse:
        report = await run_blocking(cost_report, request.preset, request.width, request.height)
        table = build_channel_table(request.preset)
        largest = memory_report(table, table.widths.count - 1).largest
        return ProfileResponse(report=report, encode_ratio=encode_ratio(report), largest_module=largest)

    def handle_inspect(self, request: InspectRequest) -> InspectResponse:
        try:
            data = base64.b64decode(request.container, validate=True)
        except binascii.Error:
            raise FormatError("container is not valid base64") from None
        container = BitstreamContainer.from_bytes(data)
        if not 0 <= container.width_index < len(WIDTH_FACTORS):
            raise FormatError(f"container width index {container.width_index} out of range")
        return InspectResponse(
            version=container.version,
            preset=preset_name(container.preset_id),
            width_index=container.width_index,
            width_factor=WIDTH_FACTORS[container.width_index],
            gop=container.gop_size,
            padded_width=container.padded_width,
            padded_height=container.padded_height,
            true_width=container.true_width,
            true_height=container.true_height,
            frame_count=container.frame_count,
            total_bytes=len(data),
            frames=[
                FrameSummary(
                    index=index,
                    frame_type="intra" if record.frame_type is FrameType.INTRA else "inter",
                    hyper_bytes=len(record.hyper),
                    main_bytes=len(record.main),
                )
                for index, record in enumerate(container.frames)
            ],
        )

    def handle_preset(self, path_params: PresetPath) -> PresetResponse:
        table = build_channel_table(path_params.preset)
        return PresetResponse(
            preset=table.preset,
            width_factors=list(table.widths.factors),
            latent_channels=list(table.latent),
            hyper_channels=list(table.hyper),
            modules=[
                ModuleChannels(module=m, title=MODULE_TITLES[m],
                               params=[count_params(table, m, k) for k in range(table.widths.count)])
                for m in MODULES
            ],
        )


@dataclass
class ServiceConfig:
    """
    Configuration for building the service application.

    Args:
        name: Override service name (defaults to processor.name)
        version: Override service version (defaults to processor.version)
        description: Short description for generated docs
    """

    name: str | None = None
    version: str | None = None
    description: str | None = None


def _error_response(error: str, detail: str | None) -> JSONResponse:
    return JSONResponse(status_code=400, content=ErrorResponse(error=error, detail=detail).model_dump())


def create_app(processor: BaseProcessor | None = None, config: ServiceConfig | None = None) -> FastAPI:
    """Create a FastAPI application for a stateless processor."""
    processor = processor or CodecProcessor()
    config = config or ServiceConfig()

    logging.basicConfig(level=settings.log_level, format=settings.log_format)

    service_name = config.name or processor.name
    service_version = config.version or processor.version
    service_description = config.description or settings.service_description

    app = FastAPI(
        title=settings.service_title if service_name == "slimvc" else f"{service_name.title()} API",
        description=service_description,
        version=service_version,
    )
    app.state.processor = processor
    app.state.service_config = config

    @app.exception_handler(ValidationError)
    async def validation_exception_handler(request: Request, exc: ValidationError):
        """Path parameter and model validation errors."""
        return _error_response("Validation error", str(exc))

    @app.exception_handler(SlimVCError)
    async def codec_exception_handler(request: Request, exc: SlimVCError):
        return _error_response(exc.message, exc.detail or type(exc).__name__)

    @app.get("/", response_model=HealthResponse)
    async def root():
        return HealthResponse(status="healthy", version=service_version)

    @app.get("/health", response_model=HealthResponse)
    async def health_check():
        return HealthResponse(status="healthy", version=service_version)

    actions = processor.get_stateless_actions()
    if not actions:
        logger.warning("Processor %s exposes no stateless actions.", processor.name)

    def make_endpoint(action: StatelessAction):
        PathParamsModel = action.path_params_model
        RequestModel = action.request_model

        async def finish(call_result: Any) -> Any:
            if inspect.isawaitable(call_result):
                call_result = await call_result
            return call_result

        if PathParamsModel and RequestModel:
            async def endpoint(request: Request, payload: RequestModel):
                return await finish(action.handler(payload, PathParamsModel(**request.path_params)))
        elif PathParamsModel:
            async def endpoint(request: Request):
                return await finish(action.handler(PathParamsModel(**request.path_params)))
        elif RequestModel:
            async def endpoint(payload: RequestModel):
                return await finish(action.handler(payload))
        else:
            async def endpoint():
                return await finish(action.handler())

        return endpoint

    for action in actions:
        logger.info("Registering stateless action '%s' at %s", action.name, action.path)
        if action.path_params_model:
            path_param_names = set(re.findall(r"\{(\w+)\}", action.path))
            model_field_names = set(action.path_params_model.model_fields.keys())
            if path_param_names != model_field_names:
                raise ValueError(
                    f"Path parameters in '{action.path}' do not match path_params_model fields for "
                    f"action '{action.name}'. Path has {path_param_names}, model has {model_field_names}"
                )

        route_kwargs = {
            "methods": list(action.methods),
            "response_model": action.response_model,
            "summary": action.summary,
            "tags": list(action.tags) if action.tags else None,
            "responses": {400: {"model": ErrorResponse}, 500: {"model": ErrorResponse}},
        }
        route_kwargs = {k: v for k, v in route_kwargs.items() if v is not None}
        app.api_route(action.path, **route_kwargs)(make_endpoint(action))

    return app


__all__ = [
    "StatelessAction",
    "BaseProcessor",
    "CodecProcessor",
    "ServiceConfig",
    "create_app",
    "run_blocking",
]
