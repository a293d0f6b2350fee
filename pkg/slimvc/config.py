"""Configuration management using pydantic-settings."""

from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings, read from ``SLIMVC_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="slimvc_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra='ignore',
    )

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Model defaults
    default_preset: Literal["desk", "paper"] = "desk"

    # Training progress reporting interval (steps)
    log_every: int = 100

    # Latency benchmark
    bench_warmup: int = 2
    bench_frames: int = 10

    # HTTP service
    service_title: str = "SlimVC Profiling Service"
    service_description: str = "Cost accounting and container inspection for the slimmable video codec"


# Global settings instance
settings = Settings()
