import logging
from json import JSONDecodeError
from typing import List, Tuple

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings
from pydantic_settings.sources import (
    EnvSettingsSource,
    PydanticBaseSettingsSource,
)
from pydantic_settings.sources.providers.dotenv import DotEnvSettingsSource

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        class LenientEnvSource(EnvSettingsSource):
            def decode_complex_value(self, field_name, field, value):  # type: ignore[override]
                try:
                    return super().decode_complex_value(field_name, field, value)
                except JSONDecodeError:
                    return value

        class LenientDotEnvSource(DotEnvSettingsSource):
            def decode_complex_value(self, field_name, field, value):  # type: ignore[override]
                try:
                    return super().decode_complex_value(field_name, field, value)
                except JSONDecodeError:
                    return value

        lenient_env = LenientEnvSource(
            settings_cls,
            case_sensitive=getattr(env_settings, "case_sensitive", None),
            env_prefix=getattr(env_settings, "env_prefix", None),
            env_nested_delimiter=getattr(env_settings, "env_nested_delimiter", None),
            env_ignore_empty=getattr(env_settings, "env_ignore_empty", None),
            env_parse_none_str=getattr(env_settings, "env_parse_none_str", None),
        )

        lenient_dotenv = LenientDotEnvSource(
            settings_cls,
            env_file=getattr(dotenv_settings, "env_file", None),
            env_file_encoding=getattr(dotenv_settings, "env_file_encoding", None),
            case_sensitive=getattr(dotenv_settings, "case_sensitive", None),
            env_prefix=getattr(dotenv_settings, "env_prefix", None),
            env_nested_delimiter=getattr(dotenv_settings, "env_nested_delimiter", None),
            env_ignore_empty=getattr(dotenv_settings, "env_ignore_empty", None),
            env_parse_none_str=getattr(dotenv_settings, "env_parse_none_str", None),
        )

        return (
            init_settings,
            lenient_env,
            lenient_dotenv,
            file_secret_settings,
        )

    @field_validator("CONSTRAINED_HJ_EPS_LADDER", mode="before")
    @classmethod
    def parse_ladder(cls, value: str | List[float] | Tuple[float, ...]) -> Tuple[float, ...]:
        if isinstance(value, str):
            items = [float(item) for item in value.split(",") if item.strip()]
        else:
            items = [float(item) for item in value]
        ladder = tuple(sorted(set(items), reverse=True))
        if any(item <= 0 for item in ladder):
            raise ValueError("eps values must be positive")
        return ladder

    CONSTRAINED_HJ_OUTPUT_ROOT: str = Field(default="runs", description="Root directory for run artifacts")
    CONSTRAINED_HJ_TOL_ROOT: float = Field(default=1e-12, description="Absolute |R| tolerance of the I root solve")
    CONSTRAINED_HJ_PROJ_THRESHOLD: float = Field(
        default=1e-3, description="|max u| above which the constraint projection is applied"
    )
    CONSTRAINED_HJ_CFL_EPSILON: float = Field(
        default=0.1, description="Speed added to 2 max|grad u| in the HJ CFL bound dt <= h / (2 max|grad u| + eps)"
    )
    CONSTRAINED_HJ_BALL_RADIUS: float = Field(default=0.2, description="Radius of the ball the Picard iterates must stay in")
    CONSTRAINED_HJ_HOPF_COLE_SWITCH: float = Field(
        default=0.0125, description="eps at or below which u_eps is the primary unknown"
    )
    CONSTRAINED_HJ_MASS_LEAK_THRESHOLD: float = Field(
        default=1e-12, description="Boundary-to-peak density ratio reported as a mass leak"
    )
    CONSTRAINED_HJ_EPS_LADDER: Tuple[float, ...] = Field(
        default=(0.1, 0.05, 0.025, 0.0125), description="Default eps ladder of the sweep"
    )
    CONSTRAINED_HJ_SWEEP_WORKERS: int = Field(default=1, description="Concurrent per-eps runs of the sweep")
    CONSTRAINED_HJ_PROBE_POINTS: int = Field(default=1000, description="Random probe points of the hypothesis check")
    CONSTRAINED_HJ_SEED: int = Field(default=20150101, description="Seed of randomized diagnostics")
    DEBUG: int = Field(default=0, description="Debug mode flag")

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False
        extra = "ignore"


settings = Settings()
