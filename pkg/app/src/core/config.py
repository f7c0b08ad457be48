from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    environment: str = "development"
    debug: bool = False
    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="SEVTRAIN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    threads: int | None = Field(default=None, ge=1)
    desk_factor: int = Field(default=20, ge=1)
    checkpoint_every: int | None = Field(default=None, ge=1)


_settings = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    global _settings
    _settings = None
