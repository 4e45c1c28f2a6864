"""
Configuration settings for TonelliCrit
"""

from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Output
    OUTPUT_ROOT: str = "runs"

    # Environment
    ENVIRONMENT: str = "development"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Numerical defaults
    DEFAULT_MESH: int = 128
    DEFAULT_GRID_DENSITY: int = 9
    DEFAULT_SEED: int = 0
    FLOW_TOL: float = 1e-9


# Global settings instance
settings = Settings()
