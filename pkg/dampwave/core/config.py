from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="DAMPWAVE_", extra="ignore")

    # Artifact settings
    output_dir: Path = Path("artifacts")

    # Logging
    log_level: str = "INFO"

    # Dispatch
    max_workers: int = Field(1, ge=1)

    # Resource guards
    picard_budget: int = Field(20_000_000, gt=0)  # leapfrog steps per Picard iterate
    phi_chunk: int = Field(4096, ge=16)  # nodes per vectorised phi scan chunk


settings = Settings()
