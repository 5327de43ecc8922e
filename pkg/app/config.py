from pydantic_settings import BaseSettings
from pydantic import Field


class Settings(BaseSettings):
    # Logging
    log_level: str = Field(default="INFO", alias="HCH_LOG_LEVEL")

    # Worker pool (alpha-slice parallelism)
    threads: int = Field(default=1, ge=1, alias="HCH_THREADS")

    # Output
    output_dir: str = Field(default="runs", alias="HCH_OUTPUT_DIR")

    # Numerical guards
    boundary_mass_abort: float = Field(default=1e-6, gt=0, alias="HCH_BOUNDARY_MASS_ABORT")
    boundary_layer: int = Field(default=2, ge=1, alias="HCH_BOUNDARY_LAYER")
    clip_warn_rate: float = Field(default=1e-3, gt=0, alias="HCH_CLIP_WARN_RATE")
    caustic_margin: float = Field(default=1e-3, gt=0, alias="HCH_CAUSTIC_MARGIN")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "populate_by_name": True,
        "extra": "ignore",
    }


settings = Settings()
