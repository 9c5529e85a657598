from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):

    # Application settings
    APP_NAME: str = "btrfly"
    VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # Prepared-data cache, overridable with the BTRFLY_CACHE_DIR env var
    BTRFLY_CACHE_DIR: Path = Path.home() / ".cache" / "btrfly"

    # auto | cpu | cuda
    DEVICE: str = "auto"

    # Working resolutions (mm, isotropic)
    WORKING_RESOLUTION_MM: float = 2.0
    LOCALIZER_RESOLUTION_MM: float = 4.0

    # Gaussian spreads (mm)
    LABEL_SIGMA_MM: float = 4.0
    LOCALIZER_SIGMA_MM: float = 15.0

    # Bounding box padding at localizer resolution
    BBOX_PAD_VOX: int = 5

    # Air; clip floor and fill value for padding
    HU_FLOOR: float = -1000.0

    @property
    def prepared_cache(self) -> Path:
        """Directory holding prepared (projected) datasets"""
        return self.BTRFLY_CACHE_DIR / "prepared"

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


# Global settings instance
settings = Settings()
