"""
Configuration settings for the immersion command line.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict

from src.models import Tolerances


class Settings(BaseSettings):
    """Defaults for CLI flags; override from the environment or a .env file"""

    # Tolerances
    TOL_FLAT: float = 1e-8
    TOL_WEYL: float = 1e-6
    TOL_CODAZZI: float = 1e-5
    TOL_GAUSS: float = 1e-5
    POSITIVITY_RELATIVE: float = 1e-9
    CLAMP_THRESHOLD: float = 1e-6

    # Numerics
    RK4_SUBSTEPS: int = 4
    DIFF_ORDER: int = 2
    THREADS: int = 1

    # Files
    OUTPUT_DIR: str = "output"
    PRESET_DIR: str = "data"
    EMBED_FORMAT: str = "obj"

    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore"
    )

    def tolerances(self) -> Tolerances:
        return Tolerances(
            flat=self.TOL_FLAT,
            weyl=self.TOL_WEYL,
            codazzi=self.TOL_CODAZZI,
            gauss=self.TOL_GAUSS,
            positivity=self.POSITIVITY_RELATIVE,
            clamp=self.CLAMP_THRESHOLD,
        )


# Global settings instance
settings = Settings()
