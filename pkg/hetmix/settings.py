from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="HETMIX_", env_file=".env", env_file_encoding="utf-8", extra="ignore")

    threads: int = 1

    series_tol: float = 1e-12
    series_max_terms: int = 1_000_000
    series_accel_after: int = 10_000

    quad_abs_tol: float = 1e-13
    quad_rel_tol: float = 1e-10
    quad_limit: int = 200

    fallback_rel_tol: float = 1e-8

    sampler_grid: int = 4096
    calib_grid: int = 2048

    default_seed: int = 20251105


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Принимает ничего; возвращает Settings, загруженные из окружения/.env (кэшируются до cache_clear)."""
    return Settings()
