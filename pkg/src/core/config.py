import os

from functools import lru_cache

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    threads: int | None = None  # None → machine parallelism
    convergence_threshold: float = 0.01
    output_dir: str = "out"

    # Monte Carlo draws behind every collapse report
    eval_draws: int = 2000
    # Chunk size for seeded Monte Carlo streams; fixed so results do not
    # depend on the worker count
    mc_chunk_size: int = 1024

    model_config = {"env_prefix": "EMIM_", "case_sensitive": False}

    @property
    def worker_count(self) -> int:
        if self.threads is not None and self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


@lru_cache
def get_settings() -> Settings:
    return Settings()
