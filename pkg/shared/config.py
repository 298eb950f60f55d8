import os
import logging
from typing import Optional

from dotenv import load_dotenv

from shared.errors import ValidationError

# Load environment variables
load_dotenv()


class Settings:
    """
    Runtime settings for infograd.
    Read from the environment (and a .env file when present) at construction time.
    """

    def __init__(self):
        self.threads = self._read_int('INFOGRAD_THREADS', 1, minimum=1)
        self.log_file = os.getenv('INFOGRAD_LOG_FILE', 'infograd.json')
        self.log_level = os.getenv('INFOGRAD_LOG_LEVEL', 'WARNING').upper()
        self.max_grid_cells = self._read_int('INFOGRAD_MAX_GRID_CELLS', 10**8, minimum=1)
        self.mc_block_size = self._read_int('INFOGRAD_MC_BLOCK_SIZE', 16384, minimum=1)
        self.slab_cells = self._read_int('INFOGRAD_SLAB_CELLS', 65536, minimum=1)

    @staticmethod
    def _read_int(name: str, default: int, minimum: int = 0) -> int:
        raw = os.getenv(name)
        if raw is None or raw.strip() == '':
            return default
        try:
            value = int(raw)
        except ValueError:
            raise ValidationError(f"{name} must be an integer, got {raw!r}")
        if value < minimum:
            raise ValidationError(f"{name} must be >= {minimum}, got {value}")
        return value

    def resolve_threads(self, threads: Optional[int] = None) -> int:
        """Explicit thread count wins over INFOGRAD_THREADS."""
        if threads is None:
            return self.threads
        if threads < 1:
            raise ValidationError(f"threads must be >= 1, got {threads}")
        return threads

    def configure_logging(self) -> None:
        level = getattr(logging, self.log_level, logging.WARNING)
        logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s')


# Global settings instance
settings = Settings()
