"""
Application configuration with environment variable support.
"""

import os
from typing import Dict, Optional

import psutil
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class AppConfig:
    """Process-level settings read from the environment."""

    def __init__(self):
        self.environment = os.getenv("ENVIRONMENT", "development")
        self.is_production = self.environment == "production"

    # Logging
    @property
    def log_level(self) -> str:
        return os.getenv("CVR_LOG_LEVEL", "info")

    @property
    def log_format(self) -> str:
        return os.getenv("CVR_LOG_FORMAT", "json" if self.is_production else "pretty")

    @property
    def log_file(self) -> Optional[str]:
        return os.getenv("CVR_LOG_FILE")

    # Solver
    @property
    def solver(self) -> str:
        return os.getenv("CVR_SOLVER", "CLARABEL").upper()

    @property
    def solver_tolerance_override(self) -> Optional[float]:
        """Tolerance explicitly set in the environment, None otherwise."""
        value = os.getenv("CVR_SOLVER_TOL")
        return float(value) if value else None

    @property
    def solver_max_iter(self) -> int:
        return int(os.getenv("CVR_SOLVER_MAX_ITER", "500"))

    # Performance Settings
    @property
    def workers(self) -> int:
        configured = os.getenv("CVR_WORKERS")
        if configured:
            return max(1, int(configured))
        return psutil.cpu_count(logical=False) or 1

    # Reproducibility
    @property
    def seed(self) -> int:
        return int(os.getenv("CVR_SEED", "20240601"))

    def to_dict(self) -> Dict:
        """Convert configuration to dictionary for debugging."""
        config_dict = {}
        for attr_name in dir(self):
            if not attr_name.startswith('_') and not callable(getattr(self, attr_name)):
                try:
                    config_dict[attr_name] = getattr(self, attr_name)
                except ValueError:
                    continue
        return config_dict


# Global configuration instance
app_config = AppConfig()
