"""
Environment health checks and run metrics.
"""

import time
from contextlib import contextmanager
from datetime import datetime
from importlib import metadata
from typing import Any, Dict, Iterator

import cvxpy as cp
import psutil
import structlog

from config.app_config import app_config

logger = structlog.get_logger(__name__)

PACKAGES = ("numpy", "scipy", "pandas", "networkx", "cvxpy", "clarabel", "pydantic", "structlog")


class HealthChecker:
    """Checks that the solver stack and the machine are fit for a run."""

    def __init__(self):
        self.start_time = time.time()
        self.check_count = 0

    def check_environment(self) -> Dict[str, Any]:
        health_status = {
            "status": "healthy",
            "timestamp": datetime.now().isoformat(),
            "checks": {},
        }
        try:
            health_status["checks"]["solvers"] = self._check_solvers()
            health_status["checks"]["packages"] = self._check_packages()
            health_status["checks"]["resources"] = self._check_system_resources()

            failed_checks = [name for name, check in health_status["checks"].items()
                             if not check.get("healthy", False)]
            if "solvers" in failed_checks:
                health_status["status"] = "unhealthy"
            elif failed_checks:
                health_status["status"] = "degraded"
            if failed_checks:
                health_status["failed_checks"] = failed_checks
        except Exception as e:
            health_status["status"] = "unhealthy"
            health_status["error"] = str(e)
            logger.error("health check failed", error=str(e))

        self.check_count += 1
        return health_status

    def _check_solvers(self) -> Dict[str, Any]:
        installed = sorted(cp.installed_solvers())
        return {
            "healthy": app_config.solver in installed,
            "configured": app_config.solver,
            "installed": installed,
        }

    def _check_packages(self) -> Dict[str, Any]:
        versions, missing = {}, []
        for name in PACKAGES:
            try:
                versions[name] = metadata.version(name)
            except metadata.PackageNotFoundError:
                missing.append(name)
        return {"healthy": not missing, "versions": versions, "missing": missing}

    def _check_system_resources(self) -> Dict[str, Any]:
        memory = psutil.virtual_memory()
        return {
            "healthy": memory.percent < 90,
            "physical_cores": psutil.cpu_count(logical=False),
            "logical_cores": psutil.cpu_count(logical=True),
            "memory_percent": memory.percent,
            "memory_available_mb": round(memory.available / 2 ** 20, 1),
            "workers": app_config.workers,
        }


class MetricsCollector:
    """Stage durations and solve counts; ``timing()`` is the isolated timing block of outputs."""

    def __init__(self):
        self.metrics: Dict[str, Any] = {
            "stages": {},
            "solves_total": 0,
            "solve_status": {},
        }

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.metrics["stages"][name] = self.metrics["stages"].get(name, 0.0) + elapsed
            logger.debug("stage finished", stage=name, seconds=round(elapsed, 3))

    def record_solve(self, status: str) -> None:
        self.metrics["solves_total"] += 1
        self.metrics["solve_status"][status] = self.metrics["solve_status"].get(status, 0) + 1

    def timing(self) -> Dict[str, Any]:
        return {f"{name}_ms": round(seconds * 1000.0, 3) for name, seconds in self.metrics["stages"].items()}

    def get_metrics(self) -> Dict[str, Any]:
        return {**self.metrics, "timing": self.timing(), "timestamp": datetime.now().isoformat()}

    def reset_metrics(self):
        self.__init__()


# Global instances
health_checker = HealthChecker()
metrics_collector = MetricsCollector()
