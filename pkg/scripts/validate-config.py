#!/usr/bin/env python3
"""
Configuration validation script for the CVR dispatch pipeline.
Checks a run config, the feeder it points at, the logging setup and the solver stack
before a long enrich -> solve -> validate run is started.
"""

import json
import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from config.health import health_checker  # noqa: E402
from config.run_config import RunConfig, load_run_config  # noqa: E402
from errors import CvrError  # noqa: E402
from feeder_model import load_bundled_feeder, load_feeder, validate_radial  # noqa: E402

REQUIRED_PACKAGES = ["numpy", "scipy", "pandas", "networkx", "cvxpy", "clarabel", "pydantic", "structlog"]


class ConfigValidator:
    """Validates a run configuration and the files it references"""

    def __init__(self, config_path: Optional[str] = None, project_root: str = "."):
        self.config_path = config_path
        self.project_root = Path(project_root)
        self.run_config: Optional[RunConfig] = None
        self.errors: List[str] = []
        self.warnings: List[str] = []
        self.info: List[str] = []

    def log_error(self, message: str):
        self.errors.append(f"❌ ERROR: {message}")

    def log_warning(self, message: str):
        self.warnings.append(f"⚠️  WARNING: {message}")

    def log_info(self, message: str):
        self.info.append(f"ℹ️  INFO: {message}")

    def validate_run_config(self) -> bool:
        """Validate the run config JSON against the RunConfig schema"""
        try:
            self.run_config = load_run_config(self.config_path)
        except CvrError as e:
            self.log_error(f"Run config rejected: {e.message}")
            return False

        config = self.run_config
        source = self.config_path or "defaults"
        self.log_info(f"Run config from {source}: mode={config.mode} epsilon={config.epsilon}")

        if config.start_hour + config.horizon > 24:
            self.log_warning(
                f"start_hour {config.start_hour} + horizon {config.horizon} runs past one day"
            )
        if config.samples < 10000:
            self.log_warning(f"Only {config.samples} Monte Carlo samples; Wilson intervals will be wide")
        if config.sm_only:
            self.log_warning("sm_only is set; moments will be flagged low_confidence")
        return True

    def validate_feeder(self) -> bool:
        """Validate the feeder file is readable and radial"""
        if self.run_config is None or not self.run_config.feeder:
            self.log_info("No feeder in run config, checking bundled ieee13_synthetic")
            try:
                feeder = load_bundled_feeder("ieee13_synthetic")
            except CvrError as e:
                self.log_error(f"Bundled feeder unreadable: {e.message}")
                return False
        else:
            try:
                feeder = load_feeder(self.run_config.feeder)
            except CvrError as e:
                self.log_error(f"Feeder rejected: {e.message}")
                return False

        report = validate_radial(feeder)
        if not report.ok:
            for violation in report.violations:
                self.log_error(f"Feeder {violation.kind}: {violation.message}")
            return False

        pv_buses = [bus.id for bus in feeder.buses if bus.pv is not None]
        self.log_info(
            f"Feeder radial: {len(feeder.buses)} buses, {len(feeder.transformers)} transformers, "
            f"PV at {pv_buses or 'no buses'}"
        )
        if not pv_buses:
            self.log_warning("Feeder has no PV; dispatch will have no decision variables")
        return True

    def validate_data_dirs(self) -> bool:
        """Validate measurement directories referenced by the run config"""
        if self.run_config is None:
            return False
        all_valid = True
        for name in ("pmu_dir", "sm_dir"):
            value = getattr(self.run_config, name)
            if value is None:
                self.log_info(f"{name} not set")
                continue
            path = Path(value)
            if not path.is_dir():
                self.log_error(f"{name} {path} is not a directory")
                all_valid = False
                continue
            csv_files = sorted(path.glob("*.csv"))
            if not csv_files:
                self.log_error(f"{name} {path} holds no CSV files")
                all_valid = False
            else:
                self.log_info(f"{name} {path}: {len(csv_files)} CSV files")
        if self.run_config.sm_dir is None and not self.run_config.sm_only:
            self.log_warning("sm_dir not set; enrichment will need --sm-dir on the command line")
        return all_valid

    def validate_logging_config(self) -> bool:
        """Validate logging configuration"""
        logging_file = self.project_root / "src" / "logging.json"

        if not logging_file.exists():
            self.log_warning("src/logging.json not found, falling back to basic stderr logging")
            return False

        try:
            with open(logging_file, 'r', encoding='utf-8') as f:
                logging_config = json.load(f)

            required_sections = ['version', 'formatters', 'handlers', 'loggers']
            missing_sections = [section for section in required_sections if section not in logging_config]
            if missing_sections:
                self.log_error(f"logging.json missing sections: {missing_sections}")
                return False

            handlers = logging_config.get('handlers', {})
            stdout_handlers = [name for name, config in handlers.items()
                               if config.get('stream') == 'ext://sys.stdout']
            if stdout_handlers:
                self.log_error(f"Handlers {stdout_handlers} write to stdout, which carries command output")
                return False

            self.log_info("logging.json validation passed")
            return True

        except json.JSONDecodeError as e:
            self.log_error(f"Invalid JSON syntax in logging.json: {e}")
            return False

    def validate_environment(self) -> bool:
        """Validate solver and package availability"""
        status = health_checker.check_environment()
        checks = status.get("checks", {})

        solvers = checks.get("solvers", {})
        if not solvers.get("healthy"):
            self.log_error(
                f"Configured solver {solvers.get('configured')} not installed; have {solvers.get('installed')}"
            )
        else:
            self.log_info(f"Solver {solvers['configured']} available")

        packages = checks.get("packages", {})
        missing = [name for name in REQUIRED_PACKAGES if name in packages.get("missing", [])]
        if missing:
            self.log_error(f"Missing packages: {missing}")

        resources = checks.get("resources", {})
        if resources and not resources.get("healthy"):
            self.log_warning(f"Memory at {resources.get('memory_percent')}%")

        return status["status"] != "unhealthy" and not missing

    def run_all_validations(self) -> bool:
        """Run all validation checks"""
        print("🔍 Starting configuration validation...\n")

        validations = [
            ("Run Config", self.validate_run_config),
            ("Feeder", self.validate_feeder),
            ("Data Directories", self.validate_data_dirs),
            ("Logging Configuration", self.validate_logging_config),
            ("Environment", self.validate_environment),
        ]

        all_passed = True

        for name, validation_func in validations:
            print(f"📋 Validating {name}...")
            try:
                result = validation_func()
                if result:
                    print(f"✅ {name} validation passed")
                else:
                    print(f"❌ {name} validation failed")
                    all_passed = False
            except Exception as e:
                print(f"💥 {name} validation crashed: {e}")
                all_passed = False
            print()

        return all_passed

    def print_summary(self):
        """Print validation summary"""
        print("=" * 60)
        print("📊 VALIDATION SUMMARY")
        print("=" * 60)

        if self.errors:
            print(f"\n🚨 ERRORS ({len(self.errors)}):")
            for error in self.errors:
                print(f"  {error}")

        if self.warnings:
            print(f"\n⚠️  WARNINGS ({len(self.warnings)}):")
            for warning in self.warnings:
                print(f"  {warning}")

        if self.info:
            print(f"\nℹ️  INFO ({len(self.info)}):")
            for info in self.info:
                print(f"  {info}")

        print("\n" + "=" * 60)

        if not self.errors:
            print("🎉 All critical validations passed!")
            print("✅ Ready to run the pipeline")
        else:
            print("🚨 Critical errors found - please fix before running")

        if self.warnings:
            print("⚠️  Please review warnings before a long run")


def main():
    """Main validation function"""
    config_path = sys.argv[1] if len(sys.argv) > 1 else None
    project_root = sys.argv[2] if len(sys.argv) > 2 else "."

    validator = ConfigValidator(config_path, project_root)
    success = validator.run_all_validations()
    validator.print_summary()

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
