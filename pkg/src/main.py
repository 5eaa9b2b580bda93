"""
cvr-dispatch command line: feeder checks, data enrichment, dispatch and validation.

    python src/main.py feeder validate src/fixtures/ieee13_synthetic.json
    python src/main.py synth --feeder F --output-dir data --teachers 8
    python src/main.py enrich --feeder F --pmu-dir data/pmu --sm-dir data/sm
    python src/main.py solve --feeder F --moments out/moments.json --mode drcc --epsilon 0.05 --horizon 24
    python src/main.py validate --feeder F --moments out/moments.json --dispatch out/dispatch.json
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import structlog

from config.app_config import app_config
from config.health import health_checker, metrics_collector
from config.logging_config import setup_logging
from config.run_config import RunConfig, load_run_config
from dispatch import build_problem, load_dispatch, require_optimal, save_dispatch, solve_dispatch
from enrichment import EnrichmentSettings, enrich_dataset
from errors import CvrError, FeederValidationError, NoTeachersError, exit_info
from feeder_model import load_feeder, validate_radial
from measurements import (
    check_teacher_alignment,
    common_timeline,
    pmu_series,
    read_measurements,
    sm_series,
    write_series,
)
from moments import estimate_moments, load_moments, node_samples, pv_capacity_map, save_moments, sm_only_samples
from synthetic import SyntheticSettings, generate_dataset, write_dataset
from validation import build_report, energy_report, monte_carlo_violation, oracle_cross_check, save_report

logger = structlog.get_logger(__name__)


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _has_csv(path: Optional[str]) -> bool:
    return path is not None and Path(path).is_dir() and any(Path(path).glob("*.csv"))


# Commands

def cmd_feeder_validate(args: argparse.Namespace, config: RunConfig) -> int:
    feeder = load_feeder(args.path)
    report = validate_radial(feeder)
    _print_json(report.to_dict())
    if not report.ok:
        logger.warning("feeder invalid", violations=len(report.violations))
        return exit_info(FeederValidationError(""))[1]
    logger.info("feeder valid", buses=len(feeder.buses), nodes=len(feeder.nodes), pv=len(feeder.pv_nodes))
    return 0


def cmd_enrich(args: argparse.Namespace, config: RunConfig) -> int:
    config.require_paths("feeder", "sm_dir")
    feeder = load_feeder(config.feeder)
    with metrics_collector.stage("read"):
        sm = sm_series(read_measurements(config.sm_dir))
        timeline = common_timeline(sm)

    if config.sm_only:
        with metrics_collector.stage("moments"):
            moments = estimate_moments(
                sm_only_samples(feeder, sm), config.correlation, pv_capacity_map(feeder),
                low_confidence=True, meta={"source": "sm_only", "seed": config.seed},
            )
        logger.warning("moments from smart-meter data only", low_confidence=True)
    else:
        if not _has_csv(config.pmu_dir):
            raise NoTeachersError(
                "no PMU teacher files found; rerun with --sm-only to build low-confidence moments "
                "from hourly data alone",
                {"pmu_dir": config.pmu_dir},
            )
        settings = EnrichmentSettings(
            bins=config.bins, weights_mode=config.weights, seed=config.seed,
            reactive_coupling=config.reactive_coupling, workers=config.workers,
        )
        with metrics_collector.stage("enrich"):
            pmu = pmu_series(read_measurements(config.pmu_dir))
            check_teacher_alignment(pmu, timeline)
            result = enrich_dataset(pmu, sm, settings)
        write_series(config.output_path("enriched.csv"), result.series)
        for student, per_quantity in result.weights.items():
            if "p" in per_quantity:
                print(f"{student}: " + ", ".join(f"{t}={w:.4f}" for t, w in per_quantity["p"].to_dict().items()))
        with metrics_collector.stage("moments"):
            moments = estimate_moments(
                node_samples(feeder, result.series), config.correlation, pv_capacity_map(feeder),
                meta={"source": "enriched", "seed": config.seed, "teachers": result.teachers},
            )

    path = Path(config.moments) if config.moments else config.output_path("moments.json")
    save_moments(path, moments, metrics_collector.timing())
    logger.info("moments written", path=str(path), entries=len(moments.keys), low_confidence=moments.low_confidence)
    return 0


def cmd_solve(args: argparse.Namespace, config: RunConfig) -> int:
    config.require_paths("feeder", "moments")
    feeder = load_feeder(config.feeder)
    moments = load_moments(config.moments)
    with metrics_collector.stage("build"):
        problem = build_problem(
            feeder, moments, config.mode, config.horizon,
            epsilon=config.epsilon if config.mode == "drcc" else None,
            start_hour=config.start_hour, v_min=config.v_min, v_max=config.v_max,
            coupling_reference=config.coupling_reference, ro_interpretation=config.ro_interpretation,
        )
    with metrics_collector.stage("solve"):
        solution = solve_dispatch(problem, config.solver_settings())
    metrics_collector.record_solve(solution.status)

    path = Path(config.dispatch) if config.dispatch else config.output_path("dispatch.json")
    save_dispatch(path, solution)
    print(f"{solution.mode}: status={solution.status} objective={solution.objective_kwh:.6f} kWh -> {path}")
    require_optimal(solution)
    return 0


def cmd_validate(args: argparse.Namespace, config: RunConfig) -> int:
    config.require_paths("feeder", "moments", "dispatch")
    feeder = load_feeder(config.feeder)
    moments = load_moments(config.moments)
    solution = load_dispatch(config.dispatch, feeder)
    settings = solution.settings
    problem = build_problem(
        feeder, moments, solution.mode if solution.mode != "base" else "deterministic", solution.horizon,
        epsilon=solution.epsilon, start_hour=solution.start_hour,
        v_min=settings.get("v_min", config.v_min), v_max=settings.get("v_max", config.v_max),
        coupling_reference=settings.get("coupling_reference", config.coupling_reference),
        ro_interpretation=settings.get("ro_interpretation", config.ro_interpretation),
        ro_relative=settings.get("ro_relative", 0.10),
    )

    with metrics_collector.stage("monte_carlo"):
        violations = monte_carlo_violation(problem, solution, config.family, config.samples, config.seed,
                                           workers=config.workers)
    with metrics_collector.stage("oracle"):
        oracle = oracle_cross_check(problem, solution)
    energy = None
    if not args.skip_energy:
        with metrics_collector.stage("energy"):
            energy = energy_report(
                feeder, moments, solution.horizon, epsilon=solution.epsilon or config.epsilon,
                start_hour=solution.start_hour, settings=config.solver_settings(),
                v_min=problem.v_min, v_max=problem.v_max, coupling_reference=problem.coupling_reference,
            )
        print(energy.format_table())

    worst = violations.worst
    print(f"Monte-Carlo ({violations.family}, n={violations.samples}, seed={violations.seed}): "
          f"max violation rate {violations.max_rate:.4f}"
          + (f" at {worst.bus}.{worst.phase} hour {worst.hour} ({worst.side})" if worst else ""))
    print(f"Oracle: max |V| discrepancy {oracle.max_discrepancy:.3e} p.u.")
    for warning in violations.warnings:
        print(f"warning: {warning}")

    report = build_report(violations, energy, oracle, seeds={"monte_carlo": config.seed},
                          extra={"low_confidence": moments.low_confidence})
    save_report(config.output_path("report.json"), report, metrics_collector.timing())
    return 0


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    config.require_paths("feeder")
    feeder = load_feeder(config.feeder)
    settings = SyntheticSettings(days=args.days, samples_per_hour=args.samples_per_hour, seed=config.seed)
    dataset = generate_dataset(feeder, settings)
    teachers = dataset.select_teachers(args.teachers)
    out = Path(config.output_dir)
    write_dataset(dataset, out / "pmu", out / "sm", teachers)
    print(f"teachers: {', '.join(teachers) if teachers else '(none)'}")
    return 0


def cmd_run(args: argparse.Namespace, config: RunConfig) -> int:
    """enrich -> solve -> validate with one configuration."""
    moments = config.moments or str(config.output_path("moments.json"))
    dispatch = config.dispatch or str(config.output_path("dispatch.json"))
    config = config.with_overrides(moments=moments, dispatch=dispatch)
    for command in (cmd_enrich, cmd_solve, cmd_validate):
        code = command(args, config)
        if code:
            return code
    return 0


def cmd_check(args: argparse.Namespace, config: RunConfig) -> int:
    status = health_checker.check_environment()
    _print_json({"health": status, "config": app_config.to_dict()})
    return 0 if status["status"] != "unhealthy" else 1


# Parser

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration; flags override its fields")
    parser.add_argument("--feeder", help="feeder JSON file")
    parser.add_argument("--output-dir", dest="output_dir", help="directory for outputs")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--workers", type=int, help="thread pool size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvr-dispatch", description=__doc__.splitlines()[1])
    parser.add_argument("--log-level", default=None, help="debug, info, warning, error")
    parser.add_argument("--log-format", default=None, choices=("pretty", "json"))
    sub = parser.add_subparsers(dest="command", required=True)

    feeder = sub.add_parser("feeder", help="feeder utilities")
    feeder_sub = feeder.add_subparsers(dest="feeder_command", required=True)
    validate_feeder = feeder_sub.add_parser("validate", help="check radiality, phases and impedances")
    validate_feeder.add_argument("path", help="feeder JSON file")
    validate_feeder.set_defaults(handler=cmd_feeder_validate)

    enrich = sub.add_parser("enrich", help="enrich smart-meter data and estimate moments")
    _add_common(enrich)
    enrich.add_argument("--pmu-dir", dest="pmu_dir")
    enrich.add_argument("--sm-dir", dest="sm_dir")
    enrich.add_argument("--moments", help="output moments.json path")
    enrich.add_argument("--sm-only", dest="sm_only", action="store_true", default=None,
                        help="build low-confidence moments from hourly data alone")
    enrich.add_argument("--bins", type=int)
    enrich.add_argument("--weights", choices=("inverse", "literal"))
    enrich.add_argument("--correlation", choices=("none", "bus-hour", "hour"))
    enrich.add_argument("--reactive-coupling", dest="reactive_coupling", choices=("independent", "power_factor"))
    enrich.set_defaults(handler=cmd_enrich)

    solve = sub.add_parser("solve", help="solve the reactive-power dispatch")
    _add_common(solve)
    solve.add_argument("--moments")
    solve.add_argument("--dispatch", help="output dispatch.json path")
    solve.add_argument("--mode", choices=("det", "ro", "drcc"))
    solve.add_argument("--epsilon", type=float)
    solve.add_argument("--horizon", type=int)
    solve.add_argument("--start-hour", dest="start_hour", type=int)
    solve.add_argument("--v-min", dest="v_min", type=float, help="squared p.u.")
    solve.add_argument("--v-max", dest="v_max", type=float, help="squared p.u.")
    solve.add_argument("--ro-interpretation", dest="ro_interpretation", choices=("half_width", "variance"))
    solve.add_argument("--coupling-reference", dest="coupling_reference", choices=("base_profile", "bound"))
    solve.set_defaults(handler=cmd_solve)

    validate = sub.add_parser("validate", help="Monte-Carlo, oracle and energy checks of a dispatch")
    _add_common(validate)
    validate.add_argument("--moments")
    validate.add_argument("--dispatch")
    validate.add_argument("--samples", type=int)
    validate.add_argument("--family", choices=("gaussian", "two_point"))
    validate.add_argument("--skip-energy", dest="skip_energy", action="store_true")
    validate.set_defaults(handler=cmd_validate)

    synth = sub.add_parser("synth", help="write synthetic PMU and smart-meter files")
    _add_common(synth)
    synth.add_argument("--days", type=int, default=7)
    synth.add_argument("--teachers", type=int, default=8)
    synth.add_argument("--samples-per-hour", dest="samples_per_hour", type=int, default=60)
    synth.set_defaults(handler=cmd_synth)

    run = sub.add_parser("run", help="enrich, solve and validate in one go")
    _add_common(run)
    run.add_argument("--pmu-dir", dest="pmu_dir")
    run.add_argument("--sm-dir", dest="sm_dir")
    run.add_argument("--mode", choices=("det", "ro", "drcc"))
    run.add_argument("--epsilon", type=float)
    run.add_argument("--horizon", type=int)
    run.add_argument("--samples", type=int)
    run.add_argument("--skip-energy", dest="skip_energy", action="store_true")
    run.set_defaults(handler=cmd_run)

    check = sub.add_parser("check", help="report solvers, package versions and resources")
    check.set_defaults(handler=cmd_check)
    return parser


CONFIG_FIELDS = set(RunConfig.model_fields)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(getattr(args, "config", None))
    overrides = {k: v for k, v in vars(args).items() if k in CONFIG_FIELDS}
    return config.with_overrides(**overrides).with_environment()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or app_config.log_level, args.log_format or app_config.log_format,
                  app_config.log_file)
    metrics_collector.reset_metrics()
    try:
        config = resolve_config(args)
        return args.handler(args, config)
    except CvrError as e:
        message, code = exit_info(e)
        logger.error("command failed", command=args.command, error_code=e.code, error=e.message)
        print(f"error: {message} {e.message}", file=sys.stderr)
        return code
    except Exception as e:
        logger.error("unexpected error", command=args.command, error=str(e), exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
