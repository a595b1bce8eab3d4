import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pbsmc import __version__
from pbsmc.bench.scenarios import list_builtins
from pbsmc.config import (
    apply_environment,
    effective_config,
    load_config,
    paper_config,
    save_config,
    section,
    validate_config,
)
from pbsmc.errors import ConfigError, exit_code_for
from pbsmc.output.collector import resolve_output_dir
from pbsmc.runner import CERTIFY, RUN, ScenarioOutcome, ScenarioRunner, overall_exit_code

logger = logging.getLogger("PbsmcCLI")

DEFAULT_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EFFECTIVE_CONFIG_NAME = "effective_config.yaml"


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="pbsmc",
        description="Sliding-mode control of mechanical port-Hamiltonian systems",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        (RUN, "Certify and simulate every scenario of a config"),
        (CERTIFY, "Check the controller assumptions without simulating"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument(
            "config",
            nargs="?",
            help="Path to a scenario config, or 'paper' for the built-in arm scenarios "
            "(default: $PBSMC_CONFIG)",
        )
        cmd.add_argument("--out", help="Output directory (default: output.directory, $PBSMC_OUTPUT_DIR, ./out)")
        cmd.add_argument("--workers", type=int, help="Worker processes (default: physical cores)")
        cmd.add_argument(
            "--waive-assumptions",
            action="store_true",
            help="Simulate even when the assumptions cannot be certified",
        )
        cmd.add_argument("--step", type=float, help="Override the integration step of every scenario")
        cmd.add_argument("--t-final", type=float, help="Override the horizon of every scenario")
        cmd.add_argument(
            "--log-level",
            choices=["DEBUG", "INFO", "WARNING", "ERROR"],
            help="Log level (default: INFO)",
        )
        cmd.add_argument(
            "--dump-config",
            metavar="PATH",
            help="Write the effective config to PATH and exit without running",
        )

    sub.add_parser("list", help="List the built-in scenarios")
    return parser


def _configure_logging(config: dict, flag_level: Optional[str]):
    settings = section(config, "logging")
    level_name = flag_level or settings.get("level", "INFO")
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level '{level_name}'", key="logging.level")
    logging.basicConfig(level=level, format=settings.get("format") or DEFAULT_LOG_FORMAT)


def _load(source: Optional[str]) -> dict:
    if source == "paper":
        return apply_environment(paper_config())
    return load_config(source)


def _print_certification(outcome: ScenarioOutcome):
    print(f"{outcome.name} [{outcome.mode}]: {outcome.status}")
    if outcome.error:
        print(f"  error: {outcome.error}")
    cert = outcome.certification or {}
    for key in ("epsilon", "epsilon_argmin", "c", "rho", "a", "U0", "reaching_time_bound", "gamma1_range", "gamma2_range"):
        if cert.get(key) is not None:
            print(f"  {key}: {cert[key]}")


def _print_run(outcome: ScenarioOutcome):
    line = f"{outcome.name} [{outcome.mode}]: {outcome.status} ({outcome.elapsed:.1f}s)"
    if outcome.metrics:
        line += f", sliding entry {outcome.metrics.get('sliding_entry_time')}"
    if outcome.error:
        line += f": {outcome.error}"
    print(line)


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, execute the command and return the process exit status."""
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for line in list_builtins():
            print(line)
        return 0

    try:
        config = _load(args.config)
        _configure_logging(config, args.log_level)
        effective = effective_config(
            config,
            step=args.step,
            t_final=args.t_final,
            waive_assumptions=args.waive_assumptions,
            workers=args.workers,
            output_dir=args.out,
        )
        validate_config(effective)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return exit_code_for(e)

    if args.dump_config:
        return 0 if save_config(effective, args.dump_config) else 1

    try:
        output_dir = resolve_output_dir(effective)
        output_dir.mkdir(parents=True, exist_ok=True)
        save_config(effective, str(Path(output_dir) / EFFECTIVE_CONFIG_NAME))

        runner = ScenarioRunner(effective, output_dir=str(output_dir))
        outcomes = asyncio.run(runner.run(args.command))
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 1
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return exit_code_for(e)

    for outcome in outcomes:
        if args.command == CERTIFY:
            _print_certification(outcome)
        else:
            _print_run(outcome)

    code = overall_exit_code(outcomes)
    failed = sum(1 for o in outcomes if not o.ok)
    logger.info(f"{len(outcomes) - failed}/{len(outcomes)} scenario(s) succeeded, exit {code}")
    return code


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
