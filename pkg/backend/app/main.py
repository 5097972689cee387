"""Command-line entry point: ``run <config.json>`` and ``sweep <config.json>``."""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from app.core.config import get_settings
from app.core.logging import set_level, setup_logging
from app.models.run import RunConfig
from app.services.runner import LabRunner

logger = setup_logging("cli")

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lane-emden",
        description="Compute and diagnose Lane-Emden solutions as the exponent grows.",
    )
    parser.add_argument("command", choices=["run", "sweep"], help="single branch or sweep of entries")
    parser.add_argument("config", type=Path, help="JSON run configuration")
    parser.add_argument("--jobs", type=int, default=None, help="parallel sweep entries")
    parser.add_argument("--log", choices=["info", "debug"], default=None, help="log level")
    return parser


def load_config(path: Path) -> RunConfig:
    """Read and validate a run configuration."""
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def _emit(record: dict[str, Any]) -> None:
    print(json.dumps(record, ensure_ascii=False, default=str), file=sys.stderr)


def _config_error(error_type: str, message: str, **extra: Any) -> int:
    _emit({"status": "error", "error_type": error_type, "code": "invalid_config", "message": message, **extra})
    return EXIT_CONFIG_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    set_level(args.log or settings.log_level)
    if args.jobs is not None and args.jobs < 1:
        return _config_error("ValueError", "--jobs must be at least 1")

    try:
        config = load_config(args.config)
    except ValidationError as exc:
        return _config_error("ValidationError", str(exc), errors=exc.errors(include_url=False))
    except OSError as exc:
        return _config_error(type(exc).__name__, str(exc))

    runner = LabRunner(config, settings=settings, jobs=args.jobs)
    if args.command == "sweep":
        sweep = config.sweep
        if sweep is None or not (sweep.h_list or sweep.p_list):
            return _config_error("EmptySweep", "sweep needs a non-empty h_list or p_list")
        outcome = runner.sweep()
    else:
        outcome = runner.run()

    if outcome.error is not None:
        _emit(outcome.error.to_record())
        return EXIT_RUN_ERROR
    logger.info("results written to %s", outcome.run_dir, extra={"run": config.name})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
