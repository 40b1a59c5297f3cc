"""Command-line entry point: python -m app.main --config experiment.json."""

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app.config import configure_logging, settings
from app.models.experiment import ExperimentConfig, Seeds
from app.models.reports import RunMetadata, encode_extended
from app.services.experiment_service import EXIT_BUDGET, EXIT_CONFIG, RunOutcome, run_experiment
from app.services.group import BudgetExceededError
from app.services.modulus import ConvergenceError
from app.services.validators import ValidationError, load_config

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factor-space",
        description="Geometry and modulus experiments on hyperbolic factor spaces B^n/G",
    )
    parser.add_argument("--config", required=True, help="path to the experiment JSON")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output' or ./results)")
    parser.add_argument("--threads", type=int, default=None, help="worker-pool cap")
    parser.add_argument("--strict", action="store_true", help="treat caveats as failures")
    parser.add_argument("--seed", type=int, default=None, help="override the root seed")
    parser.add_argument("--log-level", default=None, help="logging level")
    return parser


def apply_overrides(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    if seed is None:
        return config
    return config.model_copy(update={"seeds": Seeds(root=seed)})


def write_json(path: Path, data: Dict[str, Any]) -> None:
    path.write_text(json.dumps(encode_extended(data), sort_keys=True, indent=2) + "\n")


def write_table(path: Path, rows: List[Dict[str, Any]]) -> None:
    if not rows:
        return
    fieldnames = sorted({key for row in rows for key in row})
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(encode_extended(row))


def write_artifacts(out_dir: Path, outcome: RunOutcome, metadata: RunMetadata) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", outcome.report.to_json_dict())
    write_json(out_dir / "metadata.json", metadata.model_dump())
    for name, rows in outcome.tables.items():
        write_table(out_dir / f"{name}.csv", rows)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()

    try:
        config = apply_overrides(load_config(Path(args.config)), args.seed)
    except (ValidationError, OSError) as e:
        messages = e.messages if isinstance(e, ValidationError) else [str(e)]
        for message in messages:
            print(f"config error: {message}", file=sys.stderr)
        logger.error(f"config rejected: {'; '.join(messages)}")
        return EXIT_CONFIG

    out_dir = Path(args.out or config.output or "results")
    threads = args.threads or settings.threads
    try:
        outcome = run_experiment(config, threads=threads, strict=args.strict)
    except (BudgetExceededError, ConvergenceError) as e:
        print(f"budget error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as e:
        logger.error("experiment rejected its inputs", exc_info=True)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    finished = datetime.now(timezone.utc)
    metadata = RunMetadata(
        started_at=started.isoformat(),
        finished_at=finished.isoformat(),
        duration_seconds=round(time.perf_counter() - clock, 6),
        threads=threads,
        config_path=str(args.config),
        exit_status=outcome.exit_status,
    )
    write_artifacts(out_dir, outcome, metadata)
    print(outcome.report.summary)
    return outcome.exit_status


if __name__ == "__main__":
    sys.exit(main())
