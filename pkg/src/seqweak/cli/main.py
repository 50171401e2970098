"""``seqweak run`` / ``seqweak validate`` entry point."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from .. import __version__, kernels
from ..errors import (
    ContractViolation,
    DegeneratePostselection,
    OutcomeUnderflow,
    TruncationError,
    UndefinedWeakValue,
)
from .config import ConfigError, ExperimentConfig, config_echo, validate_config
from .experiments import PIPELINES, Table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_GUARD = 4
OUT_DIR_ENV = "SEQWEAK_OUT_DIR"

NUMERICAL_ERRORS = (ContractViolation, DegeneratePostselection, UndefinedWeakValue, TruncationError, OutcomeUnderflow)


@dataclasses.dataclass
class RunResult:
    status: int
    table: Table
    csv_path: Path
    sidecar_path: Path
    guard_failures: list[str]


def _cell(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    if hasattr(x, "dtype"):
        return _cell(x.item())
    return str(x)


def write_csv(table: Table, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_cell(x) for x in row])


def version_string() -> str:
    """``git describe`` of the source tree, or the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, complex):
        return repr(x)
    return x


def resolve_output(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> Path:
    """Output directory precedence: ``out_dir`` argument, env var, config path."""
    target = Path(cfg.output_path)
    base = out_dir or os.environ.get(OUT_DIR_ENV)
    if base:
        target = Path(base) / target.name
    if target.suffix != ".csv":
        target = target.with_suffix(".csv")
    return target


def run_experiment(
    cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None, threads: int = 1
) -> RunResult:
    """Run the pipeline for ``cfg`` and write its CSV and JSON sidecar.

    Numerical contract violations propagate as exceptions; statistical
    guard failures still write the outputs and report status 4.
    """
    t0 = time.perf_counter()
    table = PIPELINES[cfg.experiment](cfg, threads=threads)
    elapsed = time.perf_counter() - t0
    csv_path = resolve_output(cfg, out_dir)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, csv_path)
    sidecar = csv_path.with_suffix(".json")
    meta = {
        "config": _jsonable(config_echo(cfg)),
        "experiment": cfg.experiment,
        "version": version_string(),
        "seed": cfg.seed,
        "wall_clock_seconds": elapsed,
        "threads": threads,
        "backend": kernels.backend(),
        "guard_failures": table.guard_failures,
    }
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    status = EXIT_GUARD if table.guard_failures else EXIT_OK
    return RunResult(status, table, csv_path, sidecar, list(table.guard_failures))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqweak", description="Sequential weak measurement experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", default=None, help="output directory")
    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("config")
    return p


def _error(payload: dict) -> None:
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = validate_config(args.config)
        if args.command == "run":
            if args.seed is not None:
                if not 0 <= args.seed < 2**64:
                    raise ConfigError("invalid-value", "seed must be a 64-bit unsigned integer", None, "seed")
                cfg.seed = args.seed
                cfg.raw = {**cfg.raw, "seed": args.seed}
            if args.threads < 1:
                raise ConfigError("invalid-value", "--threads must be >= 1", None, "threads")
    except ConfigError as exc:
        _error(exc.as_dict())
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        _error({"error": "numerical-contract", "type": type(exc).__name__, "message": str(exc)})
        return EXIT_NUMERICAL

    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return EXIT_OK

    try:
        result = run_experiment(cfg, args.out, args.threads)
    except NUMERICAL_ERRORS as exc:
        _error({"error": "numerical-contract", "type": type(exc).__name__, "message": str(exc)})
        return EXIT_NUMERICAL
    print(result.csv_path)
    if result.status == EXIT_GUARD:
        _error({"error": "statistical-guard", "failures": result.guard_failures})
    return result.status


if __name__ == "__main__":
    sys.exit(main())
