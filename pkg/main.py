"""Command-line entry point for the tensor-network tailoring toolkit."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List

import pandas as pd

from src import bench, ed_oracle, exact_solutions, validation
from src.config import ConfigError, ExperimentConfig
from src.logger import get_logger, set_level
from src.models import parse_model
from src.tensor_core import NumericalError
from src.trotter_net import build_theta

logger = get_logger("cli")

CONFIG_FLAGS = (
    "model", "tau", "chi", "beta", "finetune", "method", "eta", "max_steps", "f_tol", "grad_tol",
    "boundary_cache", "out", "json_out", "trace_out", "checkpoint_dir", "resume", "seed",
    "deterministic", "jobs",
)


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Flat key = value file; flags override it.")
    common.add_argument("--dump-config", action="store_true", help="Print the effective configuration and exit.")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
    common.add_argument("--model", help="ising:h=<h>, xy, zero or custom:<path>.")
    common.add_argument("--tau", help="Trotter slice.")
    common.add_argument("--chi", help="Boundary bond dimension (comma list allowed for sweeps).")
    common.add_argument("--beta", help="Comma list or logspace:a:b:n (powers of two).")
    common.add_argument("--finetune", choices=("on", "off"))
    common.add_argument("--method", choices=("newton", "gradient"), help="Fine-tune method.")
    common.add_argument("--eta", help="Fine-tune learning rate.")
    common.add_argument("--max-steps", dest="max_steps")
    common.add_argument("--f-tol", dest="f_tol")
    common.add_argument("--grad-tol", dest="grad_tol", help="Stationarity residual that counts as converged.")
    common.add_argument("--boundary-cache", dest="boundary_cache", help="Directory for cached boundaries.")
    common.add_argument("--out", help="CSV output path.")
    common.add_argument("--json-out", dest="json_out", help="JSON output path with provenance.")
    common.add_argument("--trace-out", dest="trace_out", help="Directory for per-point fine-tune trace CSVs.")
    common.add_argument("--checkpoint-dir", dest="checkpoint_dir", help="Directory for per-point (A, B) checkpoints.")
    common.add_argument("--resume", dest="resume", action="store_const", const="on", help="Start from saved checkpoints.")
    common.add_argument("--seed")
    common.add_argument("--deterministic", dest="deterministic", action="store_const", const="on")
    common.add_argument("--no-deterministic", dest="deterministic", action="store_const", const="off")
    common.add_argument("--jobs", help="Concurrent grid points.")

    parser = argparse.ArgumentParser(description="Finite-temperature free energies by tensor-network tailoring.")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("boundary", parents=[common], help="Converge and cache the zero-temperature boundaries.")
    commands.add_parser("tailor", parents=[common], help="One (beta, chi) point.")
    commands.add_parser("sweep", parents=[common], help="All points of the chi x beta grid.")
    exact = commands.add_parser("exact", parents=[common], help="Analytic (T, f_exact) table.")
    exact.add_argument("--temperatures", type=_float_list, help="Comma list; defaults to 1/beta over the grid.")
    ed = commands.add_parser("ed", parents=[common], help="Exact diagonalization (N, T, f, E) table.")
    ed.add_argument("--sizes", type=_int_list, default=[8, 10, 12, 14])
    ed.add_argument("--temperatures", type=_float_list, default=[0.25, 0.5, 1.0])
    commands.add_parser("validate", parents=[common], help="Run the invariant suite.")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {key: getattr(args, key) for key in CONFIG_FLAGS if getattr(args, key, None) is not None}
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_env(overrides)


def _emit(frame: pd.DataFrame, out: Path | None) -> None:
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, float_format="%.17g")
        logger.info("Wrote %s rows to %s.", len(frame), out)
    else:
        sys.stdout.write(frame.to_csv(index=False, float_format="%.17g"))


def run_boundary(config: ExperimentConfig, args: argparse.Namespace) -> int:
    model = parse_model(config.model)
    theta = build_theta(model, config.tau)
    cache = bench.BoundaryCache(config.boundary_cache)
    rows = []
    for chi in config.chis:
        entry = cache.get_or_compute(
            theta, chi, config.boundary_tol, config.boundary_max_iters,
            config.seed if config.deterministic else None,
        )
        rows.append(
            {
                "model": model.label,
                "tau": config.tau,
                "chi": chi,
                "iterations": entry.iterations,
                "final_delta": entry.final_delta,
                "seconds": entry.seconds,
                "cached": entry.hit,
            }
        )
    _emit(pd.DataFrame(rows), config.out)
    return 0


def run_tailor(config: ExperimentConfig, args: argparse.Namespace) -> int:
    record = bench.run_point(config, config.betas[0], config.chi)
    records = [record]
    if config.out:
        bench.write_csv(records, config.out)
    else:
        sys.stdout.write(bench.records_frame(records).to_csv(index=False, float_format="%.17g"))
    if config.json_out:
        bench.write_json(records, config.json_out, config)
    return 0 if record.status == "ok" else 1


def run_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    records = bench.sweep(config)
    if not config.out:
        sys.stdout.write(bench.records_frame(records).to_csv(index=False, float_format="%.17g"))
    return 0 if all(record.status == "ok" for record in records) else 1


def run_exact(config: ExperimentConfig, args: argparse.Namespace) -> int:
    temperatures = args.temperatures or [1.0 / beta for beta in config.betas]
    _emit(exact_solutions.exact_table(parse_model(config.model), temperatures), config.out)
    return 0


def run_ed(config: ExperimentConfig, args: argparse.Namespace) -> int:
    _emit(ed_oracle.ed_table(parse_model(config.model), args.sizes, args.temperatures), config.out)
    return 0


def run_validate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = validation.validate_all()
    sys.stdout.write(report.to_frame().to_string(index=False) + "\n")
    for failure in report.failures:
        logger.error("Failed check %s: %s", failure.name, failure.detail)
    return 0 if report.passed else 1


def main(argv: List[str] | None = None) -> int:
    actions: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
        "boundary": run_boundary,
        "tailor": run_tailor,
        "sweep": run_sweep,
        "exact": run_exact,
        "ed": run_ed,
        "validate": run_validate,
    }

    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        config = load_config(args)
    except ConfigError as exc:
        logger.error("Invalid configuration: %s", exc)
        return 2
    if args.dump_config:
        sys.stdout.write(config.dump())
        return 0

    try:
        return actions[args.command](config, args)
    except (NumericalError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
