"""Benchmark harness: generate | run | sweep | verify."""

import argparse
import csv
import json
import logging
import os
import sys
import tomllib
import uuid
from collections.abc import Callable
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path
from typing import Any, Optional

from pydantic import ValidationError
from tqdm import tqdm

from app.database import create_tables
from app.engines import EngineService, ProgressTimeoutError
from app.models import AggregateRow, Block, EngineConfig, EngineKind, EpochReport, RunRow, SweepSpec
from app.oracle import Violation, check_run
from app.results_service import ResultsService
from app.workload import BlockFileError, BlockSummary, WorkloadError, WorkloadService

logger = getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_TIMEOUT = 3

# PCC always has exhaustive sets, so its rows are reported at full knowledge
PCC_KNOWLEDGE = 100

RUN_COLUMNS = list(RunRow.model_fields)
AGGREGATE_COLUMNS = list(AggregateRow.model_fields)


class VerificationError(ValueError):
    def __init__(self, engine: EngineKind, violations: list[Violation]) -> None:
        self.violations = violations
        super().__init__(f"{engine.value} run failed verification with {len(violations)} violations: {violations[0]}")


# -- commands --------------------------------------------------------------------------


def cmd_generate(workload: dict[str, Any], out_path: Path) -> BlockSummary:
    """Generate a block, write it to out_path and print its summary as JSON."""
    params = WorkloadService.build_params(**workload)
    block = WorkloadService.generate_block(params)
    WorkloadService.save_block(block, out_path)
    summary = WorkloadService.summarize_block(block)
    _write_json({"path": str(out_path), **summary.model_dump()})
    return summary


def cmd_run(block: Block, config: EngineConfig, verify: bool) -> EpochReport:
    """Run one epoch and print its scalar metrics; raises VerificationError on any violation."""
    report = EngineService.run(block, config)
    violations = check_run(block, report) if verify else []
    _write_json(
        {
            **report.scalars(),
            "knowledge": block.params.knowledge if block.params is not None else None,
            "seed": block.params.seed if block.params is not None else None,
            "verified": verify and not violations,
            "violations": [str(v) for v in violations],
            "final_state": {str(o): v.writer for o, v in sorted(report.final_state.items())},
        }
    )
    if violations:
        raise VerificationError(config.engine, violations)
    return report


@dataclass(frozen=True)
class SweepCell:
    engine: EngineKind
    workers: int
    knowledge: int


def plan_cells(spec: SweepSpec) -> list[SweepCell]:
    """Engine x workers x knowledge cells; sequential runs once, PCC once per workers value."""
    cells: list[SweepCell] = []
    for engine in spec.engines:
        match engine:
            case EngineKind.SEQUENTIAL:
                cells.append(SweepCell(engine, 1, 0))
            case EngineKind.PCC:
                cells.extend(SweepCell(engine, w, PCC_KNOWLEDGE) for w in spec.workers_list)
            case _:
                cells.extend(SweepCell(engine, w, k) for w in spec.workers_list for k in spec.knowledge_list)
    return cells


def cmd_sweep(
    spec: SweepSpec,
    out_csv: Path,
    aggregate_csv: Optional[Path] = None,
    sweep_id: Optional[str] = None,
    progress: bool = True,
    watchdog_s: Optional[float] = None,
) -> list[RunRow]:
    """Run the sweep cross product, one CSV row per run flushed immediately.

    Blocks are generated per (seed, knowledge) and shared by every repeat. When sweep_id is
    given each row is also persisted to the results store.
    """
    cells = plan_cells(spec)
    total = len(cells) * len(spec.seeds) * spec.repeats
    rows: list[RunRow] = []
    if sweep_id is not None:
        logger.info(f"Recording sweep {sweep_id} to the results store")

    with out_csv.open("w", newline="") as handle, tqdm(total=total, unit="run", disable=not progress) as bar:
        writer = csv.DictWriter(handle, fieldnames=RUN_COLUMNS)
        writer.writeheader()
        handle.flush()
        for seed in spec.seeds:
            blocks = _block_cache(spec, seed)
            for cell in cells:
                block = blocks(cell.knowledge)
                config = EngineConfig(engine=cell.engine, workers=cell.workers, seed=seed, watchdog_s=watchdog_s)
                for repeat in range(spec.repeats):
                    bar.set_description(f"{cell.engine.value} w={cell.workers} k={cell.knowledge} seed={seed}")
                    report = EngineService.run(block, config)
                    violations = check_run(block, report) if spec.verify else []
                    row = RunRow(
                        engine=cell.engine,
                        workers=report.workers,
                        knowledge=cell.knowledge,
                        seed=seed,
                        repeat=repeat,
                        block_size=report.block_size,
                        duration_ms=report.duration_ms,
                        tps=report.tps,
                        reexecutions=report.reexecutions,
                        failed_validations=report.failed_validations,
                        greedy_commits=report.greedy_commits,
                        verified=spec.verify and not violations,
                    )
                    writer.writerow(row.model_dump(mode="json"))
                    handle.flush()
                    if sweep_id is not None:
                        ResultsService.record_run(sweep_id, row)
                    rows.append(row)
                    bar.update(1)
                    if violations:
                        raise VerificationError(cell.engine, violations)

    aggregates = ResultsService.aggregate_rows(rows)
    if aggregate_csv is not None:
        write_aggregate_csv(aggregates, aggregate_csv)
    logger.info(f"Sweep finished: {len(rows)} runs, {len(aggregates)} aggregate rows")
    return rows


def write_aggregate_csv(aggregates: list[AggregateRow], path: Path) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=AGGREGATE_COLUMNS)
        writer.writeheader()
        for row in aggregates:
            writer.writerow(row.model_dump(mode="json"))


def _block_cache(spec: SweepSpec, seed: int) -> Callable[[int], Block]:
    cache: dict[int, Block] = {}

    def block_for(knowledge: int) -> Block:
        if knowledge not in cache:
            params = WorkloadService.build_params(
                **{**spec.workload, "block_size": spec.block_size, "knowledge": knowledge, "seed": seed}
            )
            cache[knowledge] = WorkloadService.generate_block(params)
        return cache[knowledge]

    return block_for


# -- argument handling -----------------------------------------------------------------


def _split(cast: Callable[[str], Any]) -> Callable[[str], list[Any]]:
    def parse(value: str) -> list[Any]:
        try:
            return [cast(part.strip()) for part in value.split(",") if part.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nemo-bench", description="Parallel execution engine benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def workload_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--params", type=Path, help="TOML file with sweep keys and a [workload] table")
        p.add_argument("--block-size", type=int, dest="block_size")
        p.add_argument("--knowledge", type=int)
        p.add_argument("--seed", type=int)

    def engine_flags(p: argparse.ArgumentParser) -> None:
        workload_flags(p)
        p.add_argument("--block", type=Path, help="load this block file instead of generating one")
        p.add_argument("--engine", type=EngineKind, choices=list(EngineKind), default=EngineKind.NEMO)
        p.add_argument("--workers", type=int, default=8)
        p.add_argument("--watchdog", type=float, dest="watchdog_s")

    generate = sub.add_parser("generate", help="generate a block file and print its summary")
    workload_flags(generate)
    generate.add_argument("--out", type=Path, required=True)

    run = sub.add_parser("run", help="run one engine on one block and print the report as JSON")
    engine_flags(run)
    run.add_argument("--verify", action="store_true")

    verify = sub.add_parser("verify", help="run one engine and check the result against the oracle")
    engine_flags(verify)

    sweep = sub.add_parser("sweep", help="run engines x workers x knowledge x seeds and write CSV rows")
    sweep.add_argument("--params", type=Path)
    sweep.add_argument("--engine", type=_split(EngineKind), dest="engines", help="comma-separated engines")
    sweep.add_argument("--workers", type=_split(int), dest="workers_list")
    sweep.add_argument("--knowledge", type=_split(int), dest="knowledge_list")
    sweep.add_argument("--seed", type=_split(int), dest="seeds")
    sweep.add_argument("--block-size", type=int, dest="block_size")
    sweep.add_argument("--repeats", type=int)
    sweep.add_argument("--out", type=Path, required=True)
    sweep.add_argument("--aggregate-out", type=Path, dest="aggregate_out")
    sweep.add_argument("--verify", action="store_true", default=None)
    sweep.add_argument("--db", action="store_true", help="also persist rows to APP_DATABASE_URL")
    sweep.add_argument("--sweep-id", dest="sweep_id")
    sweep.add_argument("--no-progress", action="store_true")
    sweep.add_argument("--watchdog", type=float, dest="watchdog_s")
    return parser


def load_params_file(path: Optional[Path]) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except OSError as e:
        logger.error(f"Could not read parameter file {path}: {e}")
        raise WorkloadError(f"{path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        logger.error(f"Malformed parameter file {path}: {e}")
        raise WorkloadError(f"{path}: {e}") from e


def workload_overrides(args: argparse.Namespace, file_values: dict[str, Any]) -> dict[str, Any]:
    """WorkloadParams overrides: the file's [workload] table, then its block_size, then flags."""
    overrides = dict(file_values.get("workload", {}))
    if "block_size" in file_values:
        overrides["block_size"] = file_values["block_size"]
    for name in ("block_size", "knowledge", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return overrides


def sweep_spec(args: argparse.Namespace, file_values: dict[str, Any]) -> SweepSpec:
    values = {k: v for k, v in file_values.items() if k != "workload"}
    values["workload"] = dict(file_values.get("workload", {}))
    for name in ("engines", "workers_list", "knowledge_list", "seeds", "block_size", "repeats", "verify"):
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    values.setdefault("engines", list(EngineKind))
    values.setdefault("workers_list", [8])
    values.setdefault("knowledge_list", [0])
    values.setdefault("seeds", [1])
    try:
        return SweepSpec.model_validate(values)
    except ValidationError as e:
        logger.error(f"Invalid sweep specification: {e}")
        raise WorkloadError(str(e)) from e


def _load_or_generate(args: argparse.Namespace) -> Block:
    if args.block is not None:
        return WorkloadService.load_block(args.block)
    overrides = workload_overrides(args, load_params_file(args.params))
    return WorkloadService.generate_block(WorkloadService.build_params(**overrides))


def _engine_config(args: argparse.Namespace, block: Block) -> EngineConfig:
    seed = block.params.seed if block.params is not None else 0
    try:
        return EngineConfig(engine=args.engine, workers=args.workers, seed=seed, watchdog_s=args.watchdog_s)
    except ValidationError as e:
        logger.error(f"Invalid engine configuration: {e}")
        raise WorkloadError(str(e)) from e


def _dispatch(args: argparse.Namespace) -> None:
    match args.command:
        case "generate":
            cmd_generate(workload_overrides(args, load_params_file(args.params)), args.out)
        case "run" | "verify":
            block = _load_or_generate(args)
            cmd_run(block, _engine_config(args, block), verify=args.command == "verify" or args.verify)
        case "sweep":
            spec = sweep_spec(args, load_params_file(args.params))
            aggregate_out = args.aggregate_out or args.out.with_name(f"{args.out.stem}_aggregate.csv")
            sweep_id = None
            if args.db:
                create_tables()
                sweep_id = args.sweep_id or uuid.uuid4().hex[:12]
            cmd_sweep(
                spec,
                args.out,
                aggregate_csv=aggregate_out,
                sweep_id=sweep_id,
                progress=not args.no_progress,
                watchdog_s=args.watchdog_s,
            )


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or os.environ.get("NEMO_LOG_LEVEL", "INFO")).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    # suppress sqlalchemy engine logs below warning level
    logging.getLogger("sqlalchemy.engine.Engine").setLevel(logging.WARNING)


def cli(argv: Optional[list[str]] = None) -> None:
    """Console entry point that sets up logging and exits with the command's return code."""
    configure_logging()
    sys.exit(main(argv))


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ProgressTimeoutError as e:
        logger.error(f"Epoch timed out: {e}")
        sys.stderr.write(f"timeout: {e}\n")
        return EXIT_TIMEOUT
    except VerificationError as e:
        logger.error(f"Verification failed: {e}")
        sys.stderr.write(f"verification failed: {e}\n")
        return EXIT_INVALID
    except (WorkloadError, BlockFileError) as e:
        logger.error(f"Invalid input: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INVALID
    return EXIT_OK


def _write_json(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")

