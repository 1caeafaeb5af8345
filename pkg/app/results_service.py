from collections.abc import Iterable
from logging import getLogger

import numpy as np
from sqlmodel import select

from app.database import get_session
from app.models import AggregateRow, RunRecord, RunRow

logger = getLogger(__name__)

_AGGREGATED = ("duration_ms", "tps", "reexecutions", "failed_validations")


class ResultsService:
    """Persistence and aggregation of sweep measurements."""

    @staticmethod
    def record_run(sweep_id: str, row: RunRow) -> RunRecord:
        with get_session() as session:
            record = RunRecord(sweep_id=sweep_id, **row.model_dump())
            session.add(record)
            session.commit()
            session.refresh(record)
            return record

    @staticmethod
    def get_runs(sweep_id: str) -> list[RunRow]:
        """Rows of one sweep in insertion order."""
        with get_session() as session:
            statement = (
                select(RunRecord).where(RunRecord.sweep_id == sweep_id).order_by(RunRecord.id)  # type: ignore[arg-type]
            )
            records = session.exec(statement).all()
            return [RunRow.model_validate(record.model_dump()) for record in records]

    @staticmethod
    def aggregate(sweep_id: str) -> list[AggregateRow]:
        rows = ResultsService.get_runs(sweep_id)
        if not rows:
            logger.warning(f"No runs recorded for sweep {sweep_id}")
        return ResultsService.aggregate_rows(rows)

    @staticmethod
    def aggregate_rows(rows: Iterable[RunRow]) -> list[AggregateRow]:
        """Mean and sample standard deviation per (engine, workers, knowledge), in first-seen order."""
        groups: dict[tuple, list[RunRow]] = {}
        for row in rows:
            groups.setdefault((row.engine, row.workers, row.knowledge), []).append(row)

        aggregates = []
        for (engine, workers, knowledge), group in groups.items():
            stats: dict[str, float] = {}
            for name in _AGGREGATED:
                values = np.array([getattr(row, name) for row in group], dtype=np.float64)
                stats[f"{name}_mean"] = float(values.mean())
                stats[f"{name}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            aggregates.append(
                AggregateRow(engine=engine, workers=workers, knowledge=knowledge, runs=len(group), **stats)
            )
        return aggregates
