import pytest

from app.models import EngineKind, RunRow
from app.results_service import ResultsService


def row(engine: EngineKind = EngineKind.NEMO, workers: int = 8, knowledge: int = 50, **values) -> RunRow:
    defaults = dict(
        seed=1,
        repeat=0,
        block_size=100,
        duration_ms=100.0,
        tps=1000.0,
        reexecutions=4,
        failed_validations=4,
        greedy_commits=0,
        verified=True,
    )
    return RunRow(engine=engine, workers=workers, knowledge=knowledge, **{**defaults, **values})


class TestAggregateRows:
    """Per-cell mean and standard deviation."""

    def test_single_run_has_zero_std(self):
        """Test that a single run aggregates with zero deviation."""
        [aggregate] = ResultsService.aggregate_rows([row()])
        assert aggregate.runs == 1
        assert aggregate.tps_mean == 1000.0
        assert aggregate.tps_std == 0.0

    def test_sample_standard_deviation(self):
        """Test that aggregation uses the sample standard deviation."""
        rows = [row(repeat=i, reexecutions=r) for i, r in enumerate([2, 4, 6])]
        [aggregate] = ResultsService.aggregate_rows(rows)
        assert aggregate.reexecutions_mean == pytest.approx(4.0)
        assert aggregate.reexecutions_std == pytest.approx(2.0)

    def test_groups_by_cell_in_first_seen_order(self):
        """Test grouping by engine, workers and knowledge."""
        rows = [row(workers=16), row(engine=EngineKind.PCC, knowledge=100), row(workers=16, repeat=1), row(workers=8)]
        aggregates = ResultsService.aggregate_rows(rows)
        assert [(a.engine, a.workers, a.knowledge, a.runs) for a in aggregates] == [
            (EngineKind.NEMO, 16, 50, 2),
            (EngineKind.PCC, 8, 100, 1),
            (EngineKind.NEMO, 8, 50, 1),
        ]

    def test_empty(self):
        assert ResultsService.aggregate_rows([]) == []


class TestResultsStore:
    def test_record_and_read_back(self, new_db):
        record = ResultsService.record_run("sweep-a", row(seed=3))
        assert record.id is not None
        runs = ResultsService.get_runs("sweep-a")
        assert runs == [row(seed=3)]

    def test_sweeps_are_isolated(self, new_db):
        """Test that runs of different sweeps never mix."""
        ResultsService.record_run("sweep-a", row())
        ResultsService.record_run("sweep-b", row(engine=EngineKind.BLOCK_STM))
        assert [r.engine for r in ResultsService.get_runs("sweep-b")] == [EngineKind.BLOCK_STM]

    def test_aggregate_from_store(self, new_db):
        for i, tps in enumerate([900.0, 1100.0]):
            ResultsService.record_run("sweep-c", row(repeat=i, tps=tps))
        [aggregate] = ResultsService.aggregate("sweep-c")
        assert aggregate.tps_mean == pytest.approx(1000.0)
        assert aggregate.runs == 2

    def test_unknown_sweep(self, new_db):
        """Test aggregating a sweep with no stored runs."""
        assert ResultsService.aggregate("missing") == []
