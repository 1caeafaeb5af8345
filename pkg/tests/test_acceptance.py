"""Desk-scale reproduction of the headline results on the default workload.

Every test here runs the real workload durations and is marked slow.
"""

from functools import cache

import numpy as np
import pytest

from app.engines import EngineService
from app.models import Block, EngineConfig, EngineKind, EpochReport, WorkloadParams
from app.oracle import check_run
from app.workload import WorkloadService

pytestmark = pytest.mark.slow

SEEDS = [1, 2, 3, 4, 5]


@cache
def block_for(seed: int, knowledge: int, block_size: int = 1000) -> Block:
    return WorkloadService.generate_block(WorkloadParams(block_size=block_size, seed=seed, knowledge=knowledge))


def run(engine: EngineKind, workers: int, seed: int, knowledge: int, block_size: int = 1000) -> EpochReport:
    block = block_for(seed, knowledge, block_size)
    return EngineService.run(block, EngineConfig(engine=engine, workers=workers, seed=seed))


@cache
def reports(engine: EngineKind, workers: int, knowledge: int) -> tuple[EpochReport, ...]:
    return tuple(run(engine, workers, seed, knowledge) for seed in SEEDS)


def mean_of(engine: EngineKind, workers: int, knowledge: int, metric: str) -> float:
    return float(np.mean([getattr(r, metric) for r in reports(engine, workers, knowledge)]))


class TestSerializabilityMatrix:
    @pytest.mark.parametrize("engine", list(EngineKind))
    @pytest.mark.parametrize("workers", [2, 4, 8])
    @pytest.mark.parametrize("knowledge", [0, 50, 100])
    def test_no_violations(self, engine, workers, knowledge):
        """Test every engine against the oracle across workers and knowledge."""
        for seed in SEEDS:
            block = block_for(seed, knowledge, 200)
            report = EngineService.run(block, EngineConfig(engine=engine, workers=workers, seed=seed))
            assert check_run(block, report) == []


class TestForcedZeroReexecutions:
    @pytest.mark.parametrize("workers", [8, 16])
    def test_nemo_full_knowledge(self, workers):
        """Test that complete hints force zero re-executions."""
        for seed in SEEDS:
            assert run(EngineKind.NEMO, workers, seed, 100, block_size=200).reexecutions == 0

    def test_greedy_commit_owned_block(self):
        params = WorkloadParams(block_size=500, seed=1, owned_fraction=1.0)
        block = WorkloadService.generate_block(params)
        report = EngineService.run(block, EngineConfig(engine=EngineKind.NEMO, workers=16))
        assert report.greedy_commits == 500
        assert report.failed_validations == 0
        assert all(s.executions == 1 for s in report.per_txn)


class TestReexecutionTrends:
    def test_no_pq_matches_block_stm_without_hints(self):
        """Test that without hints the scheduler changes alone leave re-executions unchanged."""
        no_pq = mean_of(EngineKind.NEMO_NO_PQ, 16, 0, "reexecutions")
        block_stm = mean_of(EngineKind.BLOCK_STM, 16, 0, "reexecutions")
        assert no_pq == pytest.approx(block_stm, rel=0.15)

    @pytest.mark.parametrize("workers", [8, 16])
    def test_three_quarter_knowledge_halves_reexecutions(self, workers):
        """Test that most hints roughly halve re-executions."""
        no_pq = mean_of(EngineKind.NEMO_NO_PQ, workers, 75, "reexecutions")
        block_stm = mean_of(EngineKind.BLOCK_STM, workers, 0, "reexecutions")
        assert no_pq <= 0.6 * block_stm

    @pytest.mark.parametrize("knowledge", [0, 25, 50, 75])
    def test_priority_costs_reexecutions_under_partial_knowledge(self, knowledge):
        with_pq = mean_of(EngineKind.NEMO, 8, knowledge, "reexecutions")
        without_pq = mean_of(EngineKind.NEMO_NO_PQ, 8, knowledge, "reexecutions")
        assert with_pq >= without_pq


class TestThroughput:
    def test_sixteen_workers(self):
        """Test throughput ordering and magnitudes at sixteen workers."""
        nemo_full = mean_of(EngineKind.NEMO, 16, 100, "tps")
        nemo_90 = mean_of(EngineKind.NEMO, 16, 90, "tps")
        block_stm = mean_of(EngineKind.BLOCK_STM, 16, 0, "tps")
        pcc = mean_of(EngineKind.PCC, 16, 100, "tps")
        assert nemo_full >= 1.25 * block_stm
        assert nemo_full >= 1.3 * pcc
        assert nemo_90 >= 1.15 * block_stm
        assert nemo_full == pytest.approx(1574, rel=0.25)
        assert nemo_90 == pytest.approx(1409, rel=0.25)
        assert block_stm == pytest.approx(1105, rel=0.25)
        assert pcc == pytest.approx(979, rel=0.25)

    def test_eight_workers(self):
        assert mean_of(EngineKind.NEMO, 8, 100, "tps") >= 1.25 * mean_of(EngineKind.BLOCK_STM, 8, 0, "tps")

    def test_knowledge_trend(self):
        """Test that throughput grows with knowledge within noise."""
        levels = [0, 25, 50, 75, 90, 100]
        means = [mean_of(EngineKind.NEMO, 16, k, "tps") for k in levels]
        stds = [float(np.std([r.tps for r in reports(EngineKind.NEMO, 16, k)], ddof=1)) for k in levels]
        inversions = [i for i in range(1, len(levels)) if means[i] < means[i - 1]]
        assert len(inversions) <= 1
        for i in inversions:
            assert means[i - 1] - means[i] <= max(stds[i - 1], stds[i])
