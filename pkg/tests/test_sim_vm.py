import time

from app.models import OutcomeKind, Version
from app.mv_memory import MVMemory
from app.sim_vm import ExecutionStatus, execute


class TestExecute:
    """Simulated execution against multi-version memory."""

    def test_reads_in_ascending_object_order(self, txn):
        """Test that reads follow ascending object order."""
        memory = MVMemory(range(10))
        result = execute(txn(5, reads=[7, 2], read_writes=[4]), 0, memory)
        assert result.completed
        assert [entry.object_id for entry in result.read_log] == [2, 4, 7]

    def test_write_set_is_write_side_of_used_set(self, txn):
        memory = MVMemory(range(10))
        result = execute(txn(1, reads=[1], writes=[2, 3], read_writes=[4], unused=[3]), 0, memory)
        assert result.write_set == frozenset({2, 4})

    def test_observed_dependencies(self, txn):
        """Test that reading another transaction's value records a dependency."""
        memory = MVMemory(range(10))
        memory.apply_writes(1, 0, [3])
        memory.apply_writes(2, 0, [4])
        result = execute(txn(6, reads=[3, 4, 5]), 0, memory)
        assert result.observed_deps == frozenset({1, 2})
        assert result.read_log[2].observed.kind is OutcomeKind.FROM_STORAGE

    def test_blocked_read_aborts_without_sleeping(self, txn):
        """Test that a blocked read ends the attempt before the body runs."""
        memory = MVMemory(range(10))
        memory.install_planned_writes({2: [3]})
        started = time.perf_counter()
        result = execute(txn(6, reads=[3], duration_ms=500), 0, memory)
        assert time.perf_counter() - started < 0.25
        assert result.status is ExecutionStatus.ABORTED_ON_BLOCKED
        assert result.blocker == 2
        assert result.write_set == frozenset()

    def test_sleeps_for_duration(self, txn):
        memory = MVMemory(range(10))
        started = time.perf_counter()
        execute(txn(0, writes=[1], duration_ms=20), 0, memory)
        assert time.perf_counter() - started >= 0.019

    def test_same_reads_across_incarnations(self, txn):
        """Test that every incarnation reads the same objects."""
        memory = MVMemory(range(10))
        t = txn(4, reads=[1, 2], writes=[3])
        first = execute(t, 0, memory)
        memory.apply_writes(0, 0, [1])
        second = execute(t, 1, memory)
        assert [e.object_id for e in first.read_log] == [e.object_id for e in second.read_log]
        assert second.read_log[0].observed.version == Version(0, 0)
