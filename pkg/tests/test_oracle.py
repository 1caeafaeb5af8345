from app.engines import EngineService
from app.models import GENESIS, Block, EngineKind, EpochReport, ReadLogEntry, ReadOutcome, Version
from app.oracle import ViolationKind, check_run, sequential_final_state


def report_for(block: Block, final_state: dict[int, Version], read_logs=None) -> EpochReport:
    return EpochReport(
        engine=EngineKind.NEMO,
        workers=1,
        block_size=len(block),
        duration_ms=1.0,
        tps=0.0,
        final_state=final_state,
        read_logs=read_logs or {},
    )


class TestSequentialFinalState:
    def test_highest_writer_wins(self, txn):
        """Test that the last writer in index order owns the final value."""
        block = Block(transactions=[txn(i, writes=[1] if i in (2, 7) else [9]) for i in range(9)])
        assert sequential_final_state(block)[1] == Version(7, 0)

    def test_never_written_object_is_genesis(self, txn):
        block = Block(transactions=[txn(0, reads=[4]), txn(1, writes=[5])])
        assert sequential_final_state(block)[4] == GENESIS

    def test_single_transaction(self, txn):
        assert sequential_final_state(Block(transactions=[txn(0, writes=[3])])) == {3: Version(0, 0)}

    def test_unused_writes_do_not_count(self, txn):
        """Test that declared but unused writes leave the final state alone."""
        block = Block(transactions=[txn(0, writes=[1]), txn(1, writes=[1], reads=[2], unused=[1])])
        assert sequential_final_state(block)[1] == Version(0, 0)


class TestCheckRun:
    """Final-state and read-coherence audits."""

    def test_sequential_run_is_clean(self, small_block):
        block = small_block(seed=2)
        report = EngineService.run_sequential(block)
        assert check_run(block, report) == []

    def test_incoherent_read(self, txn):
        """Test that a read of a superseded writer is reported with both versions."""
        transactions = [txn(i, writes=[1] if i in (3, 5) else [9]) for i in range(7)]
        transactions.append(txn(7, reads=[1]))
        block = Block(transactions=transactions)
        logs = {7: [ReadLogEntry(1, ReadOutcome.from_version(Version(3, 0)))]}
        report = report_for(block, sequential_final_state(block), logs)
        violations = check_run(block, report)
        assert len(violations) == 1
        violation = violations[0]
        assert violation.kind is ViolationKind.INCOHERENT_READ
        assert (violation.txn, violation.object_id) == (7, 1)
        assert violation.expected.writer == 5
        assert violation.actual.writer == 3

    def test_storage_read_expected_without_lower_writer(self, txn):
        """Test that a read with no lower writer must come from storage."""
        block = Block(transactions=[txn(0, reads=[1]), txn(1, writes=[1])])
        logs = {0: [ReadLogEntry(1, ReadOutcome.from_version(Version(1, 0)))]}
        violations = check_run(block, report_for(block, sequential_final_state(block), logs))
        assert [v.expected for v in violations] == [GENESIS]

    def test_final_state_mismatch(self, txn):
        transactions = [txn(i, writes=[1] if i in (2, 7) else [9]) for i in range(8)]
        block = Block(transactions=transactions)
        state = sequential_final_state(block)
        state[1] = Version(2, 0)
        violations = check_run(block, report_for(block, state))
        assert [v.kind for v in violations] == [ViolationKind.FINAL_STATE_MISMATCH]
        assert violations[0].expected == Version(7, 0)

    def test_incarnations_are_ignored(self, txn):
        """Test that only writers are compared, not incarnations."""
        block = Block(transactions=[txn(0, writes=[1]), txn(1, reads=[1])])
        logs = {1: [ReadLogEntry(1, ReadOutcome.from_version(Version(0, 4)))]}
        assert check_run(block, report_for(block, {1: Version(0, 4)}, logs)) == []

    def test_explicit_read_logs_override_report(self, txn):
        """Test that explicitly passed read logs replace the report's own."""
        block = Block(transactions=[txn(0, writes=[1]), txn(1, reads=[1])])
        report = report_for(block, sequential_final_state(block))
        bad_logs = {1: [ReadLogEntry(1, ReadOutcome.from_storage())]}
        assert len(check_run(block, report, bad_logs)) == 1
