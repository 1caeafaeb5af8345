"""Engine-independent correctness checks built only from the block and an epoch report."""

from bisect import bisect_left
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import Optional

from app.models import GENESIS, Block, EpochReport, ReadLogEntry, Version

logger = getLogger(__name__)


class ViolationKind(str, Enum):
    FINAL_STATE_MISMATCH = "final_state_mismatch"
    INCOHERENT_READ = "incoherent_read"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    txn: int
    object_id: int
    expected: Version
    actual: Version

    def __str__(self) -> str:
        return (
            f"{self.kind.value}: txn {self.txn}, object {self.object_id}, "
            f"expected writer {self.expected.writer}, got {self.actual.writer}"
        )


def _writers_by_object(block: Block) -> dict[int, list[int]]:
    """Ascending writer indices per object, from the write side of every used set."""
    writers: dict[int, list[int]] = {}
    for t in block.transactions:
        for o in t.write_objects():
            writers.setdefault(o, []).append(t.index)
    return writers


def sequential_final_state(block: Block) -> dict[int, Version]:
    state = {o: GENESIS for o in block.object_ids()}
    for o, writers in _writers_by_object(block).items():
        state[o] = Version(writers[-1], 0)
    return state


def check_run(
    block: Block, report: EpochReport, committed_read_logs: Optional[Mapping[int, list[ReadLogEntry]]] = None
) -> list[Violation]:
    """Audit final-state equality and read coherence of a finished epoch.

    Only writer identity is compared; incarnations are engine bookkeeping.
    """
    violations: list[Violation] = []
    expected_state = sequential_final_state(block)
    for o in sorted(expected_state.keys() | report.final_state.keys()):
        expected = expected_state.get(o, GENESIS)
        actual = report.final_state.get(o, GENESIS)
        if expected.writer != actual.writer:
            violations.append(Violation(ViolationKind.FINAL_STATE_MISMATCH, expected.writer, o, expected, actual))

    writers = _writers_by_object(block)
    logs = report.read_logs if committed_read_logs is None else committed_read_logs
    for i in sorted(logs):
        for entry in logs[i]:
            lower = writers.get(entry.object_id, [])
            pos = bisect_left(lower, i)
            expected = Version(lower[pos - 1], 0) if pos > 0 else GENESIS
            actual = entry.observed.version or GENESIS
            if expected.writer != actual.writer:
                violations.append(Violation(ViolationKind.INCOHERENT_READ, i, entry.object_id, expected, actual))

    if violations:
        logger.warning(f"{report.engine.value} run has {len(violations)} violations, first: {violations[0]}")
    return violations
