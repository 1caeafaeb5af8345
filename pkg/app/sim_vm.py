import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

from app.models import OutcomeKind, ReadLogEntry, ReadOutcome, Transaction


class VersionedReader(Protocol):
    def read(self, o: int, reader: int) -> ReadOutcome: ...


class ExecutionStatus(str, Enum):
    COMPLETED = "completed"
    ABORTED_ON_BLOCKED = "aborted_on_blocked"


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecutionStatus
    read_log: tuple[ReadLogEntry, ...] = ()
    write_set: frozenset[int] = field(default_factory=frozenset)
    observed_deps: frozenset[int] = field(default_factory=frozenset)
    blocker: Optional[int] = None

    @property
    def completed(self) -> bool:
        return self.status is ExecutionStatus.COMPLETED


def execute(t: Transaction, incarnation: int, memory: VersionedReader) -> ExecutionResult:
    """Simulate one execution of t: reads up front, then the sleep, writes left to the caller.

    A Blocked read ends the attempt before the sleep. incarnation only labels the attempt;
    the used set is fixed, so every incarnation reads and writes the same objects.
    """
    read_log: list[ReadLogEntry] = []
    for o in t.read_objects():
        outcome = memory.read(o, t.index)
        if outcome.kind is OutcomeKind.BLOCKED:
            return ExecutionResult(ExecutionStatus.ABORTED_ON_BLOCKED, blocker=outcome.blocker)
        read_log.append(ReadLogEntry(o, outcome))

    time.sleep(t.duration_ms / 1000)

    deps = frozenset(
        entry.observed.observed_writer for entry in read_log if entry.observed.kind is OutcomeKind.FROM_VERSION
    )
    return ExecutionResult(
        ExecutionStatus.COMPLETED,
        read_log=tuple(read_log),
        write_set=t.write_objects(),
        observed_deps=deps,
    )
