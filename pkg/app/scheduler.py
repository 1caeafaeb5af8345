import heapq
import itertools
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from logging import getLogger
from typing import Optional

from app.models import Block, EngineKind, ReadLogEntry, TxnStats
from app.mv_memory import MVMemory
from app.sim_vm import ExecutionResult

logger = getLogger(__name__)


class SchedulerError(RuntimeError):
    pass


class TaskKind(str, Enum):
    EXECUTE = "execute"
    VALIDATE = "validate"


@dataclass(frozen=True)
class Task:
    kind: TaskKind
    txn: int
    incarnation: int


class Signal(str, Enum):
    IDLE = "idle"
    EPOCH_DONE = "epoch_done"


class TxnStatus(str, Enum):
    READY_TO_EXECUTE = "ready_to_execute"
    EXECUTING = "executing"
    WAITING = "waiting"
    EXECUTED = "executed"
    VALIDATED = "validated"
    COMMITTED = "committed"


class Ordering(str, Enum):
    INDEX_ORDERED = "index_ordered"
    PRIORITY_QUEUE = "priority_queue"


class ResolveOn(str, Enum):
    EXECUTION = "execution"
    VALIDATION = "validation"


@dataclass(frozen=True)
class SchedulerMode:
    ordering: Ordering
    resolve_on: ResolveOn
    use_waiting: bool
    use_hints: bool

    @classmethod
    def block_stm(cls) -> "SchedulerMode":
        return cls(Ordering.INDEX_ORDERED, ResolveOn.EXECUTION, use_waiting=False, use_hints=False)

    @classmethod
    def nemo(cls) -> "SchedulerMode":
        return cls(Ordering.PRIORITY_QUEUE, ResolveOn.VALIDATION, use_waiting=True, use_hints=True)

    @classmethod
    def nemo_no_pq(cls) -> "SchedulerMode":
        return cls(Ordering.INDEX_ORDERED, ResolveOn.VALIDATION, use_waiting=True, use_hints=True)

    @classmethod
    def for_engine(cls, engine: EngineKind) -> "SchedulerMode":
        match engine:
            case EngineKind.BLOCK_STM:
                return cls.block_stm()
            case EngineKind.NEMO:
                return cls.nemo()
            case EngineKind.NEMO_NO_PQ:
                return cls.nemo_no_pq()
            case _:
                raise SchedulerError(f"engine {engine.value} is not an optimistic engine")


class DependencyGraph:
    """Edges blocker -> dependent (blocker < dependent) with direct-dependent scores."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._dependents: dict[int, set[int]] = {}
        self._blockers: dict[int, set[int]] = {}

    def add_edge(self, blocker: int, dependent: int) -> bool:
        """Insert an edge; returns True if it was new."""
        if blocker >= dependent:
            raise SchedulerError(f"dependency edge must point upwards, got {blocker} -> {dependent}")
        with self._lock:
            dependents = self._dependents.setdefault(blocker, set())
            if dependent in dependents:
                return False
            dependents.add(dependent)
            self._blockers.setdefault(dependent, set()).add(blocker)
            return True

    def score(self, txn: int) -> int:
        with self._lock:
            return len(self._dependents.get(txn, ()))

    def blockers(self, txn: int) -> frozenset[int]:
        with self._lock:
            return frozenset(self._blockers.get(txn, ()))

    @property
    def edges(self) -> set[tuple[int, int]]:
        with self._lock:
            return {(b, d) for b, ds in self._dependents.items() for d in ds}


_KIND_RANK = {TaskKind.VALIDATE: 0, TaskKind.EXECUTE: 1}


class PriorityTaskQueue:
    """Max-priority queue of (kind, txn) keys ordered by (score desc, index asc).

    Scores only grow, so a re-keyed task gets a fresh heap entry and the stale one is
    dropped when it surfaces.
    """

    def __init__(self, score: Callable[[int], int]) -> None:
        self._score = score
        self._heap: list[tuple[int, int, int, int, TaskKind]] = []
        self._members: set[tuple[TaskKind, int]] = set()
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._members)

    def __contains__(self, key: tuple[TaskKind, int]) -> bool:
        return key in self._members

    def _push_entry(self, kind: TaskKind, txn: int) -> None:
        heapq.heappush(self._heap, (-self._score(txn), txn, _KIND_RANK[kind], next(self._seq), kind))

    def push(self, kind: TaskKind, txn: int) -> bool:
        if (kind, txn) in self._members:
            return False
        self._members.add((kind, txn))
        self._push_entry(kind, txn)
        return True

    def rekey(self, txn: int) -> None:
        for kind in TaskKind:
            if (kind, txn) in self._members:
                self._push_entry(kind, txn)

    def discard(self, kind: TaskKind, txn: int) -> None:
        self._members.discard((kind, txn))

    def pop(self) -> Optional[tuple[TaskKind, int]]:
        while self._heap:
            neg_score, txn, _, _, kind = heapq.heappop(self._heap)
            if (kind, txn) not in self._members or -neg_score != self._score(txn):
                continue
            self._members.discard((kind, txn))
            return kind, txn
        return None


class IndexOrderedQueue:
    """Block-STM dispensation: an execution and a validation counter over per-index flags."""

    def __init__(self, size: int) -> None:
        self._size = size
        self._pending = {TaskKind.EXECUTE: [False] * size, TaskKind.VALIDATE: [False] * size}
        self.execution_idx = 0
        self.validation_idx = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def __contains__(self, key: tuple[TaskKind, int]) -> bool:
        kind, txn = key
        return self._pending[kind][txn]

    def push(self, kind: TaskKind, txn: int) -> bool:
        if self._pending[kind][txn]:
            return False
        self._pending[kind][txn] = True
        self._count += 1
        match kind:
            case TaskKind.EXECUTE:
                self.execution_idx = min(self.execution_idx, txn)
            case TaskKind.VALIDATE:
                self.validation_idx = min(self.validation_idx, txn)
        return True

    def rekey(self, txn: int) -> None:
        pass

    def discard(self, kind: TaskKind, txn: int) -> None:
        if self._pending[kind][txn]:
            self._pending[kind][txn] = False
            self._count -= 1

    def pop(self) -> Optional[tuple[TaskKind, int]]:
        while self.execution_idx < self._size or self.validation_idx < self._size:
            if self.validation_idx <= self.execution_idx:
                kind, idx = TaskKind.VALIDATE, self.validation_idx
                self.validation_idx += 1
            else:
                kind, idx = TaskKind.EXECUTE, self.execution_idx
                self.execution_idx += 1
            if self._pending[kind][idx]:
                self._pending[kind][idx] = False
                self._count -= 1
                return kind, idx
        return None


@dataclass
class _TxnState:
    status: TxnStatus = TxnStatus.READY_TO_EXECUTE
    incarnation: int = 0
    waiting_on: set[int] = field(default_factory=set)
    validating: bool = False
    revalidate: bool = False
    read_log: tuple[ReadLogEntry, ...] = ()
    executions: int = 0
    waits: int = 0
    validations: int = 0


class Scheduler:
    """Task dispensation and transaction lifecycle for the optimistic engines."""

    def __init__(
        self, block: Block, mode: SchedulerMode, memory: MVMemory, record_tasks: bool = False
    ) -> None:
        self.block = block
        self.mode = mode
        self.memory = memory
        self.graph = DependencyGraph()
        self._size = len(block.transactions)
        self._lock = threading.Lock()
        self._states = [_TxnState() for _ in range(self._size)]
        self._waiters: dict[int, set[int]] = {}
        self._queue: PriorityTaskQueue | IndexOrderedQueue
        match mode.ordering:
            case Ordering.PRIORITY_QUEUE:
                self._queue = PriorityTaskQueue(self.graph.score)
            case Ordering.INDEX_ORDERED:
                self._queue = IndexOrderedQueue(self._size)
        self._watermark = 0
        self._committed = 0
        self._preprocessed = False
        self._started = False
        self.failed_validations = 0
        self.aborted_reads = 0
        self.greedy_commits = 0
        self.last_progress = time.monotonic()
        self.task_trace: Optional[list[tuple[str, int]]] = [] if record_tasks else None

    # -- lifecycle setup -----------------------------------------------------------------

    def preprocess_hints(self) -> None:
        """Install planned writes and derive nearest-hinted-writer dependency edges."""
        if self._preprocessed:
            return
        self._preprocessed = True
        # owned objects are never shared, so owned-only planned writes could never block a reader
        hinted_writes = {t.index: t.hinted_writes() for t in self.block.transactions if not t.owned_only}
        self.memory.install_planned_writes(hinted_writes)
        last_writer: dict[int, int] = {}
        with self._lock:
            for t in self.block.transactions:
                blockers = {last_writer[o] for o in t.hinted_reads() if o in last_writer}
                for blocker in blockers:
                    self.graph.add_edge(blocker, t.index)
                if blockers and self.mode.use_waiting:
                    self._wait(t.index, blockers)
                for o in hinted_writes.get(t.index, ()):
                    last_writer[o] = t.index
        logger.debug(f"Hint preprocessing derived {len(self.graph.edges)} dependency edges")

    def start(self) -> None:
        """Open the parallel phase: preprocess hints if enabled and queue every ready transaction."""
        if self.mode.use_hints:
            self.preprocess_hints()
        with self._lock:
            self._started = True
            for i, state in enumerate(self._states):
                if state.status is TxnStatus.READY_TO_EXECUTE:
                    self._queue.push(TaskKind.EXECUTE, i)
            self.last_progress = time.monotonic()

    # -- dispensation --------------------------------------------------------------------

    def next_task(self) -> Task | Signal:
        with self._lock:
            if not self._started:
                raise SchedulerError("next_task() called before start()")
            if self._committed == self._size:
                return Signal.EPOCH_DONE
            while (key := self._queue.pop()) is not None:
                kind, i = key
                state = self._states[i]
                match kind:
                    case TaskKind.EXECUTE if state.status is TxnStatus.READY_TO_EXECUTE:
                        state.status = TxnStatus.EXECUTING
                    case TaskKind.VALIDATE if state.status is TxnStatus.EXECUTED and not state.validating:
                        state.validating = True
                    case _:
                        continue
                if self.task_trace is not None:
                    self.task_trace.append((kind.value, i))
                return Task(kind, i, state.incarnation)
            return Signal.IDLE

    def epoch_done(self) -> bool:
        with self._lock:
            return self._committed == self._size

    # -- completion ----------------------------------------------------------------------

    def finish_execution(self, task: Task, result: ExecutionResult) -> None:
        wrote_new_location = False
        if result.completed:
            wrote_new_location = self.memory.apply_writes(task.txn, task.incarnation, result.write_set)
        with self._lock:
            state = self._expect(task, TxnStatus.EXECUTING)
            i = task.txn
            if not result.completed:
                assert result.blocker is not None
                self.aborted_reads += 1
                self._add_dependency(result.blocker, i)
                if self._is_resolved(result.blocker):
                    self._make_ready(i)
                else:
                    self._wait(i, {result.blocker})
                return
            state.executions += 1
            state.read_log = result.read_log
            for blocker in result.observed_deps:
                self._add_dependency(blocker, i)
            state.status = TxnStatus.EXECUTED
            self._request_validation(i)
            if wrote_new_location:
                self._revalidate_above(i)
            if self.mode.resolve_on is ResolveOn.EXECUTION:
                self._resolve(i)

    def finish_greedy(self, task: Task, result: ExecutionResult) -> None:
        """Record a greedily committed owned-only execution: terminal, never validated."""
        with self._lock:
            state = self._expect(task, TxnStatus.EXECUTING)
            state.executions += 1
            state.read_log = result.read_log
            state.status = TxnStatus.COMMITTED
            self._committed += 1
            self.greedy_commits += 1
            self.last_progress = time.monotonic()
            self._resolve(task.txn)
            self._advance_watermark()

    def validate(self, task: Task) -> bool:
        """Re-read the logged objects and compare against what execution observed."""
        with self._lock:
            state = self._expect(task, TxnStatus.EXECUTED)
            read_log = state.read_log
        return all(self.memory.read(entry.object_id, task.txn) == entry.observed for entry in read_log)

    def finish_validation(self, task: Task, passed: bool) -> None:
        with self._lock:
            state = self._expect(task, TxnStatus.EXECUTED)
            if not state.validating:
                raise SchedulerError(f"transaction {task.txn} finished a validation it never started")
            i = task.txn
            state.validating = False
            state.validations += 1
            if passed:
                if state.revalidate:
                    # a lower transaction changed while this validation was in flight
                    state.revalidate = False
                    self._queue.push(TaskKind.VALIDATE, i)
                    return
                state.status = TxnStatus.VALIDATED
                if self.mode.resolve_on is ResolveOn.VALIDATION:
                    self._resolve(i)
                self._advance_watermark()
                return
            self.failed_validations += 1
            state.revalidate = False
            self.memory.mark_estimates(i)
            state.incarnation += 1
            blockers: set[int] = set()
            if self.mode.use_waiting:
                blockers = {b for b in self.graph.blockers(i) if not self._is_validated(b)}
            if blockers:
                self._wait(i, blockers)
            else:
                self._make_ready(i)
            self._revalidate_above(i)
            logger.debug(f"Transaction {i} failed validation, incarnation now {state.incarnation}")

    # -- reporting -----------------------------------------------------------------------

    def status(self, txn: int) -> TxnStatus:
        with self._lock:
            return self._states[txn].status

    def waiting_on(self, txn: int) -> frozenset[int]:
        with self._lock:
            return frozenset(self._states[txn].waiting_on)

    def read_logs(self) -> dict[int, list[ReadLogEntry]]:
        with self._lock:
            return {i: list(s.read_log) for i, s in enumerate(self._states)}

    def stats(self) -> list[TxnStats]:
        with self._lock:
            return [
                TxnStats(
                    index=i,
                    incarnations=s.incarnation,
                    executions=s.executions,
                    waits=s.waits,
                    validations=s.validations,
                )
                for i, s in enumerate(self._states)
            ]

    # -- internals (caller holds self._lock) ---------------------------------------------

    def _expect(self, task: Task, status: TxnStatus) -> _TxnState:
        state = self._states[task.txn]
        if state.status is not status or state.incarnation != task.incarnation:
            raise SchedulerError(
                f"transaction {task.txn} is {state.status.value}({state.incarnation}), "
                f"expected {status.value}({task.incarnation})"
            )
        return state

    def _add_dependency(self, blocker: int, dependent: int) -> None:
        if blocker < 0:
            return
        if self.graph.add_edge(blocker, dependent):
            self._queue.rekey(blocker)

    def _is_validated(self, txn: int) -> bool:
        return self._states[txn].status in (TxnStatus.VALIDATED, TxnStatus.COMMITTED)

    def _is_resolved(self, txn: int) -> bool:
        match self.mode.resolve_on:
            case ResolveOn.EXECUTION:
                return self._states[txn].status in (TxnStatus.EXECUTED, TxnStatus.VALIDATED, TxnStatus.COMMITTED)
            case ResolveOn.VALIDATION:
                return self._is_validated(txn)

    def _make_ready(self, txn: int) -> None:
        state = self._states[txn]
        state.status = TxnStatus.READY_TO_EXECUTE
        state.waiting_on.clear()
        self._queue.push(TaskKind.EXECUTE, txn)

    def _wait(self, txn: int, blockers: set[int]) -> None:
        state = self._states[txn]
        state.status = TxnStatus.WAITING
        state.waiting_on = set(blockers)
        state.waits += 1
        for blocker in blockers:
            self._waiters.setdefault(blocker, set()).add(txn)

    def _resolve(self, blocker: int) -> None:
        for dependent in sorted(self._waiters.pop(blocker, ())):
            state = self._states[dependent]
            state.waiting_on.discard(blocker)
            if state.status is TxnStatus.WAITING and not state.waiting_on:
                self._make_ready(dependent)

    def _request_validation(self, txn: int) -> None:
        state = self._states[txn]
        match state.status:
            case TxnStatus.VALIDATED:
                state.status = TxnStatus.EXECUTED
                self._queue.push(TaskKind.VALIDATE, txn)
            case TxnStatus.EXECUTED if state.validating:
                state.revalidate = True
            case TxnStatus.EXECUTED:
                self._queue.push(TaskKind.VALIDATE, txn)
            case _:
                pass

    def _revalidate_above(self, txn: int) -> None:
        for j in range(txn + 1, self._size):
            self._request_validation(j)

    def _advance_watermark(self) -> None:
        while self._watermark < self._size:
            state = self._states[self._watermark]
            if state.status is TxnStatus.VALIDATED:
                state.status = TxnStatus.COMMITTED
                self._committed += 1
                self.last_progress = time.monotonic()
            elif state.status is not TxnStatus.COMMITTED:
                break
            self._watermark += 1
