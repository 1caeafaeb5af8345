import os
import threading
import time
from collections import deque
from logging import getLogger

from app.models import (
    Block,
    EngineConfig,
    EngineKind,
    EpochReport,
    ReadLogEntry,
    TxnStats,
    Version,
    throughput,
)
from app.mv_memory import MVMemory, Storage
from app.scheduler import Scheduler, SchedulerMode, Signal, TaskKind
from app.sim_vm import ExecutionResult, execute

logger = getLogger(__name__)

WATCHDOG_S = float(os.environ.get("NEMO_WATCHDOG_S", "30"))

# Idle workers spin with exponential backoff between these bounds (seconds)
_MIN_BACKOFF_S = 0.00005
_MAX_BACKOFF_S = 0.001
_POLL_S = 0.05


class ProgressTimeoutError(RuntimeError):
    pass


class _EpochControl:
    """Stop flag and first-error slot shared by an epoch's workers."""

    def __init__(self) -> None:
        self.stop = threading.Event()
        self.errors: list[BaseException] = []
        self._lock = threading.Lock()

    def fail(self, error: BaseException) -> None:
        with self._lock:
            self.errors.append(error)
        self.stop.set()


def _supervise(
    threads: list[threading.Thread], control: _EpochControl, last_progress, watchdog_s: float, engine: EngineKind
) -> None:
    """Join worker threads, aborting the epoch when no commit happened for watchdog_s."""
    for thread in threads:
        thread.start()
    while any(thread.is_alive() for thread in threads):
        for thread in threads:
            thread.join(timeout=_POLL_S)
        if control.errors:
            break
        if time.monotonic() - last_progress() > watchdog_s:
            control.stop.set()
            for thread in threads:
                thread.join()
            raise ProgressTimeoutError(f"{engine.value}: no transaction committed for {watchdog_s:.1f}s")
    control.stop.set()
    for thread in threads:
        thread.join()
    if control.errors:
        raise control.errors[0]


class EngineService:
    """Epoch drivers for every concurrency-control strategy."""

    @staticmethod
    def run(block: Block, config: EngineConfig) -> EpochReport:
        match config.engine:
            case EngineKind.SEQUENTIAL:
                return EngineService.run_sequential(block)
            case EngineKind.PCC:
                return EngineService.run_pcc(block, config)
            case _:
                return EngineService.run_occ(block, config)

    @staticmethod
    def run_sequential(block: Block) -> EpochReport:
        """Execute in index order on one worker, committing each transaction directly."""
        storage = Storage(block.object_ids())
        read_logs: dict[int, list[ReadLogEntry]] = {}
        started = time.perf_counter()
        for t in block.transactions:
            result = execute(t, 0, storage)
            storage.write(result.write_set, Version(t.index, 0))
            read_logs[t.index] = list(result.read_log)
        duration_ms = (time.perf_counter() - started) * 1000
        report = EpochReport(
            engine=EngineKind.SEQUENTIAL,
            workers=1,
            block_size=len(block.transactions),
            duration_ms=duration_ms,
            tps=throughput(len(block.transactions), duration_ms),
            executions=len(block.transactions),
            final_state=storage.snapshot(),
            per_txn=[TxnStats(index=t.index, executions=1) for t in block.transactions],
            read_logs=read_logs,
        )
        _log_report(report)
        return report

    @staticmethod
    def run_occ(block: Block, config: EngineConfig) -> EpochReport:
        """Run Block-STM, NEMO or NEMO-NoPQ with config.workers worker threads."""
        mode = SchedulerMode.for_engine(config.engine)
        greedy = config.engine in (EngineKind.NEMO, EngineKind.NEMO_NO_PQ)
        memory = MVMemory(block.object_ids())
        scheduler = Scheduler(block, mode, memory, record_tasks=config.record_tasks)
        control = _EpochControl()

        def worker() -> None:
            backoff = _MIN_BACKOFF_S
            try:
                while not control.stop.is_set():
                    task = scheduler.next_task()
                    match task:
                        case Signal.EPOCH_DONE:
                            return
                        case Signal.IDLE:
                            time.sleep(backoff)
                            backoff = min(backoff * 2, _MAX_BACKOFF_S)
                            continue
                    backoff = _MIN_BACKOFF_S
                    txn = block.transactions[task.txn]
                    match task.kind:
                        case TaskKind.EXECUTE:
                            result: ExecutionResult = execute(txn, task.incarnation, memory)
                            if greedy and result.completed and txn.owned_only:
                                memory.greedy_commit(txn, result.write_set)
                                scheduler.finish_greedy(task, result)
                            else:
                                scheduler.finish_execution(task, result)
                        case TaskKind.VALIDATE:
                            scheduler.finish_validation(task, scheduler.validate(task))
            except Exception as e:
                logger.error(f"Worker failed in {config.engine.value} epoch: {e}")
                control.fail(e)

        threads = [threading.Thread(target=worker, name=f"occ-worker-{n}", daemon=True) for n in range(config.workers)]
        started = time.perf_counter()
        scheduler.start()
        _supervise(threads, control, lambda: scheduler.last_progress, config.watchdog_s or WATCHDOG_S, config.engine)
        duration_ms = (time.perf_counter() - started) * 1000

        stats = scheduler.stats()
        executions = sum(s.executions for s in stats)
        report = EpochReport(
            engine=config.engine,
            workers=config.workers,
            block_size=len(block.transactions),
            duration_ms=duration_ms,
            tps=throughput(len(block.transactions), duration_ms),
            reexecutions=executions - len(block.transactions),
            executions=executions,
            failed_validations=scheduler.failed_validations,
            greedy_commits=scheduler.greedy_commits,
            aborted_reads=scheduler.aborted_reads,
            final_state=memory.commit_final_state(),
            per_txn=stats,
            read_logs=scheduler.read_logs(),
            task_trace=scheduler.task_trace or [],
        )
        _log_report(report)
        return report

    @staticmethod
    def run_pcc(block: Block, config: EngineConfig) -> EpochReport:
        """Pessimistic baseline: a transaction runs once every conflicting predecessor finished."""
        n = len(block.transactions)
        storage = Storage(block.object_ids())
        read_logs: dict[int, list[ReadLogEntry]] = {}
        control = _EpochControl()
        cond = threading.Condition()
        finished = 0
        last_progress = time.monotonic()

        started = time.perf_counter()
        successors = pcc_successors(block)
        remaining = [0] * n
        for succ in successors:
            for j in succ:
                remaining[j] += 1
        ready = deque(i for i in range(n) if remaining[i] == 0)

        def worker() -> None:
            nonlocal finished, last_progress
            try:
                while True:
                    with cond:
                        while not ready and finished < n and not control.stop.is_set():
                            cond.wait(timeout=_POLL_S)
                        if finished == n or control.stop.is_set():
                            return
                        i = ready.popleft()
                    t = block.transactions[i]
                    result = execute(t, 0, storage)
                    storage.write(result.write_set, Version(i, 0))
                    with cond:
                        read_logs[i] = list(result.read_log)
                        finished += 1
                        last_progress = time.monotonic()
                        for j in successors[i]:
                            remaining[j] -= 1
                            if remaining[j] == 0:
                                ready.append(j)
                        cond.notify_all()
            except Exception as e:
                logger.error(f"Worker failed in pcc epoch: {e}")
                control.fail(e)
                with cond:
                    cond.notify_all()

        threads = [threading.Thread(target=worker, name=f"pcc-worker-{k}", daemon=True) for k in range(config.workers)]
        _supervise(threads, control, lambda: last_progress, config.watchdog_s or WATCHDOG_S, EngineKind.PCC)
        duration_ms = (time.perf_counter() - started) * 1000

        report = EpochReport(
            engine=EngineKind.PCC,
            workers=config.workers,
            block_size=n,
            duration_ms=duration_ms,
            tps=throughput(n, duration_ms),
            executions=n,
            final_state=storage.snapshot(),
            per_txn=[TxnStats(index=i, executions=1) for i in range(n)],
            read_logs=read_logs,
        )
        _log_report(report)
        return report


def pcc_successors(block: Block) -> list[list[int]]:
    """Reduced conflict graph of the exhaustive sets, as sorted successor lists.

    Per object a writer follows every reader since the previous writer, or the previous writer
    itself when nobody read in between, and a reader follows the previous writer. Finishing is
    transitive along these edges, so a transaction becomes ready exactly when every conflicting
    predecessor has finished.
    """
    successors: list[set[int]] = [set() for _ in block.transactions]
    last_writer: dict[int, int] = {}
    readers_since: dict[int, list[int]] = {}
    for t in block.transactions:
        for access in t.exhaustive_set:
            o = access.object_id
            writer = last_writer.get(o)
            if access.kind.writes:
                readers = readers_since.pop(o, [])
                for reader in readers:
                    successors[reader].add(t.index)
                if writer is not None and not readers:
                    successors[writer].add(t.index)
            else:
                if writer is not None:
                    successors[writer].add(t.index)
                readers_since.setdefault(o, []).append(t.index)
        for access in t.exhaustive_set:
            if access.kind.writes:
                last_writer[access.object_id] = t.index
    return [sorted(s) for s in successors]


def _log_report(report: EpochReport) -> None:
    logger.info(
        f"{report.engine.value}: {report.block_size} txns on {report.workers} workers in "
        f"{report.duration_ms:.1f} ms ({report.tps:.0f} TPS), {report.reexecutions} re-executions"
    )
