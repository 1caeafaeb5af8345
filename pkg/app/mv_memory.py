import threading
from bisect import bisect_left, insort
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from logging import getLogger

from app.models import GENESIS, ReadOutcome, Transaction, Version, is_owned_only

logger = getLogger(__name__)


class MVMemoryError(RuntimeError):
    pass


class EntryState(str, Enum):
    VALUE = "value"
    ESTIMATE = "estimate"
    PLANNED_WRITE = "planned_write"


@dataclass
class _Entry:
    state: EntryState
    incarnation: int = 0


class _Chain:
    """Version chain of one object: at most one entry per writer index."""

    __slots__ = ("lock", "writers", "entries")

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.writers: list[int] = []
        self.entries: dict[int, _Entry] = {}

    def put(self, writer: int, entry: _Entry) -> None:
        if writer not in self.entries:
            insort(self.writers, writer)
        self.entries[writer] = entry

    def remove(self, writer: int) -> None:
        if self.entries.pop(writer, None) is not None:
            self.writers.pop(bisect_left(self.writers, writer))


class Storage:
    """Committed object state: the last committed writer of every object."""

    def __init__(self, object_ids: Iterable[int]) -> None:
        self._lock = threading.Lock()
        self._versions: dict[int, Version] = {o: GENESIS for o in object_ids}

    def read(self, o: int, reader: int) -> ReadOutcome:
        # reader is unused: callers only read once every lower writer has committed
        with self._lock:
            version = self._versions.get(o, GENESIS)
        if version == GENESIS:
            return ReadOutcome.from_storage()
        return ReadOutcome.from_version(version)

    def write(self, writes: Iterable[int], version: Version) -> None:
        with self._lock:
            for o in writes:
                self._versions[o] = version

    def get(self, o: int) -> Version:
        with self._lock:
            return self._versions.get(o, GENESIS)

    def snapshot(self) -> dict[int, Version]:
        with self._lock:
            return dict(self._versions)


class MVMemory:
    """Shared multi-version memory keyed by (object, writer index)."""

    def __init__(self, object_ids: Iterable[int]) -> None:
        ids = list(object_ids)
        self.storage = Storage(ids)
        self._chains: dict[int, _Chain] = {o: _Chain() for o in ids}
        self._chains_lock = threading.Lock()
        self._txn_lock = threading.Lock()
        self._last_written: dict[int, frozenset[int]] = {}
        self._planned: dict[int, frozenset[int]] = {}
        self._applied: set[tuple[int, int]] = set()
        self._started = False

    def _chain(self, o: int) -> _Chain:
        chain = self._chains.get(o)
        if chain is None:
            with self._chains_lock:
                chain = self._chains.setdefault(o, _Chain())
        return chain

    def install_planned_writes(self, hints: Mapping[int, Iterable[int]]) -> None:
        """Mark every hinted write of every transaction as a PlannedWrite entry."""
        if self._started:
            raise MVMemoryError("planned writes must be installed before execution begins")
        for txn, objects in hints.items():
            planned = frozenset(objects)
            if not planned:
                continue
            self._planned[txn] = planned
            for o in planned:
                chain = self._chain(o)
                with chain.lock:
                    chain.put(txn, _Entry(EntryState.PLANNED_WRITE))
        logger.debug(f"Installed planned writes for {len(self._planned)} transactions")

    def read(self, o: int, reader: int) -> ReadOutcome:
        """Entry of the greatest writer below reader, or storage if there is none."""
        self._started = True
        chain = self._chain(o)
        with chain.lock:
            pos = bisect_left(chain.writers, reader)
            if pos == 0:
                return ReadOutcome.from_storage()
            writer = chain.writers[pos - 1]
            entry = chain.entries[writer]
        match entry.state:
            case EntryState.VALUE:
                return ReadOutcome.from_version(Version(writer, entry.incarnation))
            case _:
                return ReadOutcome.blocked(writer)

    def apply_writes(self, txn: int, incarnation: int, writes: Iterable[int]) -> bool:
        """Record one incarnation's writes; True iff it wrote a location the previous one did not."""
        self._started = True
        written = frozenset(writes)
        with self._txn_lock:
            if (txn, incarnation) in self._applied:
                raise MVMemoryError(f"writes of transaction {txn} incarnation {incarnation} already applied")
            self._applied.add((txn, incarnation))
            previous = self._last_written.get(txn, frozenset())
            planned = self._planned.pop(txn, frozenset())
            self._last_written[txn] = written
        for o in written:
            chain = self._chain(o)
            with chain.lock:
                chain.put(txn, _Entry(EntryState.VALUE, incarnation))
        for o in (previous | planned) - written:
            chain = self._chain(o)
            with chain.lock:
                chain.remove(txn)
        return bool(written - previous)

    def mark_estimates(self, txn: int) -> None:
        with self._txn_lock:
            written = self._last_written.get(txn, frozenset())
        for o in written:
            chain = self._chain(o)
            with chain.lock:
                entry = chain.entries.get(txn)
                if entry is not None and entry.state is EntryState.VALUE:
                    entry.state = EntryState.ESTIMATE

    def greedy_commit(self, txn: Transaction, writes: Iterable[int]) -> None:
        """Commit an owned-only transaction straight to storage, bypassing the version chains."""
        if not is_owned_only(txn):
            raise MVMemoryError(f"transaction {txn.index} touches shared objects and cannot be greedily committed")
        self._started = True
        self.storage.write(writes, Version(txn.index, 0))

    def commit_final_state(self) -> dict[int, Version]:
        """Lazily commit the highest Value entry of every object to storage."""
        for o, chain in self._chains.items():
            with chain.lock:
                for writer in chain.writers:
                    if chain.entries[writer].state is not EntryState.VALUE:
                        raise MVMemoryError(
                            f"object {o} still carries a {chain.entries[writer].state.value} marker of {writer}"
                        )
                if chain.writers:
                    writer = chain.writers[-1]
                    self.storage.write([o], Version(writer, chain.entries[writer].incarnation))
        return self.storage.snapshot()
