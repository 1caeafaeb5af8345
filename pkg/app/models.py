from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Optional

from pydantic import field_validator, model_validator
from sqlmodel import Field, SQLModel


class ObjectKind(str, Enum):
    """Object kinds of the object data model."""

    OWNED = "owned"
    SHARED = "shared"
    IMMUTABLE = "immutable"


class AccessKind(str, Enum):
    """How a transaction touches an object."""

    READ = "read"
    READ_WRITE = "read_write"
    WRITE = "write"

    @property
    def reads(self) -> bool:
        return self is not AccessKind.WRITE

    @property
    def writes(self) -> bool:
        return self is not AccessKind.READ


class EngineKind(str, Enum):
    SEQUENTIAL = "sequential"
    BLOCK_STM = "blockstm"
    NEMO = "nemo"
    NEMO_NO_PQ = "nemonopq"
    PCC = "pcc"


class Access(SQLModel, table=False):
    """One (object, access kind) pair of a transaction."""

    object_id: int = Field(ge=0)
    kind: AccessKind
    object_kind: ObjectKind = Field(default=ObjectKind.SHARED)


class Transaction(SQLModel, table=False):
    """Index-ordered unit of work with its exhaustive, used and hinted access sets."""

    index: int = Field(ge=0)
    exhaustive_set: list[Access] = Field(default_factory=list)
    used_set: list[Access] = Field(default_factory=list)
    hint_set: list[Access] = Field(default_factory=list)
    duration_ms: float = Field(gt=0)
    owned_only: bool = Field(default=False)

    @model_validator(mode="after")
    def check_access_sets(self) -> "Transaction":
        exhaustive = {(a.object_id, a.kind) for a in self.exhaustive_set}
        used = {(a.object_id, a.kind) for a in self.used_set}
        hinted = {(a.object_id, a.kind) for a in self.hint_set}
        if len(self.exhaustive_set) != len({a.object_id for a in self.exhaustive_set}):
            raise ValueError(f"transaction {self.index}: duplicate object in exhaustive_set")
        if not used <= exhaustive:
            raise ValueError(f"transaction {self.index}: used_set is not a subset of exhaustive_set")
        if not hinted <= used:
            raise ValueError(f"transaction {self.index}: hint_set is not a subset of used_set")
        for access in self.exhaustive_set:
            if access.object_kind is ObjectKind.IMMUTABLE and access.kind.writes:
                raise ValueError(f"transaction {self.index}: immutable object {access.object_id} is written")
        if self.owned_only != touches_owned_only(self.exhaustive_set):
            raise ValueError(f"transaction {self.index}: owned_only flag does not match its objects")
        return self

    def read_objects(self) -> list[int]:
        """Objects the execution reads, in ascending ObjectId order."""
        return sorted(a.object_id for a in self.used_set if a.kind.reads)

    def write_objects(self) -> frozenset[int]:
        return frozenset(a.object_id for a in self.used_set if a.kind.writes)

    def hinted_reads(self) -> list[int]:
        return sorted(a.object_id for a in self.hint_set if a.kind.reads)

    def hinted_writes(self) -> list[int]:
        return sorted(a.object_id for a in self.hint_set if a.kind.writes)


class WorkloadParams(SQLModel, table=False):
    """Parameters of the synthetic high-contention workload."""

    block_size: int = Field(default=1000)
    n_shared_objects: int = Field(default=50, ge=1)
    count_mu: float = Field(default=0.5)
    count_sigma: float = Field(default=0.5, gt=0)
    zipf_s: float = Field(default=2.0, gt=0)
    p_read: float = Field(default=0.35, ge=0, le=1)
    p_readwrite: float = Field(default=0.4225, ge=0, le=1)
    p_write: float = Field(default=0.2275, ge=0, le=1)
    p_use: float = Field(default=0.9, gt=0, le=1)
    knowledge: int = Field(default=0, ge=0, le=100)
    duration_mu: float = Field(default=2.0)
    duration_sigma: float = Field(default=0.5, gt=0)
    owned_fraction: float = Field(default=0.0, ge=0, le=1)
    n_immutable_objects: int = Field(default=0, ge=0)
    p_immutable_read: float = Field(default=0.0, ge=0, le=1)
    seed: int = Field(default=1, ge=0, lt=2**64)

    @field_validator("block_size")
    @classmethod
    def check_block_size(cls, value: int) -> int:
        if value < 1:
            raise ValueError("block_size must be ≥ 1")
        return value

    @model_validator(mode="after")
    def check_kind_mix(self) -> "WorkloadParams":
        if abs(self.p_read + self.p_readwrite + self.p_write - 1.0) > 1e-9:
            raise ValueError("p_read + p_readwrite + p_write must sum to 1")
        return self


class Block(SQLModel, table=False):
    """A block of transactions in consensus order, plus the parameters that generated it."""

    params: Optional[WorkloadParams] = Field(default=None)
    transactions: list[Transaction] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transactions)

    def object_ids(self) -> list[int]:
        """The epoch's object universe: every object any transaction may touch."""
        return sorted({a.object_id for t in self.transactions for a in t.exhaustive_set})


@dataclass(frozen=True, order=True)
class Version:
    """A write in multi-version memory, ordered by writer index then incarnation."""

    writer: int
    incarnation: int = 0


GENESIS = Version(writer=-1, incarnation=0)


class OutcomeKind(str, Enum):
    FROM_STORAGE = "from_storage"
    FROM_VERSION = "from_version"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class ReadOutcome:
    kind: OutcomeKind
    version: Optional[Version] = None
    blocker: Optional[int] = None

    @classmethod
    def from_storage(cls) -> "ReadOutcome":
        return cls(OutcomeKind.FROM_STORAGE)

    @classmethod
    def from_version(cls, version: Version) -> "ReadOutcome":
        return cls(OutcomeKind.FROM_VERSION, version=version)

    @classmethod
    def blocked(cls, blocker: int) -> "ReadOutcome":
        return cls(OutcomeKind.BLOCKED, blocker=blocker)

    @property
    def observed_writer(self) -> int:
        """Writer index the read observed; genesis (-1) for storage reads."""
        if self.version is None:
            return GENESIS.writer
        return self.version.writer


@dataclass(frozen=True)
class ReadLogEntry:
    object_id: int
    observed: ReadOutcome


class EngineConfig(SQLModel, table=False):
    engine: EngineKind
    workers: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    watchdog_s: Optional[float] = Field(default=None, gt=0)
    record_tasks: bool = Field(default=False)

    @model_validator(mode="after")
    def force_single_worker(self) -> "EngineConfig":
        if self.engine is EngineKind.SEQUENTIAL:
            self.workers = 1
        return self


class TxnStats(SQLModel, table=False):
    index: int
    incarnations: int = 0
    executions: int = 0
    waits: int = 0
    validations: int = 0


class EpochReport(SQLModel, table=False):
    """Metrics and committed final state of one epoch."""

    engine: EngineKind
    workers: int
    block_size: int
    duration_ms: float
    tps: float
    reexecutions: int = Field(default=0, ge=0)
    executions: int = 0
    failed_validations: int = 0
    greedy_commits: int = 0
    aborted_reads: int = 0
    final_state: dict[int, Version] = Field(default_factory=dict)
    per_txn: list[TxnStats] = Field(default_factory=list)
    read_logs: dict[int, list[ReadLogEntry]] = Field(default_factory=dict)
    task_trace: list[tuple[str, int]] = Field(default_factory=list)

    def scalars(self) -> dict[str, object]:
        return {
            "engine": self.engine.value,
            "workers": self.workers,
            "block_size": self.block_size,
            "duration_ms": self.duration_ms,
            "tps": self.tps,
            "reexecutions": self.reexecutions,
            "executions": self.executions,
            "failed_validations": self.failed_validations,
            "greedy_commits": self.greedy_commits,
            "aborted_reads": self.aborted_reads,
        }


def throughput(block_size: int, duration_ms: float) -> float:
    """Transactions per second; 0 for an empty block or an unmeasurable duration."""
    if block_size == 0 or duration_ms <= 0:
        return 0.0
    return block_size / (duration_ms / 1000)


class SweepSpec(SQLModel, table=False):
    """Cross product of experiment axes."""

    engines: list[EngineKind] = Field(min_length=1)
    workers_list: list[int] = Field(min_length=1)
    knowledge_list: list[int] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    block_size: int = Field(default=1000, ge=1)
    repeats: int = Field(default=5, ge=1)
    verify: bool = Field(default=False)
    workload: dict[str, int | float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_axes(self) -> "SweepSpec":
        if any(w < 1 for w in self.workers_list):
            raise ValueError("workers must be ≥ 1")
        if any(not 0 <= k <= 100 for k in self.knowledge_list):
            raise ValueError("knowledge must be within 0..100")
        return self


# Non-persistent schema for one sweep measurement (CSV row)
class RunRow(SQLModel, table=False):
    engine: EngineKind
    workers: int
    knowledge: int
    seed: int
    repeat: int
    block_size: int
    duration_ms: float
    tps: float
    reexecutions: int
    failed_validations: int
    greedy_commits: int
    verified: bool


class AggregateRow(SQLModel, table=False):
    engine: EngineKind
    workers: int
    knowledge: int
    runs: int
    duration_ms_mean: float
    duration_ms_std: float
    tps_mean: float
    tps_std: float
    reexecutions_mean: float
    reexecutions_std: float
    failed_validations_mean: float
    failed_validations_std: float


class RunRecord(SQLModel, table=True):
    """Persisted sweep measurement."""

    __tablename__ = "run_records"  # type: ignore[assignment]

    id: Optional[int] = Field(default=None, primary_key=True)
    sweep_id: str = Field(max_length=64, index=True)
    engine: EngineKind
    workers: int
    knowledge: int
    seed: int
    repeat: int
    block_size: int
    duration_ms: float
    tps: float
    reexecutions: int
    failed_validations: int
    greedy_commits: int
    verified: bool
    created_at: datetime = Field(default_factory=datetime.utcnow)


def touches_owned_only(accesses: list[Access]) -> bool:
    kinds = {a.object_kind for a in accesses}
    return ObjectKind.OWNED in kinds and ObjectKind.SHARED not in kinds


def is_owned_only(t: Transaction) -> bool:
    """True iff t touches no shared object and at least one owned object."""
    return touches_owned_only(t.exhaustive_set)


def conflicts(a: Transaction, b: Transaction) -> bool:
    """Exhaustive-set conflict: a shared object with at least one writing side."""
    if a.index == b.index:
        raise ValueError(f"conflicts() needs two distinct transactions, got index {a.index} twice")
    kinds_a = {access.object_id: access.kind for access in a.exhaustive_set}
    for access in b.exhaustive_set:
        other = kinds_a.get(access.object_id)
        if other is not None and (other.writes or access.kind.writes):
            return True
    return False
