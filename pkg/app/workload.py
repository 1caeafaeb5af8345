"""Seeded generation of synthetic high-contention blocks, and the block file format.

Draw order per transaction (normative for reproducibility):
  owned coin (only when owned_fraction > 0), access count, objects, access kinds,
  usage coins (all re-flipped while none is used), hint coins, immutable read
  (only when configured: object pick then its hint coin), duration.
Owned-only transactions skip count, objects, kinds and usage coins.
Objects are Zipf draws with duplicates rejected. After MAX_ZIPF_REJECTIONS rejections in one
transaction every remaining object is one uniform draw against the pmf renormalised over the
objects not yet picked, which is the law rejection converges to.
"""

import json
import math
from logging import getLogger
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError
from sqlmodel import Field, SQLModel

from app.models import Access, AccessKind, Block, ObjectKind, Transaction, WorkloadParams

logger = getLogger(__name__)

BLOCK_FORMAT = "nemo-block/1"
# Duplicate Zipf draws tolerated per transaction before falling back to the renormalised pmf.
MAX_ZIPF_REJECTIONS = 64


class WorkloadError(ValueError):
    pass


class BlockFileError(ValueError):
    pass


class BlockRng:
    """Deterministic 64-bit seeded stream of uniforms and Box-Muller normal deviates."""

    def __init__(self, seed: int) -> None:
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._spare: Optional[float] = None

    def uniform(self) -> float:
        return float(self._gen.random())

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = self.uniform()
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(1.0 - u1))
        self._spare = radius * math.sin(2.0 * math.pi * u2)
        return radius * math.cos(2.0 * math.pi * u2)


def sample_lognormal(mu: float, sigma: float, rng: BlockRng) -> float:
    if sigma <= 0:
        raise WorkloadError(f"sigma must be positive, got {sigma}")
    return math.exp(mu + sigma * rng.normal())


def _check_zipf(n: int, s: float) -> None:
    if n < 1 or s <= 0:
        raise WorkloadError(f"Zipf needs n ≥ 1 and s > 0, got n={n}, s={s}")


def zipf_pmf(n: int, s: float, k: int) -> float:
    _check_zipf(n, s)
    if not 1 <= k <= n:
        raise WorkloadError(f"Zipf rank {k} outside 1..{n}")
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    return float(weights[k - 1] / weights.sum())


class ZipfTable:
    """Precomputed cumulative pmf of Zipf(n, s) for inverse-CDF sampling."""

    def __init__(self, n: int, s: float) -> None:
        _check_zipf(n, s)
        self.n = n
        weights = np.arange(1, n + 1, dtype=np.float64) ** -s
        self.weights = weights / weights.sum()
        self.cdf = np.cumsum(self.weights)

    def sample(self, rng: BlockRng) -> int:
        k = int(np.searchsorted(self.cdf, rng.uniform(), side="right")) + 1
        return min(k, self.n)

    def sample_excluding(self, rng: BlockRng, taken: list[int]) -> int:
        """Draw a rank from the pmf renormalised over the ranks not in `taken`."""
        free = np.setdiff1d(np.arange(self.n), np.asarray(taken, dtype=np.int64) - 1)
        cdf = np.cumsum(self.weights[free])
        i = int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right"))
        return int(free[min(i, len(free) - 1)]) + 1


def sample_zipf(n: int, s: float, rng: BlockRng) -> int:
    return ZipfTable(n, s).sample(rng)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


class WorkloadService:
    """Workload construction and block file I/O."""

    @staticmethod
    def build_params(**overrides) -> WorkloadParams:
        try:
            return WorkloadParams.model_validate(overrides)
        except ValidationError as e:
            logger.error(f"Invalid workload parameters: {e}")
            messages = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'params'}: {err['msg']}" for err in e.errors())
            raise WorkloadError(messages) from e

    @staticmethod
    def generate_block(params: WorkloadParams) -> Block:
        rng = BlockRng(params.seed)
        zipf = ZipfTable(params.n_shared_objects, params.zipf_s)
        hint_p = params.knowledge / 100
        immutable_base = params.n_shared_objects
        next_owned = params.n_shared_objects + params.n_immutable_objects
        transactions: list[Transaction] = []

        for index in range(params.block_size):
            owned = params.owned_fraction > 0 and rng.uniform() < params.owned_fraction
            if owned:
                exhaustive = [Access(object_id=next_owned, kind=AccessKind.READ_WRITE, object_kind=ObjectKind.OWNED)]
                next_owned += 1
                used = list(exhaustive)
            else:
                exhaustive = _draw_shared_accesses(params, zipf, rng)
                used = _draw_usage(exhaustive, params.p_use, rng)
            hinted = [a for a in used if rng.uniform() < hint_p]

            if params.n_immutable_objects > 0 and params.p_immutable_read > 0:
                pick = rng.uniform()
                hint_coin = rng.uniform()
                if pick < params.p_immutable_read:
                    oid = immutable_base + min(
                        int(pick / params.p_immutable_read * params.n_immutable_objects),
                        params.n_immutable_objects - 1,
                    )
                    access = Access(object_id=oid, kind=AccessKind.READ, object_kind=ObjectKind.IMMUTABLE)
                    exhaustive.append(access)
                    used.append(access)
                    if hint_coin < hint_p:
                        hinted.append(access)

            duration = sample_lognormal(params.duration_mu, params.duration_sigma, rng)
            transactions.append(
                Transaction(
                    index=index,
                    exhaustive_set=exhaustive,
                    used_set=used,
                    hint_set=hinted,
                    duration_ms=duration,
                    owned_only=owned,
                )
            )

        logger.info(
            f"Generated block of {params.block_size} transactions (seed {params.seed}, knowledge {params.knowledge})"
        )
        return Block(params=params, transactions=transactions)

    @staticmethod
    def save_block(block: Block, path: Path) -> None:
        document = BlockFile(
            format=BLOCK_FORMAT,
            params=block.params,
            transactions=[_to_record(t) for t in block.transactions],
        )
        try:
            path.write_text(document.model_dump_json(indent=2))
        except OSError as e:
            logger.error(f"Could not write block file {path}: {e}")
            raise BlockFileError(f"{path}: {e}") from e

    @staticmethod
    def load_block(path: Path) -> Block:
        try:
            raw = json.loads(path.read_text())
        except OSError as e:
            logger.error(f"Could not read block file {path}: {e}")
            raise BlockFileError(f"{path}: {e}") from e
        except json.JSONDecodeError as e:
            logger.error(f"Malformed block file {path}: {e}")
            raise BlockFileError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
        try:
            document = BlockFile.model_validate(raw)
        except ValidationError as e:
            logger.error(f"Block file {path} failed schema validation: {e}")
            raise BlockFileError(f"{path}: {_describe(e, raw)}") from e
        if document.format != BLOCK_FORMAT:
            raise BlockFileError(f"{path}: unsupported format {document.format!r}")
        transactions = []
        for position, record in enumerate(document.transactions):
            if record.index != position:
                raise BlockFileError(f"{path}: transaction {record.index} found at position {position}")
            try:
                transactions.append(_from_record(record))
            except ValidationError as e:
                logger.error(f"Transaction {record.index} in {path} is invalid: {e}")
                raise BlockFileError(f"{path}: transaction {record.index}: {_first_message(e)}") from e
        return Block(params=document.params, transactions=transactions)

    @staticmethod
    def summarize_block(block: Block) -> "BlockSummary":
        n = len(block.transactions)
        shared = [t for t in block.transactions if not t.owned_only]
        counts: dict[int, int] = {}
        for t in shared:
            for a in t.exhaustive_set:
                if a.object_kind is ObjectKind.SHARED:
                    counts[a.object_id] = counts.get(a.object_id, 0) + 1
        used = sum(len(t.used_set) for t in block.transactions)
        hinted = sum(len(t.hint_set) for t in block.transactions)
        hottest = max(counts, key=lambda o: (counts[o], -o)) if counts else None
        return BlockSummary(
            block_size=n,
            owned_only=n - len(shared),
            shared_objects=len(counts),
            mean_access_count=float(np.mean([len(t.exhaustive_set) for t in shared])) if shared else 0.0,
            mean_duration_ms=float(np.mean([t.duration_ms for t in block.transactions])) if n else 0.0,
            hottest_object=hottest,
            hottest_frequency=counts[hottest] / len(shared) if hottest is not None else 0.0,
            hint_coverage=hinted / used if used else 0.0,
        )


def _draw_shared_accesses(params: WorkloadParams, zipf: ZipfTable, rng: BlockRng) -> list[Access]:
    raw_count = sample_lognormal(params.count_mu, params.count_sigma, rng)
    count = min(max(round_half_up(raw_count), 1), params.n_shared_objects)
    ranks: list[int] = []
    rejections = 0
    while len(ranks) < count:
        if rejections >= MAX_ZIPF_REJECTIONS:
            ranks.append(zipf.sample_excluding(rng, ranks))
            continue
        k = zipf.sample(rng)
        if k in ranks:
            rejections += 1
        else:
            ranks.append(k)
    objects = [k - 1 for k in ranks]
    accesses = []
    for o in objects:
        u = rng.uniform()
        if u < params.p_read:
            kind = AccessKind.READ
        elif u < params.p_read + params.p_readwrite:
            kind = AccessKind.READ_WRITE
        else:
            kind = AccessKind.WRITE
        accesses.append(Access(object_id=o, kind=kind, object_kind=ObjectKind.SHARED))
    return accesses


def _draw_usage(exhaustive: list[Access], p_use: float, rng: BlockRng) -> list[Access]:
    while True:
        used = [a for a in exhaustive if rng.uniform() < p_use]
        if used:
            return used


class BlockSummary(SQLModel, table=False):
    block_size: int
    owned_only: int
    shared_objects: int
    mean_access_count: float
    mean_duration_ms: float
    hottest_object: Optional[int]
    hottest_frequency: float
    hint_coverage: float


# Block file schema
class AccessRecord(SQLModel, table=False):
    object_id: int = Field(ge=0)
    object_kind: ObjectKind = Field(default=ObjectKind.SHARED)
    kind: AccessKind
    used: bool
    hinted: bool


class TransactionRecord(SQLModel, table=False):
    index: int = Field(ge=0)
    accesses: list[AccessRecord] = Field(default_factory=list)
    duration_ms: float = Field(gt=0)
    owned_only: bool = Field(default=False)


class BlockFile(SQLModel, table=False):
    format: str
    params: Optional[WorkloadParams] = Field(default=None)
    transactions: list[TransactionRecord] = Field(default_factory=list)


def _to_record(t: Transaction) -> TransactionRecord:
    used = {(a.object_id, a.kind) for a in t.used_set}
    hinted = {(a.object_id, a.kind) for a in t.hint_set}
    return TransactionRecord(
        index=t.index,
        accesses=[
            AccessRecord(
                object_id=a.object_id,
                object_kind=a.object_kind,
                kind=a.kind,
                used=(a.object_id, a.kind) in used,
                hinted=(a.object_id, a.kind) in hinted,
            )
            for a in t.exhaustive_set
        ],
        duration_ms=t.duration_ms,
        owned_only=t.owned_only,
    )


def _from_record(record: TransactionRecord) -> Transaction:
    def access(r: AccessRecord) -> Access:
        return Access(object_id=r.object_id, kind=r.kind, object_kind=r.object_kind)

    return Transaction(
        index=record.index,
        exhaustive_set=[access(r) for r in record.accesses],
        used_set=[access(r) for r in record.accesses if r.used],
        hint_set=[access(r) for r in record.accesses if r.hinted],
        duration_ms=record.duration_ms,
        owned_only=record.owned_only,
    )


def _first_message(e: ValidationError) -> str:
    errors = e.errors()
    return str(errors[0]["msg"]) if errors else str(e)


def _describe(e: ValidationError, raw: object) -> str:
    """Name the offending transaction index and field path of the first schema error."""
    err = e.errors()[0]
    loc = list(err["loc"])
    where = ".".join(map(str, loc)) or "document"
    if len(loc) >= 2 and loc[0] == "transactions" and isinstance(loc[1], int) and isinstance(raw, dict):
        try:
            index = raw["transactions"][loc[1]].get("index", loc[1])
        except (AttributeError, IndexError, KeyError, TypeError) as lookup_error:
            logger.debug(f"Could not recover transaction index: {lookup_error}")
            index = loc[1]
        where = f"transaction {index}: " + ".".join(map(str, loc[2:]))
    return f"{where}: {err['msg']}"
