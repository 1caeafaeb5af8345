import os
import tempfile
from collections.abc import Callable, Iterable
from typing import Generator

import pytest

# the results store must point at a throwaway database before app.database is imported
os.environ.setdefault("APP_DATABASE_URL", f"sqlite:///{tempfile.gettempdir()}/nemo_bench_test.db")

from app.database import reset_db  # noqa: E402
from app.models import Access, AccessKind, Block, ObjectKind, Transaction, WorkloadParams  # noqa: E402
from app.workload import WorkloadService  # noqa: E402

TxnFactory = Callable[..., Transaction]


@pytest.fixture()
def new_db() -> Generator[None, None, None]:
    reset_db()
    yield
    reset_db()


@pytest.fixture()
def txn() -> TxnFactory:
    """Build a shared-object transaction from object id lists.

    hinted=True hints every used access; an iterable hints only those objects.
    """

    def build(
        index: int,
        reads: Iterable[int] = (),
        writes: Iterable[int] = (),
        read_writes: Iterable[int] = (),
        unused: Iterable[int] = (),
        hinted: bool | Iterable[int] = False,
        duration_ms: float = 0.2,
    ) -> Transaction:
        exhaustive = (
            [Access(object_id=o, kind=AccessKind.READ) for o in reads]
            + [Access(object_id=o, kind=AccessKind.WRITE) for o in writes]
            + [Access(object_id=o, kind=AccessKind.READ_WRITE) for o in read_writes]
        )
        skipped = set(unused)
        used = [a for a in exhaustive if a.object_id not in skipped]
        match hinted:
            case True:
                hint = list(used)
            case False:
                hint = []
            case _:
                wanted = set(hinted)
                hint = [a for a in used if a.object_id in wanted]
        return Transaction(
            index=index, exhaustive_set=exhaustive, used_set=used, hint_set=hint, duration_ms=duration_ms
        )

    return build


@pytest.fixture()
def owned_txn() -> Callable[[int, int], Transaction]:
    def build(index: int, object_id: int) -> Transaction:
        access = Access(object_id=object_id, kind=AccessKind.READ_WRITE, object_kind=ObjectKind.OWNED)
        return Transaction(
            index=index, exhaustive_set=[access], used_set=[access], hint_set=[], duration_ms=0.2, owned_only=True
        )

    return build


@pytest.fixture()
def small_block() -> Callable[..., Block]:
    """Generated block with sub-millisecond durations so engine suites stay fast."""

    def build(seed: int = 1, knowledge: int = 0, block_size: int = 60, **overrides) -> Block:
        params = WorkloadParams(
            block_size=block_size, seed=seed, knowledge=knowledge, duration_mu=-1.5, duration_sigma=0.5, **overrides
        )
        return WorkloadService.generate_block(params)

    return build
