"""Block-clocked account ledger with native currency and a data-token balance.

Every mutating call runs as a transaction: it is charged abstract cost units
from a :class:`CostSchedule`, gets a :class:`Receipt`, and (on success) appends
at most one event to the shared log.  Transactions submitted since the last
:meth:`Ledger.tick` belong to the next block, and their events only become
visible to pollers once that block is produced.
"""

from __future__ import annotations

import hashlib
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterator

from . import errors
from .events import NOTE_KINDS, Event, normalize
from .types import ADDRESS_BYTES, Address, Kind

HASH_NAME = "sha256"
DEFAULT_BLOCK_INTERVAL_S = 14


def content_hash(data: bytes) -> bytes:
    """The artifact-wide 256-bit hash."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class CostSchedule:
    base_tx_units: int = 21
    per_write_units: int = 20
    per_event_units: int = 2

    def __post_init__(self) -> None:
        for name in ("base_tx_units", "per_write_units", "per_event_units"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def cost(self, writes: int, events: int) -> int:
        return self.base_tx_units + self.per_write_units * writes + self.per_event_units * events


@dataclass(frozen=True)
class BlockClock:
    height: int
    block_interval_s: int
    genesis_offset: int = 0

    @property
    def timestamp_s(self) -> int:
        return self.height * self.block_interval_s + self.genesis_offset


@dataclass(frozen=True)
class Receipt:
    tx_id: int
    block: int
    caller: Address | None
    op: str
    cost_units: int
    outcome: str  # "success" or an error code

    @property
    def ok(self) -> bool:
        return self.outcome == "success"


@dataclass
class Account:
    address: Address
    native_balance: int = 0
    token_balance: int = 0

    def get(self, kind: Kind) -> int:
        return self.native_balance if kind is Kind.NATIVE else self.token_balance

    def add(self, kind: Kind, amount: int) -> None:
        if kind is Kind.NATIVE:
            self.native_balance += amount
        else:
            self.token_balance += amount


@dataclass
class Transaction:
    """Accumulates writes and the pending event while an operation runs."""

    caller: Address | None
    op: str
    writes: int = 0
    charged_events: int = 0
    event: tuple[str, dict[str, Any]] | None = None
    on_commit: list = field(default_factory=list)

    def write(self, slots: int = 1) -> None:
        self.writes += slots

    def emit(self, kind: str, /, **fields: Any) -> None:
        """Record the transaction's event and charge for it."""
        self.log(kind, **fields)
        self.charged_events = 1

    def log(self, kind: str, /, **fields: Any) -> None:
        """Record the transaction's event without an event charge (plain balance moves)."""
        if self.event is not None:
            raise RuntimeError("a transaction emits at most one event")
        self.event = (kind, normalize(kind, fields))


def _as_kind(kind: Kind | str) -> Kind:
    try:
        return Kind(kind)
    except ValueError:
        raise errors.InvalidAmount(f"unknown balance kind {kind!r}") from None


def _check_amount(amount: int) -> None:
    if not isinstance(amount, int) or isinstance(amount, bool) or amount < 0:
        raise errors.InvalidAmount(f"amount must be a non-negative integer, got {amount!r}")


class Ledger:
    """Single-writer ledger.  All mutations go through :meth:`transaction`."""

    def __init__(
        self,
        seed: int = 0,
        block_interval_s: int = DEFAULT_BLOCK_INTERVAL_S,
        genesis_offset: int = 0,
        costs: CostSchedule | None = None,
    ) -> None:
        if block_interval_s <= 0:
            raise ValueError("block_interval_s must be positive")
        self.seed = seed
        self.costs = costs or CostSchedule()
        self._clock = BlockClock(0, block_interval_s, genesis_offset)
        self._accounts: dict[Address, Account] = {}
        self._counter = 0
        self._receipts: list[Receipt] = []
        self._events: list[Event] = []
        self._lock = threading.RLock()

    # -- clock -----------------------------------------------------------
    @property
    def clock(self) -> BlockClock:
        return self._clock

    @property
    def height(self) -> int:
        return self._clock.height

    @property
    def pending_block(self) -> int:
        return self._clock.height + 1

    def tick(self) -> BlockClock:
        with self._lock:
            c = self._clock
            self._clock = BlockClock(c.height + 1, c.block_interval_s, c.genesis_offset)
            return self._clock

    # -- accounts --------------------------------------------------------
    def create_account(self) -> Address:
        with self._lock:
            material = b"account" + self.seed.to_bytes(8, "big", signed=True) + self._counter.to_bytes(8, "big")
            addr = Address(content_hash(material)[:ADDRESS_BYTES])
            self._counter += 1
            self._accounts[addr] = Account(addr)
            return addr

    def exists(self, addr: Address) -> bool:
        return addr in self._accounts

    def accounts(self) -> list[Address]:
        return list(self._accounts)

    def _account(self, addr: Address) -> Account:
        try:
            return self._accounts[addr]
        except KeyError:
            raise errors.UnknownAddress(str(addr)) from None

    def balance_of(self, addr: Address) -> tuple[int, int]:
        acct = self._account(addr)
        return acct.native_balance, acct.token_balance

    def total_supply(self, kind: Kind | str) -> int:
        kind = _as_kind(kind)
        return sum(a.get(kind) for a in self._accounts.values())

    # -- transactions ----------------------------------------------------
    @contextmanager
    def transaction(self, caller: Address | None, op: str) -> Iterator[Transaction]:
        """Run one serialized operation.

        The body must do all of its checks before its first mutation; a
        :class:`~datamarket.errors.MarketError` raised inside the block
        yields a failed receipt charged only the base cost.
        """
        with self._lock:
            tx = Transaction(caller, op)
            try:
                yield tx
            except errors.MarketError as exc:
                self._receipt(caller, op, self.costs.base_tx_units, exc.code)
                raise
            cost = self.costs.cost(tx.writes, tx.charged_events)
            self._receipt(caller, op, cost, "success")
            if tx.event is not None:
                kind, data = tx.event
                self._append(kind, caller, cost, data)
            for fn in tx.on_commit:
                fn()

    def _receipt(self, caller: Address | None, op: str, cost: int, outcome: str) -> Receipt:
        r = Receipt(len(self._receipts) + 1, self.pending_block, caller, op, cost, outcome)
        self._receipts.append(r)
        return r

    @property
    def last_receipt(self) -> Receipt:
        return self._receipts[-1]

    @property
    def receipts(self) -> tuple[Receipt, ...]:
        return tuple(self._receipts)

    def _append(self, kind: str, caller: Address | None, cost: int, data: dict[str, Any]) -> Event:
        ev = Event(len(self._events) + 1, self.pending_block, kind, caller, cost, data)
        self._events.append(ev)
        return ev

    def note(self, kind: str, /, caller: Address | None = None, cost: int = 0, **fields: Any) -> Event:
        """Append a simulator note to the log.  Notes are not transactions."""
        if kind not in NOTE_KINDS:
            raise ValueError(f"{kind} is not a note kind")
        with self._lock:
            return self._append(kind, caller, cost, normalize(kind, fields))

    def poll_events(self, since_seq: int = 0) -> list[Event]:
        """Events with ``seq > since_seq`` whose block has been produced."""
        h = self.height
        return [e for e in self._events[max(since_seq, 0):] if e.block <= h]

    def has_pending(self) -> bool:
        """True while some appended event waits for its block."""
        return bool(self._events) and self._events[-1].block > self.height

    @property
    def events(self) -> tuple[Event, ...]:
        """Every appended event, including those still pending."""
        return tuple(self._events)

    # -- balance-moving operations ---------------------------------------
    def mint(self, addr: Address, native: int = 0, tokens: int = 0) -> Receipt:
        with self.transaction(None, "mint") as tx:
            _check_amount(native)
            _check_amount(tokens)
            acct = self._account(addr)
            acct.native_balance += native
            acct.token_balance += tokens
            tx.write(2)
            tx.log("Minted", account=addr, native=native, tokens=tokens)
        return self.last_receipt

    def transfer(self, src: Address, dst: Address, amount: int, kind: Kind | str = Kind.TOKEN) -> Receipt:
        with self.transaction(src, "transfer") as tx:
            kind = _as_kind(kind)
            _check_amount(amount)
            a = self._account(src)
            b = self._account(dst)
            if a.get(kind) < amount:
                raise errors.InsufficientFunds(f"{src} holds {a.get(kind)} {kind.value}, needs {amount}")
            a.add(kind, -amount)
            b.add(kind, amount)
            tx.write(2)
            tx.log("Transferred", source=src, target=dst, amount=amount, kind=kind.value)
        return self.last_receipt

    def _move(self, src: Address, dst: Address, amount: int, kind: Kind, tx: Transaction) -> None:
        """Transfer inside another module's transaction; caller has checked funds."""
        self._account(src).add(kind, -amount)
        self._account(dst).add(kind, amount)
        tx.write(2)

    def _debit(self, addr: Address, amount: int, kind: Kind, tx: Transaction) -> None:
        self._account(addr).add(kind, -amount)
        tx.write(1)

    def _credit(self, addr: Address, amount: int, kind: Kind, tx: Transaction) -> None:
        self._account(addr).add(kind, amount)
        tx.write(1)

    def snapshot(self) -> dict[str, Any]:
        """Plain-data view of balances and clock, for equality checks."""
        return {
            "height": self.height,
            "balances": {a.hex: (x.native_balance, x.token_balance) for a, x in self._accounts.items()},
        }
