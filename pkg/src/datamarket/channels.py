"""Two-party token payment channels with a dispute window.

Lifecycle: ``open`` locks both deposits in escrow (on-ledger), ``pay`` and
``countersign`` exchange signed balance states off-ledger, ``close`` starts a
dispute window with a candidate state, ``challenge`` replaces the candidate by
any higher-nonce state before the deadline, and ``settle`` pays the escrow out
per the candidate once the deadline is reached.

A state is valid when both parties' Ed25519 signatures verify over
``(channel_id, nonce, balance_a, balance_b)``.  The nonce-0 state is the
opening split and needs no signatures.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace

from . import crypto, errors
from .ledger import Ledger
from .types import Address, Kind

DEFAULT_DISPUTE_WINDOW = 10


class Status(enum.Enum):
    OPEN = "open"
    CLOSING = "closing"
    SETTLED = "settled"


@dataclass(frozen=True)
class ChannelState:
    channel_id: int
    nonce: int
    balance_a: int
    balance_b: int
    sig_a: bytes = b""
    sig_b: bytes = b""

    def message(self) -> bytes:
        return state_message(self.channel_id, self.nonce, self.balance_a, self.balance_b)


def state_message(channel_id: int, nonce: int, balance_a: int, balance_b: int) -> bytes:
    return b"datamarket/channel-state" + struct.pack(">QQQQ", channel_id, nonce, balance_a, balance_b)


def close_message(state: ChannelState) -> bytes:
    return b"datamarket/cooperative-close" + state.message()[len(b"datamarket/channel-state") :]


@dataclass
class Channel:
    id: int
    party_a: Address
    party_b: Address
    key_a: bytes
    key_b: bytes
    escrow_a: int
    escrow_b: int
    status: Status = Status.OPEN
    deadline: int | None = None
    candidate: ChannelState | None = None

    @property
    def total(self) -> int:
        return self.escrow_a + self.escrow_b

    def initial_state(self) -> ChannelState:
        return ChannelState(self.id, 0, self.escrow_a, self.escrow_b)

    def side(self, party: Address | str) -> str:
        if party in ("a", self.party_a):
            return "a"
        if party in ("b", self.party_b):
            return "b"
        raise errors.NotAParty(f"{party} is not a party to channel {self.id}")


def _check_state(ch: Channel, state: ChannelState) -> None:
    if state.channel_id != ch.id:
        raise errors.BadSignature(f"state belongs to channel {state.channel_id}, not {ch.id}")
    if state.balance_a < 0 or state.balance_b < 0 or state.balance_a + state.balance_b != ch.total:
        raise errors.BadSignature("state balances do not sum to the escrow")
    if state.nonce == 0:
        if (state.balance_a, state.balance_b) != (ch.escrow_a, ch.escrow_b):
            raise errors.BadSignature("nonce-0 state must equal the deposits")
        return
    msg = state.message()
    if not (crypto.verify(ch.key_a, msg, state.sig_a) and crypto.verify(ch.key_b, msg, state.sig_b)):
        raise errors.BadSignature(f"state nonce {state.nonce} is not signed by both parties")


def pay(ch: Channel, latest: ChannelState, payer: Address | str, amount: int, payer_private: bytes) -> ChannelState:
    """Propose the next state moving ``amount`` from payer to payee, signed by the payer only."""
    if ch.status is not Status.OPEN:
        raise errors.ChannelNotOpen(f"channel {ch.id} is {ch.status.value}")
    _check_state(ch, latest)
    side = ch.side(payer)
    if not isinstance(amount, int) or amount < 0:
        raise errors.InvalidAmount(f"amount must be a non-negative integer, got {amount!r}")
    have = latest.balance_a if side == "a" else latest.balance_b
    if amount > have:
        raise errors.InsufficientChannelBalance(f"payer holds {have} in channel, wants to pay {amount}")
    delta = amount if side == "a" else -amount
    new = ChannelState(ch.id, latest.nonce + 1, latest.balance_a - delta, latest.balance_b + delta)
    sig = crypto.sign(payer_private, new.message())
    return replace(new, sig_a=sig) if side == "a" else replace(new, sig_b=sig)


def countersign(ch: Channel, proposed: ChannelState, latest: ChannelState, payee: Address | str, payee_private: bytes) -> ChannelState:
    """Accept ``proposed`` as the successor of ``latest``: check it, then add the payee's signature."""
    if ch.status is not Status.OPEN:
        raise errors.ChannelNotOpen(f"channel {ch.id} is {ch.status.value}")
    if proposed.nonce != latest.nonce + 1:
        raise errors.StaleNonce(f"expected nonce {latest.nonce + 1}, got {proposed.nonce}")
    side = ch.side(payee)
    payer_key, payer_sig = (ch.key_b, proposed.sig_b) if side == "a" else (ch.key_a, proposed.sig_a)
    if proposed.channel_id != ch.id or not crypto.verify(payer_key, proposed.message(), payer_sig):
        raise errors.BadSignature("proposed state is not signed by the payer")
    if proposed.balance_a < 0 or proposed.balance_b < 0 or proposed.balance_a + proposed.balance_b != ch.total:
        raise errors.BadSignature("proposed balances do not sum to the escrow")
    # the payee may only gain
    gained = proposed.balance_a - latest.balance_a if side == "a" else proposed.balance_b - latest.balance_b
    if gained < 0:
        raise errors.BadSignature("proposed state moves funds away from the countersigner")
    sig = crypto.sign(payee_private, proposed.message())
    return replace(proposed, sig_a=sig) if side == "a" else replace(proposed, sig_b=sig)


class ChannelRegistry:
    """On-ledger half of the channels: escrow, close, challenge, settle."""

    def __init__(self, ledger: Ledger, dispute_window: int = DEFAULT_DISPUTE_WINDOW) -> None:
        if dispute_window <= 0:
            raise ValueError("dispute_window must be positive")
        self.ledger = ledger
        self.dispute_window = dispute_window
        self.channels: dict[int, Channel] = {}

    def get(self, channel_id: int) -> Channel:
        try:
            return self.channels[channel_id]
        except KeyError:
            raise errors.UnknownChannel(str(channel_id)) from None

    def total_escrow(self) -> int:
        return sum(ch.total for ch in self.channels.values() if ch.status is not Status.SETTLED)

    def open(
        self,
        a: Address,
        b: Address,
        deposit_a: int,
        deposit_b: int,
        key_a: bytes | str,
        key_b: bytes | str,
    ) -> Channel:
        """Lock both deposits; ``key_a``/``key_b`` are the parties' public keys."""
        with self.ledger.transaction(a, "channel_open") as tx:
            for d in (deposit_a, deposit_b):
                if not isinstance(d, int) or isinstance(d, bool) or d < 0:
                    raise errors.InvalidAmount(f"deposit must be a non-negative integer, got {d!r}")
            if a == b:
                raise errors.NotAParty("a channel needs two distinct parties")
            ka, kb = crypto.parse_public_key(key_a), crypto.parse_public_key(key_b)
            if self.ledger.balance_of(a)[1] < deposit_a:
                raise errors.InsufficientFunds(f"{a} cannot deposit {deposit_a}")
            if self.ledger.balance_of(b)[1] < deposit_b:
                raise errors.InsufficientFunds(f"{b} cannot deposit {deposit_b}")
            cid = len(self.channels) + 1
            self.ledger._debit(a, deposit_a, Kind.TOKEN, tx)
            self.ledger._debit(b, deposit_b, Kind.TOKEN, tx)
            ch = Channel(cid, a, b, ka, kb, deposit_a, deposit_b)
            self.channels[cid] = ch
            tx.write(1)
            tx.emit("ChannelOpened", channel=cid, party_a=a, party_b=b, deposit_a=deposit_a, deposit_b=deposit_b)
        return ch

    def close(self, channel_id: int, state: ChannelState, closer: Address) -> Channel:
        ch = self.get(channel_id)
        with self.ledger.transaction(closer, "channel_close") as tx:
            if ch.status is not Status.OPEN:
                raise errors.ChannelNotOpen(f"channel {ch.id} is {ch.status.value}")
            ch.side(closer)
            _check_state(ch, state)
            deadline = self.ledger.height + self.dispute_window
            tx.write(2)
            tx.emit(
                "ChannelClosing",
                channel=ch.id,
                nonce=state.nonce,
                balance_a=state.balance_a,
                balance_b=state.balance_b,
                deadline=deadline,
            )
            ch.status, ch.deadline, ch.candidate = Status.CLOSING, deadline, state
        return ch

    def challenge(self, channel_id: int, newer: ChannelState, caller: Address | None = None) -> Channel:
        ch = self.get(channel_id)
        with self.ledger.transaction(caller, "channel_challenge") as tx:
            if ch.status is not Status.CLOSING:
                raise errors.ChannelNotClosing(f"channel {ch.id} is {ch.status.value}")
            if self.ledger.height >= ch.deadline:
                raise errors.DeadlinePassed(f"deadline {ch.deadline} reached at height {self.ledger.height}")
            if newer.nonce <= ch.candidate.nonce:
                raise errors.NotNewer(f"nonce {newer.nonce} does not beat {ch.candidate.nonce}")
            _check_state(ch, newer)
            tx.write(1)
            tx.emit("ChannelChallenged", channel=ch.id, nonce=newer.nonce, balance_a=newer.balance_a, balance_b=newer.balance_b)
            ch.candidate = newer
        return ch

    def settle(self, channel_id: int, caller: Address | None = None):
        ch = self.get(channel_id)
        with self.ledger.transaction(caller, "channel_settle") as tx:
            if ch.status is Status.SETTLED:
                raise errors.AlreadySettled(f"channel {ch.id}")
            if ch.status is not Status.CLOSING:
                raise errors.ChannelNotClosing(f"channel {ch.id} is {ch.status.value}")
            if self.ledger.height < ch.deadline:
                raise errors.TooEarly(f"deadline {ch.deadline}, height {self.ledger.height}")
            self._payout(ch, ch.candidate, tx)
        return self.ledger.last_receipt

    def cooperative_close(self, channel_id: int, state: ChannelState, close_sig_a: bytes, close_sig_b: bytes, caller: Address | None = None):
        """Settle immediately when both parties signed a close request for ``state``."""
        ch = self.get(channel_id)
        with self.ledger.transaction(caller, "channel_cooperative_close") as tx:
            if ch.status is not Status.OPEN:
                raise errors.ChannelNotOpen(f"channel {ch.id} is {ch.status.value}")
            _check_state(ch, state)
            msg = close_message(state)
            if not (crypto.verify(ch.key_a, msg, close_sig_a) and crypto.verify(ch.key_b, msg, close_sig_b)):
                raise errors.BadSignature("close request is not signed by both parties")
            ch.candidate = state
            self._payout(ch, state, tx)
        return self.ledger.last_receipt

    def _payout(self, ch: Channel, state: ChannelState, tx) -> None:
        self.ledger._credit(ch.party_a, state.balance_a, Kind.TOKEN, tx)
        self.ledger._credit(ch.party_b, state.balance_b, Kind.TOKEN, tx)
        tx.write(1)
        tx.emit("ChannelSettled", channel=ch.id, nonce=state.nonce, balance_a=state.balance_a, balance_b=state.balance_b)
        ch.status = Status.SETTLED
