"""Deterministic scenario execution.

The schedule is walked one action at a time: either the next scripted step
(when its block is the current height) or a block tick.  After every tick the
actors react to newly visible events.  Vendors answer purchases with wrapped
keys, and customers decrypt what was delivered to them.  With
``concurrent=True`` the reaction logic runs in a thread pool.  The resulting
commands are still submitted in actor-declaration order, so the log is the
same either way.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .. import crypto
from ..blobstore import BlobStore
from ..channels import ChannelRegistry, ChannelState, close_message, countersign, pay
from ..errors import MarketError, RunFinished, UnknownChannel
from ..ledger import HASH_NAME, Ledger
from ..marketplace import Marketplace
from ..types import Address, Kind
from .actors import Customer, Device, Vendor, actor_rng
from .report import Report, assemble
from .scenario import Scenario, Step

# ticks allowed after the last step before the run is declared stuck
MAX_DRAIN_TICKS = 64


@dataclass
class ChannelBook:
    """Off-ledger view of one channel shared by its two parties."""

    channel_id: int
    states: list[ChannelState] = field(default_factory=list)

    @property
    def latest(self) -> ChannelState:
        return self.states[-1]


class Simulation:
    def __init__(self, scenario: Scenario, concurrent: bool = False, store_root=None) -> None:
        self.scenario = scenario
        self.concurrent = concurrent
        self.ledger = Ledger(seed=scenario.seed, block_interval_s=scenario.block_interval_s, costs=scenario.costs)
        self.store = BlobStore(store_root, clock=lambda: self.ledger.height)
        self.market = Marketplace(self.ledger, self.store, payment_kind=Kind(scenario.payment))
        self.channels = ChannelRegistry(self.ledger, scenario.dispute_window)
        self.books: dict[str, ChannelBook] = {}
        self.actors: dict[str, Any] = {}
        self.by_address: dict[Address, Any] = {}
        self.view_calls: Counter = Counter()
        self.failures: list[tuple[str, str, str]] = []
        # (vendor, sensor_type, index) -> plaintext the device produced
        self.plaintexts: dict[tuple[Address, int, int], bytes] = {}
        self.verified = 0
        self.mismatched = 0
        self.push_times: dict[str, list[int]] = {}
        self._schedule: list[Step] = list(scenario.steps)
        self._pos = 0
        self._drain = 0
        self._quiet = False
        self._started = False
        self._setup()

    # -- setup -------------------------------------------------------------
    def _setup(self) -> None:
        s = self.scenario
        c = s.costs
        self.ledger.note(
            "ScenarioStarted",
            name=s.name,
            seed=s.seed,
            block_interval_s=s.block_interval_s,
            push_interval_s=s.push_interval_s,
            payment=s.payment,
            hash=HASH_NAME,
            base_tx_units=c.base_tx_units,
            per_write_units=c.per_write_units,
            per_event_units=c.per_event_units,
        )
        addresses = {name: self.ledger.create_account() for name in s.actors}
        for name, spec in s.actors.items():
            rng = actor_rng(s.seed, name)
            addr = addresses[name]
            if spec.role == "device":
                actor = Device(spec, addr, addresses[spec.vendor], crypto.MasterKey(rng.randbytes(32)), rng, spec.first_key)
            elif spec.role == "vendor":
                actor = Vendor(spec, addr, crypto.generate_keypair(rng.randbytes(32)), rng)
                actor.key_service = self._key_service(addr)
            else:
                actor = Customer(spec, addr, crypto.generate_keypair(rng.randbytes(32)), rng)
            self.actors[name] = actor
            self.by_address[addr] = actor
            self.ledger.note("ActorDeclared", name=name, role=spec.role, address=addr)
            self.push_times[name] = []
        for name, spec in s.actors.items():
            if spec.tokens or spec.native:
                self.ledger.mint(addresses[name], native=spec.native, tokens=spec.tokens)

    def _key_service(self, vendor: Address):
        def service(device: Address, index: int) -> crypto.SymKey:
            actor = self.by_address.get(device)
            if not isinstance(actor, Device) or actor.vendor != vendor:
                raise KeyError(f"{device} is not a provisioned device of {vendor}")
            return actor.key_for(index)

        return service

    # -- stepping ----------------------------------------------------------
    @property
    def finished(self) -> bool:
        return self._pos >= len(self._schedule) and self._quiet

    def step(self) -> str:
        """Advance one scheduled step or one tick; returns a short description."""
        if self.finished:
            raise RunFinished("scenario already complete")
        if self._pos < len(self._schedule) and self._schedule[self._pos].block <= self.ledger.height:
            st = self._schedule[self._pos]
            self._pos += 1
            self._quiet = False
            self._execute(st)
            return f"@{st.block} {st.verb} {st.actor}"
        self.ledger.tick()
        worked = self._react()
        pending = self.ledger.has_pending()
        if self._pos >= len(self._schedule):
            self._drain += 1
            if self._drain > MAX_DRAIN_TICKS:
                raise RuntimeError("simulation did not settle after the last step")
            self._quiet = not worked and not pending
        return f"tick -> {self.ledger.height}"

    def run(self) -> Report:
        while not self.finished:
            self.step()
        return self.report()

    def _fail(self, st_verb: str, actor: Any, exc: MarketError, receipts_before: int) -> None:
        receipts = self.ledger.receipts
        cost = sum(r.cost_units for r in receipts[receipts_before:] if not r.ok)
        self.failures.append((actor.name, st_verb, exc.code))
        self.ledger.note("StepFailed", caller=actor.address, cost=cost, op=st_verb, error=exc.code)

    def _execute(self, st: Step) -> None:
        actor = self.actors[st.actor]
        before = len(self.ledger.receipts)
        try:
            getattr(self, f"_do_{st.verb}")(actor, st)
        except MarketError as exc:
            self._fail(st.verb, actor, exc, before)

    # -- verbs -------------------------------------------------------------
    def _do_register(self, actor, st: Step) -> None:
        if isinstance(actor, Vendor):
            sensors = [t for t, _ in actor.spec.sensors]
            costs = [p for _, p in actor.spec.sensors]
            self.market.vendor_register(actor.address, actor.spec.prefix, sensors, costs)
        else:
            self.market.customer_register(actor.address, actor.keys.public_hex)

    def _do_whitelist(self, actor: Vendor, st: Step) -> None:
        self.market.add_valid_device(actor.address, self.actors[st.args["device"]].address)

    def _do_push(self, actor: Device, st: Step) -> None:
        a = st.args
        plaintext, ciphertext, code, index = actor.produce(
            a.get("size", actor.spec.size),
            a.get("lat", actor.spec.lat),
            a.get("lon", actor.spec.lon),
            a.get("level", actor.spec.level),
        )
        handle = self.store.put(ciphertext)
        timestamp = self.ledger.clock.timestamp_s + st.offset_s % self.scenario.block_interval_s
        vendor = actor.vendor
        self.market.sensor_data_push(
            actor.address,
            vendor,
            actor.spec.sensor,
            actor.spec.schema,
            timestamp,
            code,
            handle,
            index,
            actor.spec.scheme,
        )
        slot = self.market.sensor_data_length(vendor, actor.spec.sensor) - 1
        self.plaintexts[(vendor, actor.spec.sensor, slot)] = plaintext
        self.push_times[actor.name].append(timestamp)

    def _do_query(self, actor: Customer, st: Step) -> None:
        sensor = st.args["sensor"]
        self.view_calls["vendor_length"] += 1
        self.market.vendor_length()
        i = 0
        while True:
            try:
                vendor = self.market.query_sensor(sensor, i)
            except MarketError:
                self.view_calls["query_sensor"] += 1
                break
            self.view_calls["query_sensor"] += 1
            self.market.get_vendor(vendor)
            self.view_calls["get_vendor"] += 1
            i += 1

    def _do_pull(self, actor: Customer, st: Step) -> None:
        vendor = self.actors[st.args["vendor"]].address
        sensor = st.args["sensor"]
        self.view_calls["sensor_data_length"] += 1
        self.market.sensor_data_length(vendor, sensor)
        self.view_calls["get_sensor_price"] += 1
        self.market.get_sensor_price(vendor, sensor)
        self.view_calls["sensor_data_pull"] += 1
        self.market.sensor_data_pull(vendor, sensor, st.args["index"])

    def _do_buy(self, actor: Customer, st: Step) -> None:
        vendor = self.actors[st.args["vendor"]].address
        self.market.request_for_data(actor.address, vendor, st.args["sensor"], st.args["index"])

    def _do_vote(self, actor: Customer, st: Step) -> None:
        self.market.vote_for_vendor(actor.address, self.actors[st.args["vendor"]].address, st.args["value"])

    def _do_price(self, actor: Vendor, st: Step) -> None:
        self.market.update_sensor_price(actor.address, st.args["sensor"], st.args["price"])

    def _do_transfer(self, actor, st: Step) -> None:
        to = self.actors[st.args["to"]].address
        self.ledger.transfer(actor.address, to, st.args["amount"], st.args.get("kind", "token"))

    def _do_channel_open(self, actor, st: Step) -> None:
        peer = self.actors[st.args["peer"]]
        ch = self.channels.open(
            actor.address,
            peer.address,
            st.args["deposit"],
            st.args.get("peer_deposit", 0),
            actor.keys.public,
            peer.keys.public,
        )
        self.books[st.args["name"]] = ChannelBook(ch.id, [ch.initial_state()])

    def _channel(self, st: Step):
        book = self.books.get(st.args["channel"])
        if book is None:
            raise UnknownChannel(st.args["channel"])
        return book, self.channels.get(book.channel_id)

    def _do_channel_pay(self, actor, st: Step) -> None:
        book, ch = self._channel(st)
        payee = self.by_address[ch.party_b if actor.address == ch.party_a else ch.party_a]
        proposed = pay(ch, book.latest, actor.address, st.args["amount"], actor.keys.private)
        signed = countersign(ch, proposed, book.latest, payee.address, payee.keys.private)
        book.states.append(signed)

    def _do_channel_close(self, actor, st: Step) -> None:
        book, ch = self._channel(st)
        nonce = st.args.get("nonce", book.latest.nonce)
        state = next((s for s in book.states if s.nonce == nonce), book.latest)
        self.channels.close(ch.id, state, actor.address)

    def _do_channel_challenge(self, actor, st: Step) -> None:
        book, ch = self._channel(st)
        self.channels.challenge(ch.id, book.latest, actor.address)

    def _do_channel_settle(self, actor, st: Step) -> None:
        book, ch = self._channel(st)
        self.channels.settle(ch.id, actor.address)

    def cooperative_close(self, name: str) -> None:
        book = self.books[name]
        ch = self.channels.get(book.channel_id)
        a, b = self.by_address[ch.party_a], self.by_address[ch.party_b]
        msg = close_message(book.latest)
        self.channels.cooperative_close(
            ch.id, book.latest, crypto.sign(a.keys.private, msg), crypto.sign(b.keys.private, msg), a.address
        )

    # -- reactions ---------------------------------------------------------
    def _react(self) -> bool:
        vendors = [a for a in self.actors.values() if isinstance(a, Vendor)]
        customers = [a for a in self.actors.values() if isinstance(a, Customer)]
        batches = {}
        for a in vendors + customers:
            batches[a.name] = self.market.poll_events(a.cursor)
            if batches[a.name]:
                a.cursor = batches[a.name][-1].seq

        def decide(a):
            if isinstance(a, Vendor):
                out = []
                for ev in batches[a.name]:
                    try:
                        out.extend(a.decide(self.market, [ev]))
                    except (MarketError, KeyError) as exc:
                        out.append(exc)
                return out
            return a.decide(self.store, batches[a.name])

        order = vendors + customers
        if self.concurrent and len(order) > 1:
            with ThreadPoolExecutor(max_workers=min(8, len(order))) as pool:
                results = list(pool.map(decide, order))
        else:
            results = [decide(a) for a in order]

        worked = False
        for a, out in zip(order, results):
            for item in out:
                worked = True
                if isinstance(a, Vendor):
                    self._deliver(a, item)
                else:
                    self._record_decryption(a, item)
        return worked

    def _deliver(self, vendor: Vendor, item) -> None:
        before = len(self.ledger.receipts)
        if isinstance(item, Exception):
            code = item.code if isinstance(item, MarketError) else "KeyUnavailable"
            self.failures.append((vendor.name, "deliver", code))
            self.ledger.note("StepFailed", caller=vendor.address, cost=0, op="deliver", error=code)
            return
        try:
            self.market.transfer_key_and_data(vendor.address, item.wrapped, item.customer, item.sensor_type, item.index)
        except MarketError as exc:
            self._fail("deliver", vendor, exc, before)

    def _record_decryption(self, customer: Customer, item) -> None:
        ref = (item.vendor, item.sensor_type, item.index)
        ok = item.plaintext is not None and self.plaintexts.get(ref) == item.plaintext
        if ok:
            self.verified += 1
        else:
            self.mismatched += 1
        self.ledger.note(
            "PayloadDecrypted",
            caller=customer.address,
            customer=customer.address,
            vendor=item.vendor,
            sensor_type=item.sensor_type,
            index=item.index,
            ok=int(ok),
        )

    # -- outputs -----------------------------------------------------------
    def events_log(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.ledger.events)

    def report(self) -> Report:
        """Report built from live state (balances, contract, sim counters)."""
        s = self.scenario
        c = s.costs
        header = {
            "name": s.name,
            "seed": s.seed,
            "hash": HASH_NAME,
            "payment": s.payment,
            "block_interval_s": s.block_interval_s,
            "push_interval_s": s.push_interval_s,
            "base_tx_units": c.base_tx_units,
            "per_write_units": c.per_write_units,
            "per_event_units": c.per_event_units,
        }
        names = {a.address: n for n, a in self.actors.items()}
        roles = {n: a.role for n, a in self.actors.items()}
        balances = {n: self.ledger.balance_of(a.address) for n, a in self.actors.items()}
        votes = {n: self.market.vendors[a.address].votes for n, a in self.actors.items() if a.address in self.market.vendors}
        catalog = {}
        for n, a in sorted(self.actors.items()):
            rec = self.market.vendors.get(a.address)
            if rec is not None:
                for t in sorted(rec.types):
                    catalog[(n, t)] = self.market.sensor_data_length(a.address, t)
        costs: Counter = Counter()
        for r in self.ledger.receipts:
            if r.caller is not None and r.caller in names:
                costs[names[r.caller]] += r.cost_units
        failures = Counter(code for _, _, code in self.failures)
        purchases = {
            "requested": sum(len(cr.purchases) for cr in self.market.customers.values()),
            "delivered": sum(self.market.delivery_counts.values()),
            "verified": self.verified,
            "failed": self.mismatched + sum(1 for _, verb, _ in self.failures if verb == "buy"),
        }
        gaps = {}
        for n, a in self.actors.items():
            if a.role == "device":
                ts = self.push_times[n]
                gaps[n] = sorted({b - a_ for a_, b in zip(ts, ts[1:])})
        event_counts = Counter(e.kind for e in self.ledger.events)
        last_block = max((e.block for e in self.ledger.events), default=0)
        return assemble(
            header, last_block, names, roles, balances, votes, catalog, event_counts, costs, purchases, failures, gaps
        )

    def role_hygiene(self) -> dict[str, dict]:
        return {n: a.public_state() for n, a in self.actors.items()}


def run(scenario: Scenario, concurrent: bool = False) -> tuple[Report, Simulation]:
    sim = Simulation(scenario, concurrent=concurrent)
    report = sim.run()
    return report, sim
