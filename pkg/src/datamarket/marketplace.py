"""The data marketplace contract.

Vendors register sensor types and prices and whitelist their devices; devices
push metadata for encrypted blobs; customers browse, pay, receive a wrapped
key from the vendor and may then vote on the vendor once per granted right.

Every mutating method takes the calling address, runs as one ledger
transaction and, on success, emits exactly one event.  State changes are made
only by :meth:`Marketplace._apply`, which is also what :meth:`replay` feeds
the event log through, so the log alone rebuilds the contract state.
Views are free and never touch the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

from . import errors, geohex
from .blobstore import BlobStore
from .crypto import EncryptionScheme, parse_public_key
from .events import CONTRACT_KINDS, Event
from .ledger import Ledger, Transaction
from .types import Address, Kind

SMART_WATCH = 1
HOLTER_MONITOR = 2


@dataclass
class Payload:
    device_id: Address
    timestamp: int
    handle: str
    schema: str
    spatial: str
    key_index: int
    scheme: EncryptionScheme
    # latest delivered wrapped key; per-buyer keys live in Marketplace.deliveries
    encrypted_key: bytes = b""


@dataclass
class VendorRecord:
    prefix: str
    types: list[int] = field(default_factory=list)
    prices: dict[int, int] = field(default_factory=dict)
    payloads: dict[int, list[Payload]] = field(default_factory=dict)
    devices: set[Address] = field(default_factory=set)
    votes: int = 0


class Purchase(NamedTuple):
    vendor: Address
    sensor_type: int
    index: int


@dataclass
class CustomerRecord:
    pub_key: str
    purchases: list[Purchase] = field(default_factory=list)
    vote_rights: dict[Address, bool] = field(default_factory=dict)


def _vote_value(vote: Any) -> int:
    if vote in ("up", 1, True):
        return 1
    if vote in ("down", -1, 0, False):
        return -1
    raise ValueError(f"vote must be 'up' or 'down', got {vote!r}")


def _check_uint(name: str, value: Any) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise errors.InvalidAmount(f"{name} must be a non-negative integer, got {value!r}")
    return value


class Marketplace:
    def __init__(self, ledger: Ledger, store: BlobStore | None = None, payment_kind: Kind | str = Kind.TOKEN) -> None:
        self.ledger = ledger
        self.store = store
        self.payment_kind = Kind(payment_kind)
        self.vendors: dict[Address, VendorRecord] = {}
        self.vendor_arr: list[Address] = []
        self.customers: dict[Address, CustomerRecord] = {}
        # sensor type -> vendors supporting it, in registration order
        self.by_type: dict[int, list[Address]] = {}
        # (customer, vendor, sensor_type, index) -> wrapped key bytes of the latest delivery
        self.deliveries: dict[tuple[Address, Address, int, int], bytes] = {}
        self.delivery_counts: dict[tuple[Address, Address, int, int], int] = {}
        self.purchase_counts: dict[tuple[Address, Address, int, int], int] = {}

    # -- lookups ---------------------------------------------------------
    def _vendor(self, addr: Address) -> VendorRecord:
        try:
            return self.vendors[addr]
        except KeyError:
            raise errors.UnknownVendor(str(addr)) from None

    def _caller_vendor(self, caller: Address) -> VendorRecord:
        try:
            return self.vendors[caller]
        except KeyError:
            raise errors.NotAVendor(str(caller)) from None

    def _caller_customer(self, caller: Address) -> CustomerRecord:
        try:
            return self.customers[caller]
        except KeyError:
            raise errors.NotACustomer(str(caller)) from None

    @staticmethod
    def _payload_list(v: VendorRecord, sensor_type: int) -> list[Payload]:
        if sensor_type not in v.prices:
            raise errors.UnsupportedSensorType(f"sensor type {sensor_type} not offered")
        return v.payloads[sensor_type]

    def _payload(self, vendor: Address, sensor_type: int, index: int) -> Payload:
        items = self._payload_list(self._vendor(vendor), sensor_type)
        if not isinstance(index, int) or not 0 <= index < len(items):
            raise errors.IndexOutOfRange(f"payload {index} of type {sensor_type} (have {len(items)})")
        return items[index]

    # -- mutating operations ---------------------------------------------
    def vendor_register(self, caller: Address, prefix: str, sensors: list[int], costs: list[int]) -> Address:
        with self.ledger.transaction(caller, "vendor_register") as tx:
            if caller in self.vendors:
                raise errors.AlreadyRegistered(f"{caller} is already a vendor")
            sensors, costs = list(sensors), list(costs)
            if len(sensors) != len(costs):
                raise errors.LengthMismatch(f"{len(sensors)} sensors but {len(costs)} costs")
            if len(set(sensors)) != len(sensors) or any(
                not isinstance(s, int) or isinstance(s, bool) or s <= 0 for s in sensors
            ):
                raise errors.InvalidSensorType(f"sensor ids must be distinct positive integers: {sensors}")
            for c in costs:
                _check_uint("cost", c)
            tx.write(2 + 3 * len(sensors))
            self._commit(tx, "VendorRegistered", vendor=caller, prefix=str(prefix), sensors=sensors, costs=costs)
        return caller

    def customer_register(self, caller: Address, pub_key: str) -> Address:
        with self.ledger.transaction(caller, "customer_register") as tx:
            if caller in self.customers:
                raise errors.AlreadyRegistered(f"{caller} is already a customer")
            if not isinstance(pub_key, str):
                raise errors.MalformedPublicKey("public key must be a hex string")
            parse_public_key(pub_key)
            tx.write(2)
            self._commit(tx, "CustomerRegistered", customer=caller, pub_key=pub_key)
        return caller

    def add_valid_device(self, caller: Address, device: Address) -> Address:
        with self.ledger.transaction(caller, "add_valid_device") as tx:
            self._caller_vendor(caller)
            tx.write(1)
            self._commit(tx, "DeviceAdded", vendor=caller, device=device)
        return device

    def sensor_data_push(
        self,
        caller: Address,
        vendor: Address,
        sensor_type: int,
        schema: str,
        timestamp: int,
        spatial: str,
        handle: str,
        key_index: int,
        scheme: EncryptionScheme | int | str,
    ) -> Address:
        with self.ledger.transaction(caller, "sensor_data_push") as tx:
            v = self._vendor(vendor)
            if caller not in v.devices:
                raise errors.UnauthorizedDevice(f"{caller} is not whitelisted by {vendor}")
            items = self._payload_list(v, sensor_type)
            if not geohex.is_valid(spatial):
                raise errors.InvalidGeoCode(repr(spatial))
            if self.store is not None and not self.store.has(handle):
                raise errors.UnknownHandle(str(handle))
            _check_uint("timestamp", timestamp)
            _check_uint("key_index", key_index)
            scheme = EncryptionScheme.parse(scheme)
            tx.write(2)
            self._commit(
                tx,
                "DataPushed",
                vendor=vendor,
                device=caller,
                sensor_type=sensor_type,
                index=len(items),
                handle=str(handle).lower(),
                schema=str(schema),
                timestamp=timestamp,
                spatial=spatial,
                key_index=key_index,
                scheme=scheme.name,
            )
        return vendor

    def update_sensor_price(self, caller: Address, sensor_type: int, price: int) -> int:
        with self.ledger.transaction(caller, "update_sensor_price") as tx:
            v = self._caller_vendor(caller)
            self._payload_list(v, sensor_type)
            _check_uint("price", price)
            tx.write(1)
            self._commit(tx, "PriceUpdated", vendor=caller, sensor_type=sensor_type, price=price)
        return price

    def request_for_data(self, caller: Address, vendor: Address, sensor_type: int, index: int) -> Address:
        with self.ledger.transaction(caller, "request_for_data") as tx:
            self._caller_customer(caller)
            self._payload(vendor, sensor_type, index)
            price = self.vendors[vendor].prices[sensor_type]
            have = self.ledger.balance_of(caller)[0 if self.payment_kind is Kind.NATIVE else 1]
            if not self.ledger.exists(vendor):
                raise errors.UnknownAddress(str(vendor))
            if have < price:
                raise errors.InsufficientFunds(f"{caller} holds {have}, price is {price}")
            self.ledger._move(caller, vendor, price, self.payment_kind, tx)
            tx.write(2)
            self._commit(tx, "DataRequested", customer=caller, vendor=vendor, sensor_type=sensor_type, index=index, price=price)
        return vendor

    def transfer_key_and_data(self, caller: Address, wrapped: bytes, to: Address, sensor_type: int, index: int) -> str:
        with self.ledger.transaction(caller, "transfer_key_and_data") as tx:
            self._caller_vendor(caller)
            payload = self._payload(caller, sensor_type, index)
            key = (to, caller, sensor_type, index)
            bought = self.purchase_counts.get(key, 0)
            if bought == 0:
                raise errors.NoMatchingPurchase(f"{to} has not bought {sensor_type}/{index} from {caller}")
            if self.delivery_counts.get(key, 0) >= bought:
                raise errors.AlreadyDelivered(f"key for {sensor_type}/{index} already delivered to {to}")
            blob = getattr(wrapped, "ciphertext", wrapped)
            tx.write(2)
            self._commit(tx, "KeyTransferred", vendor=caller, customer=to, sensor_type=sensor_type, index=index, wrapped=blob)
        return payload.handle

    def vote_for_vendor(self, caller: Address, vendor: Address, vote: Any) -> int:
        value = _vote_value(vote)
        with self.ledger.transaction(caller, "vote_for_vendor") as tx:
            c = self._caller_customer(caller)
            v = self._vendor(vendor)
            if not c.vote_rights.get(vendor, False):
                raise errors.NoVoteRight(f"{caller} holds no vote right for {vendor}")
            tx.write(2)
            self._commit(tx, "VoteCast", customer=caller, vendor=vendor, vote=value, tally=v.votes + value)
        return self.vendors[vendor].votes

    def _commit(self, tx: Transaction, kind: str, **fields: Any) -> None:
        tx.emit(kind, **fields)
        self._apply(kind, tx.event[1])

    # -- state transitions -------------------------------------------------
    def _apply(self, kind: str, d: dict[str, Any]) -> None:
        if kind == "VendorRegistered":
            rec = VendorRecord(d["prefix"])
            for s, c in zip(d["sensors"], d["costs"]):
                rec.types.append(s)
                rec.prices[s] = c
                rec.payloads[s] = []
                self.by_type.setdefault(s, []).append(d["vendor"])
            self.vendors[d["vendor"]] = rec
            self.vendor_arr.append(d["vendor"])
        elif kind == "CustomerRegistered":
            self.customers[d["customer"]] = CustomerRecord(d["pub_key"])
        elif kind == "DeviceAdded":
            self.vendors[d["vendor"]].devices.add(d["device"])
        elif kind == "DataPushed":
            self.vendors[d["vendor"]].payloads[d["sensor_type"]].append(
                Payload(
                    device_id=d["device"],
                    timestamp=d["timestamp"],
                    handle=d["handle"],
                    schema=d["schema"],
                    spatial=d["spatial"],
                    key_index=d["key_index"],
                    scheme=EncryptionScheme[d["scheme"]],
                )
            )
        elif kind == "PriceUpdated":
            self.vendors[d["vendor"]].prices[d["sensor_type"]] = d["price"]
        elif kind == "DataRequested":
            c = self.customers[d["customer"]]
            c.purchases.append(Purchase(d["vendor"], d["sensor_type"], d["index"]))
            c.vote_rights[d["vendor"]] = True
            key = (d["customer"], d["vendor"], d["sensor_type"], d["index"])
            self.purchase_counts[key] = self.purchase_counts.get(key, 0) + 1
        elif kind == "KeyTransferred":
            key = (d["customer"], d["vendor"], d["sensor_type"], d["index"])
            self.deliveries[key] = d["wrapped"]
            self.delivery_counts[key] = self.delivery_counts.get(key, 0) + 1
            self.vendors[d["vendor"]].payloads[d["sensor_type"]][d["index"]].encrypted_key = d["wrapped"]
        elif kind == "VoteCast":
            self.vendors[d["vendor"]].votes = d["tally"]
            self.customers[d["customer"]].vote_rights[d["vendor"]] = False
        else:
            raise ValueError(f"not a contract event: {kind}")

    @classmethod
    def replay(cls, events: Iterable[Event], ledger: Ledger | None = None) -> Marketplace:
        """Rebuild contract state from an event log (non-contract records are skipped)."""
        m = cls(ledger if ledger is not None else Ledger())
        for ev in events:
            if ev.kind in CONTRACT_KINDS:
                m._apply(ev.kind, ev.data)
        return m

    # -- views -----------------------------------------------------------
    def vendor_length(self) -> int:
        return len(self.vendor_arr)

    def get_vendor(self, addr: Address) -> str:
        return self._vendor(addr).prefix

    def query_sensor(self, sensor_type: int, index: int) -> Address:
        vendors = self.by_type.get(sensor_type, [])
        if not isinstance(index, int) or not 0 <= index < len(vendors):
            raise errors.IndexOutOfRange(f"vendor {index} for sensor type {sensor_type} (have {len(vendors)})")
        return vendors[index]

    def query_sensor_count(self, sensor_type: int) -> int:
        return len(self.by_type.get(sensor_type, []))

    def sensor_data_pull(self, vendor: Address, sensor_type: int, index: int) -> tuple[str, int, str, int]:
        p = self._payload(vendor, sensor_type, index)
        return p.schema, p.timestamp, p.spatial, self.vendors[vendor].prices[sensor_type]

    def sensor_data_length(self, vendor: Address, sensor_type: int) -> int:
        return len(self._payload_list(self._vendor(vendor), sensor_type))

    def get_sensor_price(self, vendor: Address, sensor_type: int) -> int:
        v = self._vendor(vendor)
        self._payload_list(v, sensor_type)
        return v.prices[sensor_type]

    def get_customer_pub_key(self, customer: Address) -> str:
        try:
            return self.customers[customer].pub_key
        except KeyError:
            raise errors.NotACustomer(str(customer)) from None

    def delivered_key(self, customer: Address, vendor: Address, sensor_type: int, index: int) -> bytes | None:
        return self.deliveries.get((customer, vendor, sensor_type, index))

    def poll_events(self, since_seq: int = 0) -> list[Event]:
        return [e for e in self.ledger.poll_events(since_seq) if e.kind in CONTRACT_KINDS]

    def snapshot(self) -> dict[str, Any]:
        """Plain-data copy of the whole contract state, for equality checks."""
        return {
            "vendor_arr": [a.hex for a in self.vendor_arr],
            "vendors": {
                a.hex: {
                    "prefix": v.prefix,
                    "types": list(v.types),
                    "prices": dict(v.prices),
                    "payloads": {
                        t: [
                            (p.device_id.hex, p.timestamp, p.handle, p.schema, p.spatial, p.key_index, p.scheme.name, p.encrypted_key.hex())
                            for p in items
                        ]
                        for t, items in v.payloads.items()
                    },
                    "devices": sorted(d.hex for d in v.devices),
                    "votes": v.votes,
                }
                for a, v in self.vendors.items()
            },
            "customers": {
                a.hex: {
                    "pub_key": c.pub_key,
                    "purchases": [(p.vendor.hex, p.sensor_type, p.index) for p in c.purchases],
                    "vote_rights": {v.hex: r for v, r in c.vote_rights.items()},
                }
                for a, c in self.customers.items()
            },
            "by_type": {t: [a.hex for a in vs] for t, vs in self.by_type.items()},
            "deliveries": {
                f"{c.hex}:{v.hex}:{t}:{i}": w.hex() for (c, v, t, i), w in self.deliveries.items()
            },
        }
