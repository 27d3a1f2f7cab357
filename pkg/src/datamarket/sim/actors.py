"""Simulated participants.

Devices own a master key and encrypt each upload with the next derived key.
Vendors watch for purchase events and answer them with a wrapped key.
Customers own a keypair, unwrap delivered keys and decrypt what they bought.

Each actor draws from its own seeded RNG, so the order in which actors run
between blocks never changes what they produce.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .. import crypto, geohex
from ..blobstore import BlobStore
from ..errors import MarketError
from ..events import Event
from ..marketplace import Marketplace
from ..types import Address
from .scenario import ActorSpec


def actor_rng(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


@dataclass
class Device:
    spec: ActorSpec
    address: Address
    vendor: Address
    master: crypto.MasterKey
    rng: random.Random
    next_index: int = 0
    role: str = "device"

    @property
    def name(self) -> str:
        return self.spec.name

    def produce(self, size: int, lat: float, lon: float, level: int) -> tuple[bytes, bytes, str, int]:
        """Generate a reading and seal it; returns (plaintext, ciphertext, geocode, key index)."""
        plaintext = self.rng.randbytes(size)
        index = self.next_index
        self.next_index += 1
        key = crypto.derive_key(self.master, index, self.spec.scheme)
        ciphertext = crypto.encrypt(key, plaintext, nonce=self.rng.randbytes(crypto.NONCE_BYTES))
        return plaintext, ciphertext, geohex.encode((lat, lon), level), index

    def key_for(self, index: int) -> crypto.SymKey:
        return crypto.derive_key(self.master, index, self.spec.scheme)

    def public_state(self) -> dict:
        return {"role": self.role, "name": self.name, "address": self.address.hex, "master": self.master.secret.hex()}


@dataclass
class Delivery:
    """A wrapped key ready to submit."""

    customer: Address
    sensor_type: int
    index: int
    wrapped: crypto.WrappedKey


@dataclass
class Vendor:
    spec: ActorSpec
    address: Address
    keys: crypto.KeyPair
    rng: random.Random
    # asks the owning device for a derived key; the vendor never copies masters
    key_service: Callable[[Address, int], crypto.SymKey] | None = None
    cursor: int = 0
    role: str = "vendor"

    @property
    def name(self) -> str:
        return self.spec.name

    def decide(self, market: Marketplace, events: list[Event]) -> list[Delivery]:
        out = []
        for ev in events:
            if ev.kind != "DataRequested" or ev["vendor"] != self.address:
                continue
            payload = market.vendors[self.address].payloads[ev["sensor_type"]][ev["index"]]
            key = self.key_service(payload.device_id, payload.key_index)
            pub = market.get_customer_pub_key(ev["customer"])
            eph = self.rng.randbytes(32)
            wrapped = crypto.wrap_key(pub, key, recipient=ev["customer"], ephemeral=eph)
            out.append(Delivery(ev["customer"], ev["sensor_type"], ev["index"], wrapped))
        return out

    def public_state(self) -> dict:
        return {
            "role": self.role,
            "name": self.name,
            "address": self.address.hex,
            "public_key": self.keys.public_hex,
            # channel-state signing only; vendors never decrypt payloads
            "signing_key": self.keys.private.hex(),
        }


@dataclass
class Decryption:
    vendor: Address
    sensor_type: int
    index: int
    plaintext: bytes | None
    error: str = ""


@dataclass
class Customer:
    spec: ActorSpec
    address: Address
    keys: crypto.KeyPair
    rng: random.Random
    cursor: int = 0
    # (vendor, sensor_type, index) -> (handle, key_index, scheme), learned from DataPushed
    catalog: dict = field(default_factory=dict)
    received: dict = field(default_factory=dict)
    role: str = "customer"

    @property
    def name(self) -> str:
        return self.spec.name

    def decide(self, store: BlobStore, events: list[Event]) -> list[Decryption]:
        out = []
        for ev in events:
            if ev.kind == "DataPushed":
                self.catalog[(ev["vendor"], ev["sensor_type"], ev["index"])] = (
                    ev["handle"],
                    ev["key_index"],
                    ev["scheme"],
                )
            elif ev.kind == "KeyTransferred" and ev["customer"] == self.address:
                ref = (ev["vendor"], ev["sensor_type"], ev["index"])
                try:
                    handle, key_index, scheme = self.catalog[ref]
                    raw = crypto.unwrap_key(self.keys.private, ev["wrapped"])
                    key = crypto.SymKey(raw, key_index, crypto.EncryptionScheme[scheme])
                    plaintext = crypto.decrypt(key, store.get(handle))
                except MarketError as exc:
                    out.append(Decryption(*ref, None, exc.code))
                    continue
                except KeyError:
                    out.append(Decryption(*ref, None, "UnknownPayload"))
                    continue
                self.received[ref] = plaintext
                out.append(Decryption(*ref, plaintext))
        return out

    def public_state(self) -> dict:
        return {
            "role": self.role,
            "name": self.name,
            "address": self.address.hex,
            "public_key": self.keys.public_hex,
            "private_key": self.keys.private.hex(),
        }
