"""Small fixtures shared by the marketplace, channel and acceptance tests."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from datamarket import crypto, geohex
from datamarket.blobstore import BlobStore
from datamarket.ledger import Ledger
from datamarket.marketplace import Marketplace
from datamarket.types import Address

TOKYO = (35.658, 139.7016)


@dataclass
class World:
    ledger: Ledger
    store: BlobStore
    market: Marketplace
    vendor: Address
    device: Address
    customer: Address
    buyer_keys: crypto.KeyPair
    master: crypto.MasterKey
    plaintexts: list[bytes] = field(default_factory=list)

    def push(self, data: bytes | None = None, sensor: int = 1, level: int = 7, scheme=crypto.EncryptionScheme.SCHEME_A) -> int:
        """Encrypt, store and publish one reading from the device; returns its catalog index."""
        data = os.urandom(64) if data is None else data
        index = self.market.sensor_data_length(self.vendor, sensor)
        key = crypto.derive_key(self.master, index, scheme)
        handle = self.store.put(crypto.encrypt(key, data))
        self.market.sensor_data_push(
            self.device, self.vendor, sensor, "json/v1", 1000 + index, geohex.encode(TOKYO, level), handle, index, scheme
        )
        self.plaintexts.append(data)
        return index

    def state(self):
        return self.market.snapshot(), self.ledger.snapshot(), self.ledger.events


def make_world(tokens: int = 1000, sensors=(1, 2), prices=(10, 25)) -> World:
    ledger = Ledger(seed=42)
    store = BlobStore()
    market = Marketplace(ledger, store)
    vendor, device, customer = (ledger.create_account() for _ in range(3))
    keys = crypto.generate_keypair(b"customer-seed-000000")
    market.vendor_register(vendor, "AcmeWear", list(sensors), list(prices))
    market.add_valid_device(vendor, device)
    market.customer_register(customer, keys.public_hex)
    ledger.mint(customer, native=tokens, tokens=tokens)
    ledger.tick()
    return World(ledger, store, market, vendor, device, customer, keys, crypto.MasterKey(b"\x11" * 32))
