"""Small value types used across modules."""

from __future__ import annotations

import enum
from dataclasses import dataclass

ADDRESS_BYTES = 20


@dataclass(frozen=True, order=True)
class Address:
    """Opaque 20-byte account identifier."""

    raw: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.raw, bytes) or len(self.raw) != ADDRESS_BYTES:
            raise ValueError(f"address must be {ADDRESS_BYTES} bytes")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> Address:
        if len(text) != 2 * ADDRESS_BYTES:
            raise ValueError(f"address must be {2 * ADDRESS_BYTES} hex characters: {text!r}")
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex[:10]}...)"


class Kind(str, enum.Enum):
    """Which balance a ledger amount refers to."""

    NATIVE = "native"
    TOKEN = "token"
