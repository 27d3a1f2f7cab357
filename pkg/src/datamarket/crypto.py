"""Key derivation, payload encryption, key wrapping and signatures.

* Per-upload symmetric keys come from a device master key and an integer
  index: ``HMAC-SHA256(master, index as 8 big-endian bytes)``.
* Payloads are sealed with an AEAD; the nonce is prepended to the output.
* Symmetric keys are wrapped for a buyer with X25519 + HKDF + ChaCha20-Poly1305.
* Channel states are signed with Ed25519.

Keypairs are derived from a seed so whole simulations are reproducible.  A
:class:`KeyPair` carries both an X25519 key (wrapping) and an Ed25519 key
(signing); its public half is the 64-byte concatenation, hex-encoded when it
is stored in the marketplace.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import os
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (
    AuthenticationFailure,
    MalformedKey,
    MalformedPublicKey,
    SeedTooShort,
    UnsupportedScheme,
    UnwrapFailure,
)
from .types import Address

KEY_BYTES = 32
NONCE_BYTES = 12
TAG_BYTES = 16
PUBLIC_KEY_BYTES = 64
MIN_SEED_BYTES = 16
WRAPPED_KEY_BYTES = 32 + NONCE_BYTES + KEY_BYTES + TAG_BYTES

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_WRAP_INFO = b"datamarket/key-wrap/v1"


class EncryptionScheme(enum.Enum):
    """Stable scheme ids; the value is what goes on the wire."""

    SCHEME_A = 1  # ChaCha20-Poly1305
    SCHEME_B = 2  # AES-256-GCM

    @classmethod
    def parse(cls, value: EncryptionScheme | int | str) -> EncryptionScheme:
        if isinstance(value, cls):
            return value
        try:
            if isinstance(value, str) and not value.isdigit():
                return cls[value]
            return cls(int(value))
        except (KeyError, ValueError):
            raise UnsupportedScheme(f"unknown encryption scheme {value!r}") from None


@dataclass(frozen=True, repr=False)
class MasterKey:
    secret: bytes

    def __post_init__(self) -> None:
        if len(self.secret) != KEY_BYTES:
            raise MalformedKey(f"master key must be {KEY_BYTES} bytes")

    @classmethod
    def generate(cls, rng_bytes: bytes | None = None) -> MasterKey:
        return cls(rng_bytes if rng_bytes is not None else os.urandom(KEY_BYTES))

    def __repr__(self) -> str:
        return "MasterKey(<secret>)"


@dataclass(frozen=True, repr=False)
class SymKey:
    key: bytes
    index: int
    scheme: EncryptionScheme = EncryptionScheme.SCHEME_A

    def __repr__(self) -> str:
        return f"SymKey(index={self.index}, scheme={self.scheme.name})"


@dataclass(frozen=True, repr=False)
class KeyPair:
    public: bytes
    private: bytes = field(repr=False)

    @property
    def public_hex(self) -> str:
        return self.public.hex()

    def __repr__(self) -> str:
        return f"KeyPair(public={self.public.hex()[:16]}...)"


@dataclass(frozen=True)
class WrappedKey:
    ciphertext: bytes
    recipient: Address | None = None


def keyed_hash(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()


def derive_key(master: MasterKey, index: int, scheme: EncryptionScheme | int | str = EncryptionScheme.SCHEME_A) -> SymKey:
    if not isinstance(index, int) or index < 0:
        raise ValueError(f"key index must be a non-negative integer, got {index!r}")
    return SymKey(keyed_hash(master.secret, struct.pack(">Q", index)), index, EncryptionScheme.parse(scheme))


def _aead(scheme: EncryptionScheme, key: bytes):
    if scheme is EncryptionScheme.SCHEME_A:
        return ChaCha20Poly1305(key)
    if scheme is EncryptionScheme.SCHEME_B:
        return AESGCM(key)
    raise UnsupportedScheme(str(scheme))


def encrypt(k: SymKey, plaintext: bytes, nonce: bytes | None = None) -> bytes:
    """Seal ``plaintext``; output is ``nonce || ciphertext || tag``.

    Pass ``nonce`` only for reproducible runs, and never reuse one under a key.
    """
    scheme = EncryptionScheme.parse(k.scheme)
    if nonce is None:
        nonce = os.urandom(NONCE_BYTES)
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    return nonce + _aead(scheme, k.key).encrypt(nonce, bytes(plaintext), None)


def decrypt(k: SymKey, ciphertext: bytes) -> bytes:
    scheme = EncryptionScheme.parse(k.scheme)
    if len(ciphertext) < NONCE_BYTES + TAG_BYTES:
        raise AuthenticationFailure("ciphertext too short")
    nonce, body = ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:]
    try:
        return _aead(scheme, k.key).decrypt(nonce, body, None)
    except InvalidTag:
        raise AuthenticationFailure("ciphertext failed authentication") from None


def _x25519_private(private: bytes) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(keyed_hash(private, b"x25519"))


def _ed25519_private(private: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(keyed_hash(private, b"ed25519"))


def generate_keypair(seed: bytes) -> KeyPair:
    if len(seed) < MIN_SEED_BYTES:
        raise SeedTooShort(f"seed must be at least {MIN_SEED_BYTES} bytes, got {len(seed)}")
    private = hashlib.sha256(b"keypair" + bytes(seed)).digest()
    x_pub = _x25519_private(private).public_key().public_bytes(_RAW, _RAW_PUB)
    e_pub = _ed25519_private(private).public_key().public_bytes(_RAW, _RAW_PUB)
    return KeyPair(x_pub + e_pub, private)


def parse_public_key(pub: bytes | str) -> bytes:
    """Accept raw bytes or the lowercase-hex string form; return raw bytes."""
    if isinstance(pub, str):
        if len(pub) != 2 * PUBLIC_KEY_BYTES or pub != pub.lower():
            raise MalformedPublicKey(f"public key must be {2 * PUBLIC_KEY_BYTES} lowercase hex characters")
        try:
            pub = bytes.fromhex(pub)
        except ValueError:
            raise MalformedPublicKey("public key is not valid hex") from None
    if len(pub) != PUBLIC_KEY_BYTES:
        raise MalformedPublicKey(f"public key must be {PUBLIC_KEY_BYTES} bytes")
    try:
        X25519PublicKey.from_public_bytes(pub[:32])
        Ed25519PublicKey.from_public_bytes(pub[32:])
    except ValueError:
        raise MalformedPublicKey("public key bytes are not valid curve points") from None
    return bytes(pub)


def _wrap_cipher(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> ChaCha20Poly1305:
    kek = HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=eph_pub + recipient_pub, info=_WRAP_INFO).derive(
        shared
    )
    return ChaCha20Poly1305(kek)


def wrap_key(
    pub: bytes | str,
    k: SymKey | bytes,
    recipient: Address | None = None,
    ephemeral: bytes | None = None,
) -> WrappedKey:
    """Encrypt a 32-byte symmetric key so only the holder of ``pub``'s private half can read it.

    ``ephemeral`` (32 bytes) fixes the sender's one-time key for reproducible runs.
    """
    raw_pub = parse_public_key(pub)
    key_bytes = k.key if isinstance(k, SymKey) else bytes(k)
    if len(key_bytes) != KEY_BYTES:
        raise MalformedKey(f"wrapped keys must be {KEY_BYTES} bytes")
    eph = X25519PrivateKey.from_private_bytes(ephemeral) if ephemeral is not None else X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    x_pub = raw_pub[:32]
    shared = eph.exchange(X25519PublicKey.from_public_bytes(x_pub))
    # the nonce is fixed: every wrap uses a fresh key-encryption key
    nonce = bytes(NONCE_BYTES)
    body = _wrap_cipher(shared, eph_pub, x_pub).encrypt(nonce, key_bytes, None)
    return WrappedKey(eph_pub + nonce + body, recipient)


def unwrap_key(private: bytes, w: WrappedKey | bytes) -> bytes:
    blob = w.ciphertext if isinstance(w, WrappedKey) else bytes(w)
    if len(blob) != WRAPPED_KEY_BYTES:
        raise UnwrapFailure(f"wrapped key must be {WRAPPED_KEY_BYTES} bytes, got {len(blob)}")
    eph_pub, nonce, body = blob[:32], blob[32 : 32 + NONCE_BYTES], blob[32 + NONCE_BYTES :]
    me = _x25519_private(private)
    x_pub = me.public_key().public_bytes(_RAW, _RAW_PUB)
    try:
        shared = me.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        return _wrap_cipher(shared, eph_pub, x_pub).decrypt(nonce, body, None)
    except (InvalidTag, ValueError):
        raise UnwrapFailure("wrapped key does not open with this private key") from None


def sign(private: bytes, message: bytes) -> bytes:
    if not isinstance(private, (bytes, bytearray)) or len(private) != KEY_BYTES:
        raise MalformedKey("private key must be 32 bytes")
    return _ed25519_private(bytes(private)).sign(bytes(message))


def verify(pub: bytes | str, message: bytes, signature: bytes) -> bool:
    try:
        raw = parse_public_key(pub)
    except MalformedPublicKey as exc:
        raise MalformedKey(str(exc)) from None
    try:
        Ed25519PublicKey.from_public_bytes(raw[32:]).verify(bytes(signature), bytes(message))
    except InvalidSignature:
        return False
    return True
