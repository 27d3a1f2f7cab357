"""Exception hierarchy shared by every module.

Every failure a caller can provoke is a subclass of :class:`MarketError`, so the
simulator can record it as data and keep running.  The class name doubles as
the error code written to logs and reports.
"""

from __future__ import annotations


class MarketError(Exception):
    """Base class for all named failures."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ledger
class UnknownAddress(MarketError):
    pass


class InsufficientFunds(MarketError):
    pass


class InvalidAmount(MarketError):
    pass


# geohex
class LevelOutOfRange(MarketError):
    pass


class PointOutOfBounds(MarketError):
    pass


class MalformedCode(MarketError):
    pass


class LevelOrderViolation(MarketError):
    pass


# crypto
class UnsupportedScheme(MarketError):
    pass


class AuthenticationFailure(MarketError):
    pass


class SeedTooShort(MarketError):
    pass


class MalformedPublicKey(MarketError):
    pass


class MalformedKey(MarketError):
    pass


class UnwrapFailure(MarketError):
    pass


# blobstore
class BlobTooLarge(MarketError):
    pass


class NotFound(MarketError):
    pass


# marketplace
class AlreadyRegistered(MarketError):
    pass


class LengthMismatch(MarketError):
    pass


class InvalidSensorType(MarketError):
    pass


class NotAVendor(MarketError):
    pass


class NotACustomer(MarketError):
    pass


class UnknownVendor(MarketError):
    pass


class UnauthorizedDevice(MarketError):
    pass


class UnsupportedSensorType(MarketError):
    pass


class InvalidGeoCode(MarketError):
    pass


class UnknownHandle(MarketError):
    pass


class IndexOutOfRange(MarketError):
    pass


class NoMatchingPurchase(MarketError):
    pass


class AlreadyDelivered(MarketError):
    pass


class NoVoteRight(MarketError):
    pass


# channels
class ChannelNotOpen(MarketError):
    pass


class ChannelNotClosing(MarketError):
    pass


class InsufficientChannelBalance(MarketError):
    pass


class BadSignature(MarketError):
    pass


class StaleNonce(MarketError):
    pass


class NotAParty(MarketError):
    pass


class DeadlinePassed(MarketError):
    pass


class NotNewer(MarketError):
    pass


class TooEarly(MarketError):
    pass


class AlreadySettled(MarketError):
    pass


class UnknownChannel(MarketError):
    pass


# sim
class ParseError(MarketError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(MarketError):
    pass


class RunFinished(MarketError):
    pass
