"""Append-only event records and their line format.

One event per line::

    seq block kind caller cost <kind-specific values...>

Values are space separated.  Strings are double-quoted JSON strings, integer
lists are compact JSON arrays, byte strings and addresses are bare lowercase
hex, and ``-`` stands for "no caller" or an empty byte string.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Iterable, Iterator

from .errors import ParseError
from .types import Address

# field type tags: addr, int, str (quoted), word (bare, no whitespace), hex, ints
SCHEMAS: dict[str, tuple[tuple[str, str], ...]] = {
    # contract
    "VendorRegistered": (("vendor", "addr"), ("prefix", "str"), ("sensors", "ints"), ("costs", "ints")),
    "CustomerRegistered": (("customer", "addr"), ("pub_key", "str")),
    "DeviceAdded": (("vendor", "addr"), ("device", "addr")),
    "DataPushed": (
        ("vendor", "addr"),
        ("device", "addr"),
        ("sensor_type", "int"),
        ("index", "int"),
        ("handle", "word"),
        ("schema", "str"),
        ("timestamp", "int"),
        ("spatial", "str"),
        ("key_index", "int"),
        ("scheme", "word"),
    ),
    "DataRequested": (
        ("customer", "addr"),
        ("vendor", "addr"),
        ("sensor_type", "int"),
        ("index", "int"),
        ("price", "int"),
    ),
    "KeyTransferred": (
        ("vendor", "addr"),
        ("customer", "addr"),
        ("sensor_type", "int"),
        ("index", "int"),
        ("wrapped", "hex"),
    ),
    "VoteCast": (("customer", "addr"), ("vendor", "addr"), ("vote", "int"), ("tally", "int")),
    "PriceUpdated": (("vendor", "addr"), ("sensor_type", "int"), ("price", "int")),
    # ledger
    "Minted": (("account", "addr"), ("native", "int"), ("tokens", "int")),
    "Transferred": (("source", "addr"), ("target", "addr"), ("amount", "int"), ("kind", "word")),
    # channels
    "ChannelOpened": (
        ("channel", "int"),
        ("party_a", "addr"),
        ("party_b", "addr"),
        ("deposit_a", "int"),
        ("deposit_b", "int"),
    ),
    "ChannelClosing": (
        ("channel", "int"),
        ("nonce", "int"),
        ("balance_a", "int"),
        ("balance_b", "int"),
        ("deadline", "int"),
    ),
    "ChannelChallenged": (("channel", "int"), ("nonce", "int"), ("balance_a", "int"), ("balance_b", "int")),
    "ChannelSettled": (("channel", "int"), ("nonce", "int"), ("balance_a", "int"), ("balance_b", "int")),
    # simulator notes (never produced by the contract itself)
    "ScenarioStarted": (
        ("name", "str"),
        ("seed", "int"),
        ("block_interval_s", "int"),
        ("push_interval_s", "int"),
        ("payment", "word"),
        ("hash", "word"),
        ("base_tx_units", "int"),
        ("per_write_units", "int"),
        ("per_event_units", "int"),
    ),
    "ActorDeclared": (("name", "str"), ("role", "str"), ("address", "addr")),
    "StepFailed": (("op", "str"), ("error", "str")),
    "PayloadDecrypted": (
        ("customer", "addr"),
        ("vendor", "addr"),
        ("sensor_type", "int"),
        ("index", "int"),
        ("ok", "int"),
    ),
}

CONTRACT_KINDS = frozenset(
    {
        "VendorRegistered",
        "CustomerRegistered",
        "DeviceAdded",
        "DataPushed",
        "DataRequested",
        "KeyTransferred",
        "VoteCast",
        "PriceUpdated",
    }
)
NOTE_KINDS = frozenset({"ScenarioStarted", "ActorDeclared", "StepFailed", "PayloadDecrypted"})


@dataclass(frozen=True)
class Event:
    seq: int
    block: int
    kind: str
    caller: Address | None
    cost: int
    data: dict[str, Any]

    def __getitem__(self, name: str) -> Any:
        return self.data[name]

    def to_line(self) -> str:
        return format_event(self)


def _render(value: Any, tag: str) -> str:
    if tag == "addr":
        return value.hex
    if tag == "int":
        return str(int(value))
    if tag == "str":
        return json.dumps(value, ensure_ascii=True)
    if tag == "word":
        return value
    if tag == "hex":
        return bytes(value).hex() or "-"
    if tag == "ints":
        return json.dumps([int(v) for v in value], separators=(",", ":"))
    raise ValueError(f"unknown field tag {tag!r}")


def _parse(token: str, tag: str) -> Any:
    if tag == "addr":
        return Address.from_hex(token)
    if tag == "int":
        return int(token)
    if tag == "str":
        value = json.loads(token)
        if not isinstance(value, str):
            raise ValueError(f"expected quoted string, got {token!r}")
        return value
    if tag == "word":
        return token
    if tag == "hex":
        return b"" if token == "-" else bytes.fromhex(token)
    if tag == "ints":
        value = json.loads(token)
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ValueError(f"expected integer list, got {token!r}")
        return tuple(value)
    raise ValueError(f"unknown field tag {tag!r}")


def normalize(kind: str, fields: dict[str, Any]) -> dict[str, Any]:
    """Check ``fields`` against the schema of ``kind`` and return them in schema order."""
    try:
        schema = SCHEMAS[kind]
    except KeyError:
        raise ValueError(f"unknown event kind {kind!r}") from None
    names = [name for name, _ in schema]
    if set(fields) != set(names):
        raise ValueError(f"{kind} expects fields {names}, got {sorted(fields)}")
    out = {}
    for name, tag in schema:
        value = fields[name]
        if tag == "ints":
            value = tuple(int(v) for v in value)
        elif tag == "hex":
            value = bytes(value)
        elif tag == "word":
            value = str(value)
            if not value or any(ch.isspace() or ch == '"' for ch in value):
                raise ValueError(f"{kind}.{name} must be a single bare word, got {value!r}")
        out[name] = value
    return out


def format_event(event: Event) -> str:
    parts = [
        str(event.seq),
        str(event.block),
        event.kind,
        event.caller.hex if event.caller is not None else "-",
        str(event.cost),
    ]
    for name, tag in SCHEMAS[event.kind]:
        parts.append(_render(event.data[name], tag))
    return " ".join(parts)


_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"|\S+')


def parse_event(line: str) -> Event:
    tokens = _TOKEN.findall(line)
    if len(tokens) < 5:
        raise ValueError(f"truncated event line: {line!r}")
    seq, block, kind, caller, cost = tokens[:5]
    if kind not in SCHEMAS:
        raise ValueError(f"unknown event kind {kind!r}")
    schema = SCHEMAS[kind]
    values = tokens[5:]
    if len(values) != len(schema):
        raise ValueError(f"{kind} expects {len(schema)} values, got {len(values)}")
    data = {name: _parse(tok, tag) for (name, tag), tok in zip(schema, values)}
    return Event(
        seq=int(seq),
        block=int(block),
        kind=kind,
        caller=None if caller == "-" else Address.from_hex(caller),
        cost=int(cost),
        data=data,
    )


def dump_events(events: Iterable[Event]) -> str:
    return "".join(format_event(e) + "\n" for e in events)


def load_events(lines: Iterable[str]) -> Iterator[Event]:
    """Parse an exported log; malformed lines raise ParseError with their line number."""
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield parse_event(line)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ParseError(str(exc), lineno) from None
