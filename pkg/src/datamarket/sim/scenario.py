"""Scenario files.

A scenario is plain text, one entry per line; ``#`` starts a comment.
Header directives::

    scenario <name>
    seed <int>
    block_interval <seconds>          # default 14
    push_interval <seconds>           # default 1800
    dispute_window <blocks>           # default 10
    payment token|native              # currency used by purchases
    cost base=<n> write=<n> event=<n>

Actor definitions::

    vendor <name> prefix=<str> sensors=<type>:<price>[,<type>:<price>...] [tokens=<n>] [native=<n>]
    device <name> vendor=<vendor> sensor=<type> [scheme=SCHEME_A|SCHEME_B]
           [lat=<deg> lon=<deg> level=<0..15>] [schema=<str>] [size=<bytes>] [first_key=<index>]
    customer <name> [tokens=<n>] [native=<n>]

Steps, each scheduled at a block height::

    @<block> register <vendor|customer>
    @<block> whitelist <vendor> device=<device>
    @<block> push <device> [count=<n>] [size=<bytes>] [lat= lon= level=]
    @<block> query <customer> sensor=<type>
    @<block> pull <customer> vendor=<vendor> sensor=<type> index=<i>
    @<block> buy <customer> vendor=<vendor> sensor=<type> index=<i>
    @<block> vote <customer> vendor=<vendor> value=up|down
    @<block> price <vendor> sensor=<type> price=<n>
    @<block> transfer <actor> to=<actor> amount=<n> [kind=token|native]
    @<block> channel_open <actor> peer=<actor> name=<channel> deposit=<n> [peer_deposit=<n>]
    @<block> channel_pay <actor> channel=<channel> amount=<n>
    @<block> channel_close <actor> channel=<channel> [nonce=<n>]
    @<block> channel_challenge <actor> channel=<channel>
    @<block> channel_settle <actor> channel=<channel>

Values may be double-quoted.  ``push ... count=n`` expands into ``n`` pushes
spaced ``push_interval`` seconds apart on the device's own clock.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .. import geohex
from ..crypto import EncryptionScheme
from ..errors import MarketError, ParseError, UnsupportedScheme, ValidationError
from ..ledger import CostSchedule, DEFAULT_BLOCK_INTERVAL_S

DEFAULT_PUSH_INTERVAL_S = 1800
DEFAULT_PAYLOAD_BYTES = 256

ROLES = ("vendor", "device", "customer")
VERBS = {
    "register": ("actor",),
    "whitelist": ("device",),
    "push": (),
    "query": ("sensor",),
    "pull": ("vendor", "sensor", "index"),
    "buy": ("vendor", "sensor", "index"),
    "vote": ("vendor", "value"),
    "price": ("sensor", "price"),
    "transfer": ("to", "amount"),
    "channel_open": ("peer", "name", "deposit"),
    "channel_pay": ("channel", "amount"),
    "channel_close": ("channel",),
    "channel_challenge": ("channel",),
    "channel_settle": ("channel",),
}
# which role may appear as the step's subject
SUBJECT_ROLE = {
    "whitelist": ("vendor",),
    "push": ("device",),
    "query": ("customer",),
    "pull": ("customer",),
    "buy": ("customer",),
    "vote": ("customer",),
    "price": ("vendor",),
    "register": ("vendor", "customer"),
    "transfer": ("vendor", "customer", "device"),
    "channel_open": ("vendor", "customer"),
    "channel_pay": ("vendor", "customer"),
    "channel_close": ("vendor", "customer"),
    "channel_challenge": ("vendor", "customer"),
    "channel_settle": ("vendor", "customer"),
}
INT_ARGS = {"sensor", "index", "price", "amount", "deposit", "peer_deposit", "count", "size", "level", "nonce", "first_key"}
FLOAT_ARGS = {"lat", "lon"}


@dataclass
class ActorSpec:
    name: str
    role: str
    line: int
    prefix: str = ""
    sensors: list[tuple[int, int]] = field(default_factory=list)
    vendor: str = ""
    sensor: int = 0
    scheme: EncryptionScheme = EncryptionScheme.SCHEME_A
    lat: float = 35.6580
    lon: float = 139.7016
    level: int = 7
    schema: str = "json/v1"
    size: int = DEFAULT_PAYLOAD_BYTES
    # key index of the device's first upload
    first_key: int = 0
    tokens: int = 0
    native: int = 0


@dataclass(frozen=True)
class Step:
    block: int
    verb: str
    actor: str
    args: dict
    line: int
    # seconds past the step's nominal time, for expanded push series
    offset_s: int = 0


@dataclass
class Scenario:
    name: str = "unnamed"
    seed: int = 0
    block_interval_s: int = DEFAULT_BLOCK_INTERVAL_S
    push_interval_s: int = DEFAULT_PUSH_INTERVAL_S
    dispute_window: int = 10
    payment: str = "token"
    costs: CostSchedule = field(default_factory=CostSchedule)
    actors: dict[str, ActorSpec] = field(default_factory=dict)
    # as written in the file; ``steps`` is the expanded, block-sorted schedule
    source_steps: list[Step] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)

    def with_overrides(self, seed: int | None = None, block_interval_s: int | None = None) -> Scenario:
        s = replace(self, actors=dict(self.actors), source_steps=list(self.source_steps))
        if seed is not None:
            s.seed = seed
        if block_interval_s is not None:
            if block_interval_s <= 0:
                raise ValidationError("block interval must be positive")
            s.block_interval_s = block_interval_s
        s.steps = expand_steps(s)
        return s

    def by_role(self, role: str) -> list[ActorSpec]:
        return [a for a in self.actors.values() if a.role == role]


def _int(text: str, line: int, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", line, name) from None


def _float(text: str, line: int, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"expected a number, got {text!r}", line, name) from None


def _kv(tokens: list[str], line: int) -> tuple[dict, list[str]]:
    args: dict = {}
    bare: list[str] = []
    for tok in tokens:
        if "=" in tok:
            k, v = tok.split("=", 1)
            if not k:
                raise ParseError(f"empty key in {tok!r}", line)
            if k in args:
                raise ParseError("duplicate key", line, k)
            if k in INT_ARGS:
                args[k] = _int(v, line, k)
            elif k in FLOAT_ARGS:
                args[k] = _float(v, line, k)
            else:
                args[k] = v
        else:
            bare.append(tok)
    return args, bare


def _sensors(text: str, line: int) -> list[tuple[int, int]]:
    out = []
    for part in filter(None, text.split(",")):
        if ":" not in part:
            raise ParseError(f"expected <type>:<price>, got {part!r}", line, "sensors")
        t, p = part.split(":", 1)
        out.append((_int(t, line, "sensors"), _int(p, line, "sensors")))
    return out


def _scheme(text: str, line: int) -> EncryptionScheme:
    try:
        return EncryptionScheme.parse(text)
    except UnsupportedScheme:
        raise ParseError(f"unknown encryption scheme {text!r}", line, "scheme") from None


def _actor(role: str, name: str, args: dict, line: int) -> ActorSpec:
    allowed = {
        "vendor": {"prefix", "sensors", "tokens", "native"},
        "device": {"vendor", "sensor", "scheme", "lat", "lon", "level", "schema", "size", "first_key", "tokens", "native"},
        "customer": {"tokens", "native"},
    }[role]
    for k in args:
        if k not in allowed:
            raise ParseError(f"{role} does not take {k!r}", line, k)
    spec = ActorSpec(name=name, role=role, line=line)
    for k in ("tokens", "native"):
        if k in args:
            spec.__setattr__(k, _int(args[k], line, k))
    if role == "vendor":
        spec.prefix = args.get("prefix", name)
        spec.sensors = _sensors(args.get("sensors", ""), line)
    elif role == "device":
        if "vendor" not in args or "sensor" not in args:
            raise ParseError("device needs vendor= and sensor=", line, "vendor" if "vendor" not in args else "sensor")
        spec.vendor = args["vendor"]
        spec.sensor = args["sensor"]
        if "scheme" in args:
            spec.scheme = _scheme(args["scheme"], line)
        for k in ("lat", "lon", "level", "schema", "size", "first_key"):
            if k in args:
                setattr(spec, k, args[k])
    return spec


def parse_scenario(text: str, name: str = "unnamed") -> Scenario:
    """Parse and validate scenario text.  Raises ParseError / ValidationError."""
    s = Scenario(name=name)
    costs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not tokens:
            continue
        head, rest = tokens[0], tokens[1:]
        if head.startswith("@"):
            block = _int(head[1:], lineno, "block")
            if block < 0:
                raise ParseError("block must be non-negative", lineno, "block")
            if len(rest) < 2:
                raise ParseError("step needs a verb and an actor", lineno)
            verb, actor = rest[0], rest[1]
            if verb not in VERBS:
                raise ParseError(f"unknown verb {verb!r}", lineno, "verb")
            args, bare = _kv(rest[2:], lineno)
            if verb == "vote" and bare and "value" not in args:
                args["value"] = bare.pop(0)
            if bare:
                raise ParseError(f"unexpected bare words {bare}", lineno)
            for req in VERBS[verb]:
                if req != "actor" and req not in args:
                    raise ParseError(f"{verb} needs {req}=", lineno, req)
            if verb == "vote" and args["value"] not in ("up", "down"):
                raise ParseError("vote value must be up or down", lineno, "value")
            s.source_steps.append(Step(block, verb, actor, args, lineno))
            continue
        if head in ROLES:
            if not rest:
                raise ParseError(f"{head} needs a name", lineno, "name")
            actor_name = rest[0]
            if actor_name in s.actors:
                raise ParseError(f"actor {actor_name!r} defined twice", lineno, "name")
            args, bare = _kv(rest[1:], lineno)
            if bare:
                raise ParseError(f"unexpected bare words {bare}", lineno)
            s.actors[actor_name] = _actor(head, actor_name, args, lineno)
            continue
        if head == "scenario":
            if len(rest) != 1:
                raise ParseError("scenario takes one name", lineno, "scenario")
            s.name = rest[0]
        elif head in ("seed", "block_interval", "push_interval", "dispute_window"):
            if len(rest) != 1:
                raise ParseError(f"{head} takes one integer", lineno, head)
            value = _int(rest[0], lineno, head)
            attr = {"block_interval": "block_interval_s", "push_interval": "push_interval_s"}.get(head, head)
            if head != "seed" and value <= 0:
                raise ParseError(f"{head} must be positive", lineno, head)
            setattr(s, attr, value)
        elif head == "payment":
            if rest not in (["token"], ["native"]):
                raise ParseError("payment must be token or native", lineno, "payment")
            s.payment = rest[0]
        elif head == "cost":
            args, bare = _kv(rest, lineno)
            if bare or not set(args) <= {"base", "write", "event"}:
                raise ParseError("cost takes base=, write=, event=", lineno, "cost")
            for k, v in args.items():
                costs[k] = _int(v, lineno, k)
        else:
            raise ParseError(f"unknown directive {head!r}", lineno, head)
    if costs:
        try:
            s.costs = CostSchedule(
                base_tx_units=costs.get("base", CostSchedule.base_tx_units),
                per_write_units=costs.get("write", CostSchedule.per_write_units),
                per_event_units=costs.get("event", CostSchedule.per_event_units),
            )
        except ValueError as exc:
            raise ParseError(str(exc), None, "cost") from None
    validate(s)
    s.steps = expand_steps(s)
    return s


def validate(s: Scenario) -> None:
    for a in s.actors.values():
        if a.role == "device":
            owner = s.actors.get(a.vendor)
            if owner is None or owner.role != "vendor":
                raise ValidationError(f"device {a.name!r} (line {a.line}) names undefined vendor {a.vendor!r}")
            try:
                geohex.encode((a.lat, a.lon), a.level)
            except MarketError as exc:
                raise ValidationError(f"device {a.name!r} (line {a.line}) has a bad location: {exc}") from None
            if a.size < 0 or a.first_key < 0:
                raise ValidationError(f"device {a.name!r} (line {a.line}) needs non-negative size and first_key")
    for st in s.source_steps:
        where = f"step '{st.verb} {st.actor}' (line {st.line})"
        subject = s.actors.get(st.actor)
        if subject is None:
            raise ValidationError(f"{where} references undefined actor {st.actor!r}")
        if subject.role not in SUBJECT_ROLE[st.verb]:
            raise ValidationError(f"{where}: a {subject.role} cannot {st.verb}")
        for key, role in (("vendor", "vendor"), ("device", "device"), ("to", None), ("peer", None)):
            if key in st.args:
                ref = s.actors.get(st.args[key])
                if ref is None:
                    raise ValidationError(f"{where} references undefined actor {st.args[key]!r}")
                if role is not None and ref.role != role:
                    raise ValidationError(f"{where}: {st.args[key]!r} is not a {role}")
        if "lat" in st.args or "lon" in st.args or "level" in st.args:
            try:
                geohex.encode(
                    (st.args.get("lat", subject.lat), st.args.get("lon", subject.lon)),
                    st.args.get("level", subject.level),
                )
            except MarketError as exc:
                raise ValidationError(f"{where} has a bad location: {exc}") from None
        if st.args.get("count", 1) < 1:
            raise ValidationError(f"{where}: count must be at least 1")
    channels = {st.args["name"] for st in s.source_steps if st.verb == "channel_open"}
    for st in s.source_steps:
        if "channel" in st.args and st.args["channel"] not in channels:
            raise ValidationError(f"step '{st.verb} {st.actor}' (line {st.line}) uses unknown channel {st.args['channel']!r}")


def expand_steps(s: Scenario) -> list[Step]:
    """Expand push series and sort stably by block."""
    out: list[Step] = []
    for st in s.source_steps:
        if st.verb == "push" and "count" in st.args:
            args = {k: v for k, v in st.args.items() if k != "count"}
            for i in range(st.args["count"]):
                offset = i * s.push_interval_s
                out.append(Step(st.block + offset // s.block_interval_s, "push", st.actor, args, st.line, offset))
        else:
            out.append(st)
    out.sort(key=lambda st: st.block)
    return out


def bundled_scenarios() -> list[str]:
    root = resources.files("datamarket") / "scenarios"
    return sorted(p.name[: -len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def resolve(path: str | Path) -> tuple[str, str]:
    """Return (text, default name) for a file path or a bundled scenario name."""
    p = Path(path)
    if p.is_file():
        return p.read_text(), p.stem
    bundled = resources.files("datamarket") / "scenarios" / f"{path}.scn"
    if bundled.is_file():
        return bundled.read_text(), str(path)
    raise ParseError(f"no scenario file or bundled scenario named {str(path)!r}")


def load_scenario(path: str | Path) -> Scenario:
    text, name = resolve(path)
    return parse_scenario(text, name)
