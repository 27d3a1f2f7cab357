"""Run reports.

A report is a flat ``key=value`` mapping.  :func:`report_from_events` derives
it from an exported event log alone; the runner builds the same keys from live
state, and a run is consistent when both agree.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable

from ..events import Event

Report = dict[str, str]


def format_report(report: Report) -> str:
    return "".join(f"{k}={v}\n" for k, v in report.items())


def parse_report(text: str) -> Report:
    out: Report = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _sorted(report: Report) -> Report:
    head = [
        "scenario",
        "seed",
        "hash",
        "payment",
        "block_interval_s",
        "push_interval_s",
        "last_block",
    ]
    out = {k: report[k] for k in head if k in report}
    out.update({k: report[k] for k in sorted(report) if k not in out})
    return out


def assemble(
    header: dict,
    last_block: int,
    names: dict,
    roles: dict,
    balances: dict,
    votes: dict,
    catalog: dict,
    event_counts: Counter,
    costs: Counter,
    purchases: dict,
    failures: Counter,
    push_gaps: dict,
) -> Report:
    """Lay out a report from already-computed pieces keyed by actor name."""
    r: Report = {
        "scenario": header["name"],
        "seed": str(header["seed"]),
        "hash": header["hash"],
        "payment": header["payment"],
        "block_interval_s": str(header["block_interval_s"]),
        "push_interval_s": str(header["push_interval_s"]),
        "cost_schedule": f"{header['base_tx_units']},{header['per_write_units']},{header['per_event_units']}",
        "last_block": str(last_block),
    }
    for name in names.values():
        native, tokens = balances.get(name, (0, 0))
        r[f"balance.{name}"] = f"{native},{tokens}"
        r[f"cost.{name}"] = str(costs.get(name, 0))
        if roles[name] == "vendor":
            r[f"votes.{name}"] = str(votes.get(name, 0))
    for (vendor, sensor), count in catalog.items():
        r[f"catalog.{vendor}.{sensor}"] = str(count)
    for kind, count in event_counts.items():
        r[f"events.{kind}"] = str(count)
    for k, v in purchases.items():
        r[f"purchases.{k}"] = str(v)
    r["failures.total"] = str(sum(failures.values()))
    for code, count in failures.items():
        r[f"failures.{code}"] = str(count)
    for device, gaps in push_gaps.items():
        r[f"push_gaps_s.{device}"] = ",".join(str(g) for g in gaps) if gaps else "-"
    return _sorted(r)


def report_from_events(events: Iterable[Event]) -> Report:
    events = list(events)
    header = next((e.data for e in events if e.kind == "ScenarioStarted"), None)
    if header is None:
        raise ValueError("event log has no ScenarioStarted record")
    names: dict = {}
    roles: dict = {}
    for e in events:
        if e.kind == "ActorDeclared":
            names[e["address"]] = e["name"]
            roles[e["name"]] = e["role"]

    def name(addr):
        return names.get(addr, addr.hex if addr is not None else "-")

    balances: dict = {n: [0, 0] for n in names.values()}

    def add(addr, kind, amount):
        b = balances.setdefault(name(addr), [0, 0])
        b[0 if kind == "native" else 1] += amount

    payment = header["payment"]
    votes: dict = {}
    catalog: Counter = Counter()
    event_counts: Counter = Counter()
    costs: Counter = Counter()
    failures: Counter = Counter()
    purchases = Counter(requested=0, delivered=0, verified=0, failed=0)
    timestamps: dict = {}
    channels: dict = {}
    for e in events:
        event_counts[e.kind] += 1
        if e.caller is not None and e.cost:
            costs[name(e.caller)] += e.cost
        d = e.data
        if e.kind == "Minted":
            add(d["account"], "native", d["native"])
            add(d["account"], "token", d["tokens"])
        elif e.kind == "Transferred":
            add(d["source"], d["kind"], -d["amount"])
            add(d["target"], d["kind"], d["amount"])
        elif e.kind == "DataRequested":
            add(d["customer"], payment, -d["price"])
            add(d["vendor"], payment, d["price"])
            purchases["requested"] += 1
        elif e.kind == "KeyTransferred":
            purchases["delivered"] += 1
        elif e.kind == "PayloadDecrypted":
            purchases["verified" if d["ok"] else "failed"] += 1
        elif e.kind == "VendorRegistered":
            votes[name(d["vendor"])] = 0
            for s in d["sensors"]:
                catalog[(name(d["vendor"]), s)] += 0
        elif e.kind == "VoteCast":
            votes[name(d["vendor"])] = d["tally"]
        elif e.kind == "DataPushed":
            catalog[(name(d["vendor"]), d["sensor_type"])] += 1
            timestamps.setdefault(name(d["device"]), []).append(d["timestamp"])
        elif e.kind == "ChannelOpened":
            channels[d["channel"]] = (d["party_a"], d["party_b"])
            add(d["party_a"], "token", -d["deposit_a"])
            add(d["party_b"], "token", -d["deposit_b"])
        elif e.kind == "ChannelSettled":
            a, b = channels[d["channel"]]
            add(a, "token", d["balance_a"])
            add(b, "token", d["balance_b"])
        elif e.kind == "StepFailed":
            failures[d["error"]] += 1
            if d["op"] == "buy":
                purchases["failed"] += 1
    last_block = max((e.block for e in events), default=0)
    push_gaps = {}
    for n, role in roles.items():
        if role == "device":
            ts = timestamps.get(n, [])
            push_gaps[n] = sorted({b - a for a, b in zip(ts, ts[1:])})
    return assemble(
        header,
        last_block,
        names,
        roles,
        {k: tuple(v) for k, v in balances.items()},
        votes,
        dict(sorted(catalog.items(), key=lambda kv: (kv[0][0], kv[0][1]))),
        event_counts,
        costs,
        dict(purchases),
        failures,
        push_gaps,
    )
