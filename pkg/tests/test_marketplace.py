from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datamarket import crypto, errors, geohex
from datamarket.blobstore import BlobStore
from datamarket.events import CONTRACT_KINDS, load_events
from datamarket.ledger import Ledger
from datamarket.marketplace import HOLTER_MONITOR, SMART_WATCH, Marketplace
from helpers import TOKYO, make_world


@pytest.fixture
def w():
    return make_world()


def test_vendor_register(w):
    m = w.market
    assert m.get_vendor(w.vendor) == "AcmeWear"
    assert m.vendor_length() == 1
    assert m.sensor_data_length(w.vendor, SMART_WATCH) == 0
    a, b = w.ledger.create_account(), w.ledger.create_account()
    with pytest.raises(errors.InvalidSensorType):
        m.vendor_register(a, "Dup", [1, 1], [1, 1])
    with pytest.raises(errors.InvalidSensorType):
        m.vendor_register(a, "Zero", [0], [1])
    with pytest.raises(errors.LengthMismatch):
        m.vendor_register(a, "Len", [1, 2], [1, 2, 3])
    with pytest.raises(errors.AlreadyRegistered):
        m.vendor_register(w.vendor, "Again", [1], [1])
    assert m.vendor_register(a, "Other", [1], [5]) == a
    m.vendor_register(b, "Third", [3], [5])
    assert m.vendor_length() == 3
    with pytest.raises(errors.UnknownVendor):
        m.get_vendor(w.device)


def test_customer_register(w):
    m = w.market
    assert m.get_customer_pub_key(w.customer) == w.buyer_keys.public_hex
    with pytest.raises(errors.AlreadyRegistered):
        m.customer_register(w.customer, w.buyer_keys.public_hex)
    with pytest.raises(errors.MalformedPublicKey):
        m.customer_register(w.ledger.create_account(), "zz")


def test_device_whitelist(w):
    m = w.market
    other = w.ledger.create_account()
    with pytest.raises(errors.NotAVendor):
        m.add_valid_device(w.customer, other)
    m.add_valid_device(w.vendor, w.device)
    assert m.vendors[w.vendor].devices == {w.device}


def test_push_rules(w):
    m = w.market
    w.push()
    assert m.sensor_data_length(w.vendor, SMART_WATCH) == 1
    handle = w.store.put(b"blob")
    code = geohex.encode(TOKYO, 7)
    before = w.state()
    with pytest.raises(errors.UnauthorizedDevice):
        m.sensor_data_push(w.customer, w.vendor, 1, "s", 1, code, handle, 0, 1)
    assert w.state() == before
    solo = make_world(sensors=(1,), prices=(10,))
    with pytest.raises(errors.UnsupportedSensorType):
        solo.market.sensor_data_push(solo.device, solo.vendor, HOLTER_MONITOR, "s", 1, code, solo.store.put(b"x"), 0, 1)
    with pytest.raises(errors.InvalidGeoCode):
        m.sensor_data_push(w.device, w.vendor, 1, "s", 1, "X!", handle, 0, 1)
    with pytest.raises(errors.UnknownHandle):
        m.sensor_data_push(w.device, w.vendor, 1, "s", 1, code, "00" * 32, 0, 1)
    with pytest.raises(errors.UnknownVendor):
        m.sensor_data_push(w.device, w.customer, 1, "s", 1, code, handle, 0, 1)


def test_query_sensor_enumeration(w):
    m = w.market
    extra = [w.ledger.create_account() for _ in range(6)]
    rng = random.Random(2)
    for i, a in enumerate(extra):
        m.vendor_register(a, f"v{i}", rng.sample([1, 2, 3, 4], 2), [1, 1])
    for t in (1, 2, 3, 4, 99):
        got = [m.query_sensor(t, i) for i in range(m.query_sensor_count(t))]
        # brute-force scan in registration order
        assert got == [a for a in m.vendor_arr if t in m.vendors[a].types]
        with pytest.raises(errors.IndexOutOfRange):
            m.query_sensor(t, len(got))


def test_pull_reads_back_and_hides_handle(w):
    m = w.market
    i = w.push()
    schema, ts, spatial, price = m.sensor_data_pull(w.vendor, 1, i)
    assert (schema, ts, spatial, price) == ("json/v1", 1000, geohex.encode(TOKYO, 7), 10)
    handle = m.vendors[w.vendor].payloads[1][i].handle
    assert handle not in repr(m.sensor_data_pull(w.vendor, 1, i))
    m.update_sensor_price(w.vendor, 1, 3)
    assert m.sensor_data_pull(w.vendor, 1, i)[3] == 3 == m.get_sensor_price(w.vendor, 1)
    with pytest.raises(errors.IndexOutOfRange):
        m.sensor_data_pull(w.vendor, 1, 5)
    with pytest.raises(errors.UnknownVendor):
        m.sensor_data_pull(w.customer, 1, 0)
    with pytest.raises(errors.UnsupportedSensorType):
        m.get_sensor_price(w.vendor, 7)


def test_update_price(w):
    m = w.market
    with pytest.raises(errors.NotAVendor):
        m.update_sensor_price(w.customer, 1, 1)
    with pytest.raises(errors.UnsupportedSensorType):
        m.update_sensor_price(w.vendor, 9, 1)
    i = w.push()
    m.update_sensor_price(w.vendor, 1, 0)
    before = w.ledger.balance_of(w.customer)
    m.request_for_data(w.customer, w.vendor, 1, i)
    assert w.ledger.balance_of(w.customer) == before


def test_request_boundaries():
    w = make_world(tokens=10)
    i = w.push()
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    assert w.ledger.balance_of(w.customer)[1] == 0
    assert w.ledger.balance_of(w.vendor)[1] == 10
    assert len(w.market.customers[w.customer].purchases) == 1

    poor = make_world(tokens=9)
    i = poor.push()
    before = poor.state()
    with pytest.raises(errors.InsufficientFunds):
        poor.market.request_for_data(poor.customer, poor.vendor, 1, i)
    assert poor.state() == before
    assert poor.market.customers[poor.customer].vote_rights == {}


def test_repeat_purchase_pays_twice(w):
    i = w.push()
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    assert w.ledger.balance_of(w.customer)[1] == 1000 - 20
    assert len(w.market.customers[w.customer].purchases) == 2


def test_price_snapshot_at_purchase(w):
    i = w.push()
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    w.market.update_sensor_price(w.vendor, 1, 500)
    assert w.ledger.balance_of(w.vendor)[1] == 10
    assert w.ledger.events[-2]["price"] == 10


def test_request_errors(w):
    with pytest.raises(errors.NotACustomer):
        w.market.request_for_data(w.vendor, w.vendor, 1, 0)
    with pytest.raises(errors.IndexOutOfRange):
        w.market.request_for_data(w.customer, w.vendor, 1, 0)


def test_delivery_rules_and_pipeline(w):
    m = w.market
    i = w.push(b"heart rate 72")
    key = crypto.derive_key(w.master, i)
    wrapped = crypto.wrap_key(m.get_customer_pub_key(w.customer), key, recipient=w.customer)
    with pytest.raises(errors.NoMatchingPurchase):
        m.transfer_key_and_data(w.vendor, wrapped, w.customer, 1, i)
    m.request_for_data(w.customer, w.vendor, 1, i)
    handle = m.transfer_key_and_data(w.vendor, wrapped, w.customer, 1, i)
    with pytest.raises(errors.AlreadyDelivered):
        m.transfer_key_and_data(w.vendor, wrapped, w.customer, 1, i)
    raw = crypto.unwrap_key(w.buyer_keys.private, m.delivered_key(w.customer, w.vendor, 1, i))
    assert crypto.decrypt(crypto.SymKey(raw, i, crypto.EncryptionScheme.SCHEME_A), w.store.get(handle)) == b"heart rate 72"
    assert m.vendors[w.vendor].payloads[1][i].encrypted_key == wrapped.ciphertext
    with pytest.raises(errors.NotAVendor):
        m.transfer_key_and_data(w.customer, wrapped, w.customer, 1, i)


def test_voting(w):
    m = w.market
    i = w.push()
    with pytest.raises(errors.NoVoteRight):
        m.vote_for_vendor(w.customer, w.vendor, "up")
    m.request_for_data(w.customer, w.vendor, 1, i)
    assert m.vote_for_vendor(w.customer, w.vendor, "up") == 1
    with pytest.raises(errors.NoVoteRight):
        m.vote_for_vendor(w.customer, w.vendor, "up")
    with pytest.raises(errors.UnknownVendor):
        m.vote_for_vendor(w.customer, w.device, "up")


def test_down_votes_add_up(w):
    m = w.market
    i = w.push()
    other = w.ledger.create_account()
    m.customer_register(other, crypto.generate_keypair(b"o" * 16).public_hex)
    w.ledger.mint(other, 0, 100)
    for c in (w.customer, other):
        m.request_for_data(c, w.vendor, 1, i)
        m.vote_for_vendor(c, w.vendor, "down")
    assert m.vendors[w.vendor].votes == -2


def test_poll_visibility():
    ledger = Ledger()
    m = Marketplace(ledger, BlobStore())
    assert m.poll_events(0) == []
    w = make_world()
    seen = w.market.poll_events(0)
    w.push()
    assert w.market.poll_events(seen[-1].seq) == []
    w.ledger.tick()
    fresh = w.market.poll_events(seen[-1].seq)
    assert [e.kind for e in fresh] == ["DataPushed"]


def test_views_are_free(w):
    i = w.push()
    before = (w.ledger.receipts, w.state())
    m = w.market
    m.vendor_length(), m.get_vendor(w.vendor), m.query_sensor(1, 0), m.sensor_data_pull(w.vendor, 1, i)
    m.sensor_data_length(w.vendor, 1), m.get_sensor_price(w.vendor, 1), m.get_customer_pub_key(w.customer)
    m.poll_events(0)
    assert (w.ledger.receipts, w.state()) == before


# -- authorization -----------------------------------------------------------
def mutating_calls(w, handle, code, wrapped):
    """(op name, required role, callable taking the caller, expected error for a wrong caller)."""
    m = w.market
    return [
        ("add_valid_device", "vendor", lambda c: m.add_valid_device(c, w.device), errors.NotAVendor),
        ("sensor_data_push", "device", lambda c: m.sensor_data_push(c, w.vendor, 1, "s", 1, code, handle, 0, 1), errors.UnauthorizedDevice),
        ("update_sensor_price", "vendor", lambda c: m.update_sensor_price(c, 1, 3), errors.NotAVendor),
        ("request_for_data", "customer", lambda c: m.request_for_data(c, w.vendor, 1, 0), errors.NotACustomer),
        ("transfer_key_and_data", "vendor", lambda c: m.transfer_key_and_data(c, wrapped, w.customer, 1, 0), errors.NotAVendor),
        ("vote_for_vendor", "customer", lambda c: m.vote_for_vendor(c, w.vendor, "up"), errors.NotACustomer),
    ]


def role_swap_cases():
    """Every mutating op against every actor that lacks its role, on a fresh 3-actor fixture."""
    out = []
    probe = make_world()
    for name, role, _, _ in mutating_calls(probe, "", "", b""):
        for actor in ("vendor", "device", "customer"):
            if actor != role:
                out.append((name, actor))
    out += [("vendor_register", "vendor"), ("customer_register", "customer")]
    return out


def run_role_swap(name, actor):
    w = make_world()
    i = w.push()
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    wrapped = crypto.wrap_key(w.buyer_keys.public, crypto.derive_key(w.master, i))
    handle = w.store.put(b"another blob")
    code = geohex.encode(TOKYO, 5)
    caller = getattr(w, actor)
    calls = {n: (fn, err) for n, _, fn, err in mutating_calls(w, handle, code, wrapped)}
    calls["vendor_register"] = (lambda c: w.market.vendor_register(c, "X", [1], [1]), errors.AlreadyRegistered)
    calls["customer_register"] = (lambda c: w.market.customer_register(c, w.buyer_keys.public_hex), errors.AlreadyRegistered)
    fn, err = calls[name]
    before = w.state()
    with pytest.raises(err):
        fn(caller)
    assert w.state() == before
    assert w.ledger.last_receipt.outcome == err.__name__


@pytest.mark.parametrize("name,actor", role_swap_cases())
def test_role_swap_rejected(name, actor):
    run_role_swap(name, actor)


def test_correct_roles_succeed():
    w = make_world()
    i = w.push()
    w.market.request_for_data(w.customer, w.vendor, 1, i)
    wrapped = crypto.wrap_key(w.buyer_keys.public, crypto.derive_key(w.master, i))
    for name, role, fn, _ in mutating_calls(w, w.store.put(b"b"), geohex.encode(TOKYO, 5), wrapped):
        fn(getattr(w, role))


# -- costs --------------------------------------------------------------------
def op_costs(n_payloads: int, n_vendors: int = 1) -> dict[str, int]:
    w = make_world(tokens=10**9)
    handle = w.store.put(b"shared")
    code = geohex.encode(TOKYO, 7)
    m = w.market
    for k in range(n_payloads):
        m.sensor_data_push(w.device, w.vendor, 1, "s", k, code, handle, k, 1)
    for _ in range(n_vendors - 1):
        m.vendor_register(w.ledger.create_account(), "filler", [1], [1])
    newcomer = w.ledger.create_account()
    new_customer = w.ledger.create_account()
    last = n_payloads - 1
    wrapped = crypto.wrap_key(w.buyer_keys.public, b"\x00" * 32)
    steps = {
        "vendor_register": lambda: m.vendor_register(newcomer, "New", [1, 2], [5, 5]),
        "customer_register": lambda: m.customer_register(new_customer, w.buyer_keys.public_hex),
        "add_valid_device": lambda: m.add_valid_device(w.vendor, w.ledger.create_account()),
        "sensor_data_push": lambda: m.sensor_data_push(w.device, w.vendor, 1, "s", 1, code, handle, 1, 1),
        "update_sensor_price": lambda: m.update_sensor_price(w.vendor, 1, 11),
        "request_for_data": lambda: m.request_for_data(w.customer, w.vendor, 1, last),
        "transfer_key_and_data": lambda: m.transfer_key_and_data(w.vendor, wrapped, w.customer, 1, last),
        "vote_for_vendor": lambda: m.vote_for_vendor(w.customer, w.vendor, "up"),
    }
    out = {}
    for name, fn in steps.items():
        fn()
        out[name] = w.ledger.last_receipt.cost_units
    return out


def test_cost_independent_of_catalog_size():
    small, large = op_costs(10), op_costs(2000, n_vendors=200)
    assert small == large
    c = make_world().ledger.costs
    assert small["vendor_register"] == c.cost(2 + 3 * 2, 1)
    assert small["request_for_data"] == c.cost(4, 1)


# -- properties ----------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["buy", "vote_up", "vote_down"]), st.integers(0, 1), st.integers(0, 2)), max_size=30))
def test_vote_discipline(ops):
    w = make_world()
    m = w.market
    second = w.ledger.create_account()
    m.vendor_register(second, "Second", [1], [4])
    m.add_valid_device(second, w.device)
    vendors = [w.vendor, second]
    for v in vendors:
        for _ in range(3):
            key = crypto.derive_key(w.master, 0)
            h = w.store.put(crypto.encrypt(key, b"r"))
            m.sensor_data_push(w.device, v, 1, "s", 0, geohex.encode(TOKYO, 3), h, 0, 1)
    purchases = {v: 0 for v in vendors}
    votes = {v: 0 for v in vendors}
    rights = {v: False for v in vendors}
    for op, vi, idx in ops:
        v = vendors[vi]
        if op == "buy":
            m.request_for_data(w.customer, v, 1, idx)
            purchases[v] += 1
            rights[v] = True
        else:
            try:
                m.vote_for_vendor(w.customer, v, "up" if op == "vote_up" else "down")
            except errors.NoVoteRight:
                assert not rights[v]
            else:
                assert rights[v]
                rights[v] = False
                votes[v] += 1
        for x in vendors:
            assert votes[x] <= purchases[x]
            assert abs(m.vendors[x].votes) <= purchases[x]
            assert m.customers[w.customer].vote_rights.get(x, False) == rights[x]


def random_session(seed: int, steps: int = 150):
    rng = random.Random(seed)
    w = make_world()
    m = w.market
    customers = [w.customer]
    for k in range(2):
        c = w.ledger.create_account()
        m.customer_register(c, crypto.generate_keypair(bytes([k]) * 16).public_hex)
        w.ledger.mint(c, 0, 60)
        customers.append(c)
    paid = 0
    pushes = {1: 0, 2: 0}
    for _ in range(steps):
        op = rng.choice(["push", "buy", "deliver", "vote", "price", "tick"])
        try:
            if op == "push":
                t = rng.choice([1, 2])
                w.push(sensor=t, level=rng.randint(0, 15))
                pushes[t] += 1
            elif op == "buy":
                c, t = rng.choice(customers), rng.choice([1, 2])
                i = rng.randrange(max(1, m.sensor_data_length(w.vendor, t)))
                price = m.get_sensor_price(w.vendor, t)
                m.request_for_data(c, w.vendor, t, i)
                paid += price
            elif op == "deliver":
                c = rng.choice(customers)
                p = rng.choice(m.customers[c].purchases or [None])
                if p is not None:
                    pub = m.get_customer_pub_key(c)
                    m.transfer_key_and_data(w.vendor, crypto.wrap_key(pub, crypto.derive_key(w.master, p.index)), c, p.sensor_type, p.index)
            elif op == "vote":
                m.vote_for_vendor(rng.choice(customers), w.vendor, rng.choice(["up", "down"]))
            elif op == "price":
                m.update_sensor_price(w.vendor, rng.choice([1, 2]), rng.randint(0, 30))
            else:
                w.ledger.tick()
        except errors.MarketError:
            pass
    return w, paid, pushes, customers


@pytest.mark.parametrize("seed", range(5))
def test_payment_and_catalog_invariants(seed):
    w, paid, pushes, customers = random_session(seed)
    assert w.ledger.balance_of(w.vendor)[1] == paid
    assert sum(1000 if c == w.customer else 60 for c in customers) - sum(w.ledger.balance_of(c)[1] for c in customers) == paid
    requested = [e for e in w.ledger.events if e.kind == "DataRequested"]
    assert sum(e["price"] for e in requested) == paid
    for t in (1, 2):
        assert w.market.sensor_data_length(w.vendor, t) == pushes[t]
    for key, n in w.market.delivery_counts.items():
        assert n <= w.market.purchase_counts[key]


@pytest.mark.parametrize("seed", range(5))
def test_event_log_replays_to_identical_state(seed):
    w, *_ = random_session(seed)
    contract_events = [e for e in w.ledger.events if e.kind in CONTRACT_KINDS]
    receipts_ok = [r for r in w.ledger.receipts if r.ok and r.op != "mint"]
    assert len(contract_events) == len(receipts_ok)
    text = "".join(e.to_line() + "\n" for e in w.ledger.events)
    rebuilt = Marketplace.replay(load_events(text.splitlines()))
    assert rebuilt.snapshot() == w.market.snapshot()


def test_no_key_material_in_views_or_log(w):
    secrets = [w.master.secret]
    i = w.push()
    key = crypto.derive_key(w.master, i)
    secrets.append(key.key)
    blob = repr(w.market.sensor_data_pull(w.vendor, 1, i)) + "".join(e.to_line() for e in w.ledger.events)
    for s in secrets:
        assert s.hex() not in blob
