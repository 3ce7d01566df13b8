import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accounts import ME, random_account
from ethfraud.dataset import FEATURE_NAMES
from ethfraud.features import build_feature_table, extract_features
from ethfraud.ingest import Transaction

X = "0x" + "a" * 40
Y = "0x" + "b" * 40
Z = "0x" + "c" * 40
ETH = 10**18
GWEI = 10**9


def t(i, ts, frm, to, eth, is_error=False):
    return Transaction(f"0x{i:064x}", ts, frm, to, int(eth * ETH), 20 * GWEI, 21000, is_error)


def test_worked_example():
    txs = [t(1, 1000, X, ME, 2), t(2, 2000, Y, ME, 4), t(3, 4000, X, ME, 6), t(4, 5000, ME, Z, 10)]
    f = extract_features(ME, txs)
    assert (f.it, f.ot, f.uit, f.uot) == (3, 1, 2, 1)
    assert (f.avit, f.avot, f.vit, f.vot) == (4.0, 10.0, 12.0, 10.0)
    assert (f.atit, f.atot, f.agp, f.agl) == (1500.0, 0.0, 20.0, 21000.0)
    assert f.dur == pytest.approx(4000 / 86400)


def test_single_self_transfer():
    f = extract_features(ME, [t(1, 7, ME, ME, 1)])
    assert (f.it, f.ot, f.uit, f.uot, f.vit, f.vot, f.atit, f.atot, f.dur) == (1, 1, 1, 1, 1.0, 1.0, 0, 0, 0)


def test_errors():
    with pytest.raises(ValueError, match="no transactions"):
        extract_features(ME, [])
    with pytest.raises(ValueError, match="sorted"):
        extract_features(ME, [t(1, 20, X, ME, 1), t(2, 10, X, ME, 1)])
    with pytest.raises(ValueError, match="does not involve"):
        extract_features(ME, [t(1, 20, X, Y, 1)])
    with pytest.raises(ValueError, match="failed"):
        extract_features(ME, [t(1, 20, X, ME, 1, is_error=True)])


def test_receive_only_account_has_zero_outgoing():
    f = extract_features(ME, [t(1, 5, X, ME, 3)])
    assert (f.ot, f.uot, f.avot, f.vot, f.atot) == (0, 0, 0.0, 0.0, 0.0)


def test_value_sums_are_wei_exact():
    # 0.1 ether ten times: float accumulation would drift, integer wei does not
    txs = [Transaction(f"0x{i:064x}", i + 1, X, ME, 10**17, 0, 0) for i in range(10)]
    f = extract_features(ME, txs)
    assert f.vit == 1.0 and f.avit == 0.1


def test_build_feature_table_rows_and_skip_report():
    tx_map = {X: [t(1, 5, X, Y, 1)], Y: [t(1, 5, X, Y, 1), t(2, 9, Y, Z, 1)], Z: [t(3, 5, Y, Z, 1, is_error=True)]}
    labels = {Y: "fraud", X: "nonfraud", Z: "nonfraud", "0x" + "d" * 40: "fraud"}
    d, skipped = build_feature_table(tx_map, labels)
    assert d.addresses == (X, Y)
    assert d.X.shape == (2, 13) and d.feature_names == FEATURE_NAMES
    assert list(d.y) == [0, 1]
    assert skipped == [Z, "0x" + "d" * 40]


def test_build_feature_table_is_stable():
    rng = np.random.default_rng(3)
    accounts = {f"0x{i + 100:040x}": random_account(rng) for i in range(5)}
    # rewrite each account as its own ME so involvement holds
    tx_map = {a: [Transaction(x.tx_hash, x.timestamp, a if x.sender == ME else x.sender,
                              a if x.recipient == ME else x.recipient, x.value_wei, x.gas_price_wei, x.gas_limit)
                  for x in txs] for a, txs in accounts.items()}
    labels = {a: "fraud" if i % 2 else "nonfraud" for i, a in enumerate(tx_map)}
    d1, _ = build_feature_table(tx_map, labels)
    d2, _ = build_feature_table({a: list(reversed(v)) for a, v in tx_map.items()}, labels)
    assert np.array_equal(d1.X, d2.X) and d1.addresses == d2.addresses


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants_hold(seed):
    rng = np.random.default_rng(seed)
    txs = random_account(rng)
    f = extract_features(ME, txs)
    assert 0 <= f.uit <= f.it and 0 <= f.uot <= f.ot
    assert abs(f.vit - f.it * f.avit) <= 1e-6 * max(1.0, f.vit)
    assert abs(f.vot - f.ot * f.avot) <= 1e-6 * max(1.0, f.vot)
    assert f.dur >= 0 and (f.dur == 0) == (len({x.timestamp for x in txs}) == 1)
    assert all(v >= 0 for v in f.as_array())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_order_independence(seed, shuffler):
    txs = random_account(np.random.default_rng(seed))
    shuffled = list(txs)
    shuffler.shuffle(shuffled)
    resorted = sorted(shuffled, key=lambda x: x.timestamp)
    assert np.array_equal(extract_features(ME, txs).as_array(), extract_features(ME, resorted).as_array())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10**21))
def test_appending_incoming_transfer(seed, value):
    txs = random_account(np.random.default_rng(seed))
    before = extract_features(ME, txs)
    extra = Transaction("0x" + "f" * 64, txs[-1].timestamp + 1, X, ME, value, 0, 21000)
    after = extract_features(ME, txs + [extra])
    assert after.it == before.it + 1
    assert after.vit >= before.vit
    assert math.isclose(after.dur, (extra.timestamp - txs[0].timestamp) / 86400)
