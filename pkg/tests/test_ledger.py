from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conflux.dagfile import load_dag
from conflux.errors import UnknownBlock
from conflux.ledger import LedgerState, Transaction, apply_tx, derive_tx_order, replay


def transfer(txid, payer, payee, amount):
    return Transaction(txid, "transfer", payee, amount, payer)


def coinbase(txid, payee, amount):
    return Transaction(txid, "coinbase", payee, amount)


def test_golden_verdicts(golden_path):
    dag = load_dag(golden_path)
    verdicts, ledger = derive_tx_order(dag.state.total_order(), dag.state)
    got = [(v.txid, v.status, dag.name(v.block)) for v in verdicts]
    assert got == [
        (100, "applied", "Genesis"),
        (101, "applied", "A"),
        (102, "applied", "B"),
        (103, "conflict", "B"),
        (104, "applied", "B"),
        (104, "duplicate", "G"),
    ]
    assert ledger.balances == {"alice": 20, "bob": 10, "carol": 20, "erin": 50}
    assert ledger.supply == 100


def test_apply_is_pure():
    start = LedgerState({"a": 5})
    after, status = apply_tx(start, transfer(1, "a", "b", 3))
    assert status == "applied"
    assert start.balances == {"a": 5}
    assert after.balance("a") == 2 and after.balance("b") == 3


def test_conflict_is_not_recorded():
    # a conflicting transfer may still apply later once funds arrive
    txs = [(0, transfer(7, "a", "b", 5)), (1, coinbase(8, "a", 5)), (2, transfer(7, "a", "b", 5))]
    verdicts, ledger = replay(txs)
    assert [v.status for v in verdicts] == ["conflict", "applied", "applied"]
    assert ledger.applied == {7, 8}


def test_unknown_block(golden_path):
    dag = load_dag(golden_path)
    with pytest.raises(UnknownBlock):
        derive_tx_order([0, 12345], dag.state)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(txid=1, kind="transfer", payee="b", amount=1),
        dict(txid=1, kind="transfer", payee="b", amount=0, payer="a"),
        dict(txid=1, kind="coinbase", payee="b", amount=1, payer="a"),
        dict(txid=1, kind="mint", payee="b", amount=1),
    ],
)
def test_invalid_transactions(kwargs):
    with pytest.raises(ValueError):
        Transaction(**kwargs)


def test_record_roundtrip():
    for tx in (transfer(3, "x", "y", 9), coinbase(4, "z", 1)):
        assert Transaction.from_record(tx.to_record()) == tx


accounts = st.sampled_from(["a", "b", "c"])
tx_strategy = st.one_of(
    st.builds(coinbase, st.integers(0, 15), accounts, st.integers(1, 20)),
    st.builds(transfer, st.integers(0, 15), accounts, accounts, st.integers(1, 20)),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(tx_strategy, max_size=40))
def test_replay_matches_sequential_oracle(txs):
    verdicts, ledger = replay(enumerate(txs))
    assert [v.status for v in verdicts] == oracles.replay_ledger(txs)
    minted = sum(t.amount for t, v in zip(txs, verdicts) if v.status == "applied" and t.kind == "coinbase")
    assert ledger.supply == minted
    assert all(x >= 0 for x in ledger.balances.values())


@settings(max_examples=100, deadline=None)
@given(st.lists(tx_strategy, max_size=30))
def test_replay_is_fold_of_apply(txs):
    state = LedgerState()
    statuses = []
    for tx in txs:
        state, s = apply_tx(state, tx)
        statuses.append(s)
    verdicts, final = replay(enumerate(txs))
    assert statuses == [v.status for v in verdicts]
    assert final == state
