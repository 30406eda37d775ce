"""Transactions, balances, and the transaction total order.

The block total order fixes the transaction order: blocks in order, and
transactions inside a block in appearance order. Replaying that sequence
against a simple balance model discards duplicates and transfers the payer
cannot afford.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Literal, Sequence

from .errors import UnknownBlock

if TYPE_CHECKING:
    from .dag import DagState

TxKind = Literal["transfer", "coinbase"]
TxStatus = Literal["applied", "duplicate", "conflict"]


@dataclass(frozen=True, slots=True)
class Transaction:
    txid: int
    kind: TxKind
    payee: str
    amount: int
    payer: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("transfer", "coinbase"):
            raise ValueError(f"unknown transaction kind {self.kind!r}")
        if self.amount < 0:
            raise ValueError("amount must be non-negative")
        if self.kind == "transfer":
            if self.payer is None:
                raise ValueError("transfer requires a payer")
            if self.amount == 0:
                raise ValueError("transfer amount must be positive")
        elif self.payer is not None:
            raise ValueError("coinbase has no payer")

    def to_record(self) -> dict:
        rec = {"txid": self.txid, "kind": self.kind, "payee": self.payee, "amount": self.amount}
        if self.payer is not None:
            rec["payer"] = self.payer
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> Transaction:
        return cls(
            txid=int(rec["txid"]),
            kind=rec.get("kind", "transfer"),
            payee=str(rec["payee"]),
            amount=int(rec["amount"]),
            payer=None if rec.get("payer") is None else str(rec["payer"]),
        )


@dataclass(frozen=True)
class LedgerState:
    balances: dict[str, int] = field(default_factory=dict)
    applied: frozenset[int] = frozenset()

    @property
    def supply(self) -> int:
        return sum(self.balances.values())

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)


@dataclass(frozen=True, slots=True)
class TxVerdict:
    txid: int
    status: TxStatus
    position: int
    block: int


def _status(balances: dict[str, int], applied: set[int] | frozenset[int], tx: Transaction) -> TxStatus:
    if tx.txid in applied:
        return "duplicate"
    if tx.kind == "transfer" and balances.get(tx.payer, 0) < tx.amount:
        return "conflict"
    return "applied"


def _credit(balances: dict[str, int], tx: Transaction) -> None:
    if tx.kind == "transfer":
        balances[tx.payer] -= tx.amount
    balances[tx.payee] = balances.get(tx.payee, 0) + tx.amount


def apply_tx(ledger: LedgerState, tx: Transaction) -> tuple[LedgerState, TxStatus]:
    """Apply one transaction; the input ledger is left untouched."""
    status = _status(ledger.balances, ledger.applied, tx)
    if status != "applied":
        return ledger, status
    balances = dict(ledger.balances)
    _credit(balances, tx)
    return LedgerState(balances, ledger.applied | {tx.txid}), status


def replay(
    txs: Iterable[tuple[int, Transaction]], ledger: LedgerState | None = None
) -> tuple[list[TxVerdict], LedgerState]:
    """Replay ``(block_id, tx)`` pairs in sequence."""
    ledger = ledger or LedgerState()
    balances = dict(ledger.balances)
    applied = set(ledger.applied)
    verdicts = []
    for position, (block_id, tx) in enumerate(txs):
        status = _status(balances, applied, tx)
        if status == "applied":
            _credit(balances, tx)
            applied.add(tx.txid)
        verdicts.append(TxVerdict(tx.txid, status, position, block_id))
    return verdicts, LedgerState(balances, frozenset(applied))


def derive_tx_order(
    block_order: Sequence[int], state: DagState, ledger: LedgerState | None = None
) -> tuple[list[TxVerdict], LedgerState]:
    """Transaction verdicts for a block total order of ``state``."""
    pairs = []
    for block_id in block_order:
        block = state.blocks.get(block_id)
        if block is None:
            raise UnknownBlock(f"block {block_id} is not in the DAG")
        pairs.extend((block_id, tx) for tx in block.transactions)
    return replay(pairs, ledger)
