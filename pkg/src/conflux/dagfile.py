"""JSON-lines DAG files.

Line 1 may be a header record ``{"format": "conflux-dag", "version": 1}``.
Every other line is one block::

    {"id": 3, "parent": 1, "refs": [2], "txs": [], "timestamp": 12.5}

Optional keys: ``label`` (display name) and ``miner``. Lines may appear in any
order; blocks are attached once their ancestry is complete.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from .dag import Block, DagState, build_dag
from .errors import ConfluxError, InvalidBlock
from .ledger import Transaction

FORMAT = "conflux-dag"
VERSION = 1


class DagFileError(ConfluxError):
    """Malformed line; ``line`` is 1-based."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class DagFile:
    state: DagState
    labels: dict[int, str] = field(default_factory=dict)

    def name(self, block_id: int) -> str:
        return self.labels.get(block_id, str(block_id))


def parse_block(rec: dict) -> Block:
    parent = rec.get("parent")
    return Block(
        id=int(rec["id"]),
        parent=None if parent is None else int(parent),
        references=frozenset(int(r) for r in rec.get("refs", [])),
        transactions=tuple(Transaction.from_record(t) for t in rec.get("txs", [])),
        timestamp=float(rec.get("timestamp", 0.0)),
        miner=str(rec.get("miner", "")),
    )


def read_dag(lines: Iterable[str]) -> DagFile:
    """Parse DAG lines. Raises DagFileError on syntax, InvalidBlock on structure."""
    blocks: list[Block] = []
    labels: dict[int, str] = {}
    seen: set[int] = set()
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DagFileError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DagFileError(lineno, "record must be a JSON object")
        if "format" in rec:
            if rec["format"] != FORMAT or rec.get("version") != VERSION:
                raise DagFileError(lineno, f"unsupported header {rec}")
            continue
        try:
            blk = parse_block(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise DagFileError(lineno, f"bad block record ({exc})") from None
        except InvalidBlock as exc:
            raise DagFileError(lineno, str(exc)) from None
        if blk.id in seen:
            raise DagFileError(lineno, f"duplicate block id {blk.id}")
        seen.add(blk.id)
        if "label" in rec:
            labels[blk.id] = str(rec["label"])
        blocks.append(blk)
    if not any(b.parent is None for b in blocks):
        raise InvalidBlock("DAG has no genesis block")
    return DagFile(build_dag(blocks), labels)


def load_dag(path: str | Path) -> DagFile:
    with open(path, encoding="utf-8") as fh:
        return read_dag(fh)


def block_record(block: Block, label: str | None = None) -> dict:
    rec: dict = {
        "id": block.id,
        "parent": block.parent,
        "refs": sorted(block.references),
        "txs": [tx.to_record() for tx in block.transactions],
        "timestamp": block.timestamp,
    }
    if block.miner:
        rec["miner"] = block.miner
    if label is not None:
        rec["label"] = label
    return rec


def write_dag(state: DagState, out: TextIO, labels: dict[int, str] | None = None) -> None:
    labels = labels or {}
    out.write(json.dumps({"format": FORMAT, "version": VERSION}) + "\n")
    for bid in state.order:
        out.write(json.dumps(block_record(state.blocks[bid], labels.get(bid))) + "\n")
