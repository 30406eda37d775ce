"""Block DAG state and the deterministic ordering algorithms.

A node's local state holds every block it has validated. Each block carries a
single parent edge (the parental tree) plus reference edges to tips it has
seen. On top of that state live the pivot chain (heaviest-subtree descent of
the parental tree), the epoch partition it induces, and the block total order.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Literal, Sequence

from .errors import CyclicReference, DuplicateBlock, InvalidBlock, NotOnPivotChain, UnknownBlock
from .ledger import Transaction

ADVERSARY = "adversary"
GENESIS_MINER = "genesis"

ChainRule = Literal["longest", "ghost"]


@dataclass(frozen=True, slots=True)
class Block:
    id: int
    parent: int | None
    references: frozenset[int] = frozenset()
    transactions: tuple[Transaction, ...] = ()
    timestamp: float = 0.0
    miner: str = ""

    def __post_init__(self) -> None:
        refs = frozenset(self.references)
        object.__setattr__(self, "references", refs)
        object.__setattr__(self, "transactions", tuple(self.transactions))
        if self.id < 0 or self.id >= 1 << 64:
            raise InvalidBlock(f"block id {self.id} is not an unsigned 64-bit integer")
        if self.parent is None and refs:
            raise InvalidBlock("genesis block cannot carry references")
        if self.parent is not None and self.parent in refs:
            raise InvalidBlock(f"block {self.id}: parent {self.parent} is also listed as a reference")
        if self.id == self.parent or self.id in refs:
            raise CyclicReference(f"block {self.id} points at itself")

    @property
    def predecessors(self) -> frozenset[int]:
        """Targets of all outgoing edges (parent and references)."""
        if self.parent is None:
            return frozenset()
        return self.references | {self.parent}

    @property
    def is_honest(self) -> bool:
        return self.miner != ADVERSARY


@dataclass
class EpochPartition:
    pivot: list[int]
    epoch_of: dict[int, int]
    members: dict[int, set[int]]
    unordered: set[int] = field(default_factory=set)


class DagState:
    """Local DAG of one node.

    Blocks whose ancestry is incomplete wait in a pending buffer and are
    attached as soon as the missing blocks arrive. Subtree sizes, stale-aware
    subtree weights and tree heights are maintained incrementally along the
    parent path of each attached block.
    """

    def __init__(self, genesis: Block | None = None) -> None:
        self.blocks: dict[int, Block] = {}
        self.genesis: int | None = None
        self.children: dict[int, set[int]] = {}
        self.subtree_size: dict[int, int] = {}
        self.subtree_weight: dict[int, int] = {}
        self.height: dict[int, int] = {}
        self.stale: set[int] = set()
        self.order: list[int] = []
        self._tips: set[int] = set()
        self._pivot: list[int] = []
        self._pivot_pos: dict[int, int] = {}
        self._pending: dict[int, tuple[Block, bool]] = {}
        self._missing: dict[int, int] = {}
        self._waiting: dict[int, set[int]] = defaultdict(set)
        if genesis is not None:
            self.insert_block(genesis)

    def __len__(self) -> int:
        return len(self.blocks)

    def __contains__(self, block_id: object) -> bool:
        return block_id in self.blocks

    def __iter__(self) -> Iterator[int]:
        return iter(self.order)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DagState):
            return NotImplemented
        return (
            self.genesis == other.genesis
            and self.blocks == other.blocks
            and self.stale == other.stale
            and self.subtree_size == other.subtree_size
            and self.subtree_weight == other.subtree_weight
            and self.height == other.height
            and self.children == other.children
            and self._tips == other._tips
            and self._pending.keys() == other._pending.keys()
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def pending(self) -> set[int]:
        return set(self._pending)

    def block(self, block_id: int) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise UnknownBlock(f"block {block_id} is not in the DAG") from None

    def tips(self) -> set[int]:
        """Blocks without any incoming parent or reference edge."""
        return set(self._tips)

    def knows(self, block_id: int) -> bool:
        return block_id in self.blocks or block_id in self._pending

    # -- mutation ---------------------------------------------------------

    def insert_block(self, block: Block, stale: bool = False) -> list[int]:
        """Insert ``block`` or buffer it until its ancestry is present.

        Returns the ids that became valid, in topological order (empty when
        the block was buffered).
        """
        if self.knows(block.id):
            raise DuplicateBlock(f"block {block.id} already present")
        if block.parent is None:
            if self.genesis is not None:
                raise InvalidBlock(f"block {block.id} has no parent but genesis is {self.genesis}")
            return self._attach_cascade(block, stale)
        missing = [p for p in block.predecessors if p not in self.blocks]
        if not missing:
            return self._attach_cascade(block, stale)
        self._check_no_cycle(block, missing)
        self._pending[block.id] = (block, stale)
        self._missing[block.id] = len(missing)
        for p in missing:
            self._waiting[p].add(block.id)
        return []

    def _check_no_cycle(self, block: Block, missing: list[int]) -> None:
        stack = list(missing)
        seen = set()
        while stack:
            x = stack.pop()
            if x == block.id:
                raise CyclicReference(f"block {block.id} closes a cycle through pending blocks")
            if x in seen or x not in self._pending:
                continue
            seen.add(x)
            stack.extend(p for p in self._pending[x][0].predecessors if p not in self.blocks)

    def _attach_cascade(self, block: Block, stale: bool) -> list[int]:
        valid = []
        queue = deque([(block, stale)])
        while queue:
            blk, flag = queue.popleft()
            self._attach(blk, flag)
            valid.append(blk.id)
            for waiter in sorted(self._waiting.pop(blk.id, ())):
                self._missing[waiter] -= 1
                if self._missing[waiter] == 0:
                    del self._missing[waiter]
                    queue.append(self._pending.pop(waiter))
        return valid

    def _attach(self, block: Block, stale: bool) -> None:
        bid = block.id
        self.blocks[bid] = block
        self.order.append(bid)
        self.children[bid] = set()
        self.subtree_size[bid] = 1
        weight = 0 if stale else 1
        self.subtree_weight[bid] = weight
        self.height[bid] = 0
        if stale:
            self.stale.add(bid)
        self._tips.difference_update(block.predecessors)
        self._tips.add(bid)
        if block.parent is None:
            self.genesis = bid
            self._pivot = [bid]
            self._pivot_pos = {bid: 0}
            return
        self.children[block.parent].add(bid)
        blocks, size, wt, on_pivot = self.blocks, self.subtree_size, self.subtree_weight, self._pivot_pos
        branch, p = bid, block.parent
        while p not in on_pivot:
            size[p] += 1
            wt[p] += weight
            branch = p
            p = blocks[p].parent
        fork = p
        while p is not None:
            size[p] += 1
            wt[p] += weight
            p = blocks[p].parent
        self._update_pivot(fork, branch)
        height = self.height
        h, p = 1, block.parent
        while p is not None and height[p] < h:
            height[p] = h
            h += 1
            p = blocks[p].parent

    def _update_pivot(self, fork: int, branch: int) -> None:
        # fork is the deepest pivot block above the new block; branch is its
        # child on the new block's side. Weights above fork grow on both sides.
        idx = self._pivot_pos[fork]
        if idx + 1 < len(self._pivot):
            current = self._pivot[idx + 1]
            wb, wc = self.subtree_weight[branch], self.subtree_weight[current]
            if wb < wc or (wb == wc and branch > current):
                return
        for x in self._pivot[idx + 1 :]:
            del self._pivot_pos[x]
        del self._pivot[idx + 1 :]
        b = fork
        while self.children[b]:
            b = self._heaviest_child(b)
            self._pivot_pos[b] = len(self._pivot)
            self._pivot.append(b)

    def _heaviest_child(self, b: int) -> int:
        best, w = None, -1
        for c in self.children[b]:
            wc = self.subtree_weight[c]
            if wc > w or (wc == w and c < best):
                best, w = c, wc
        return best

    def copy(self) -> DagState:
        other = DagState()
        other.blocks = dict(self.blocks)
        other.genesis = self.genesis
        other.children = {k: set(v) for k, v in self.children.items()}
        other.subtree_size = dict(self.subtree_size)
        other.subtree_weight = dict(self.subtree_weight)
        other.height = dict(self.height)
        other.stale = set(self.stale)
        other.order = list(self.order)
        other._tips = set(self._tips)
        other._pivot = list(self._pivot)
        other._pivot_pos = dict(self._pivot_pos)
        other._pending = dict(self._pending)
        other._missing = dict(self._missing)
        other._waiting = defaultdict(set, {k: set(v) for k, v in self._waiting.items()})
        return other

    def restrict(self, keep: Callable[[Block], bool] | Iterable[int]) -> DagState:
        """Sub-state with the kept blocks whose full ancestry is also kept."""
        if not callable(keep):
            ids = set(keep)
            keep = lambda b: b.id in ids  # noqa: E731
        view = DagState()
        for bid in self.order:
            blk = self.blocks[bid]
            if keep(blk) and all(p in view.blocks for p in blk.predecessors):
                view._attach(blk, bid in self.stale)
        return view

    # -- graph utilities --------------------------------------------------

    def chain(self, b: int) -> list[int]:
        """Genesis-to-``b`` path along parent edges."""
        path = []
        cur: int | None = self.block(b).id
        while cur is not None:
            path.append(cur)
            cur = self.blocks[cur].parent
        path.reverse()
        return path

    def siblings(self, b: int) -> set[int]:
        parent = self.block(b).parent
        if parent is None:
            return set()
        return self.children[parent] - {b}

    def subtree(self, b: int) -> set[int]:
        self.block(b)
        out = {b}
        stack = [b]
        while stack:
            for c in self.children[stack.pop()]:
                out.add(c)
                stack.append(c)
        return out

    def past(self, b: int) -> set[int]:
        """All blocks reachable from ``b`` over parent and reference edges, ``b`` included."""
        self.block(b)
        return self._reach(b, frozenset())

    def _reach(self, start: int, stop: set[int] | frozenset[int]) -> set[int]:
        out = {start}
        stack = [start]
        while stack:
            for p in self.blocks[stack.pop()].predecessors:
                if p not in out and p not in stop:
                    out.add(p)
                    stack.append(p)
        return out

    # -- chain selection --------------------------------------------------

    def pivot(self, start: int | None = None) -> int:
        """Last block of the pivot chain below ``start`` (genesis by default).

        Heaviest child first, smallest id on equal weight. Stale blocks add
        no weight.
        """
        if start is None:
            if not self._pivot:
                raise UnknownBlock("empty DAG has no pivot")
            return self._pivot[-1]
        b = self.block(start).id
        while self.children[b]:
            b = self._heaviest_child(b)
        return b

    def pivot_chain(self) -> list[int]:
        return list(self._pivot)

    def on_pivot_chain(self, b: int) -> bool:
        return b in self._pivot_pos

    def longest_tip(self) -> int:
        b = self.genesis
        if b is None:
            raise UnknownBlock("empty DAG has no chain")
        while self.children[b]:
            b = min(self.children[b], key=lambda c: (-self.height[c], c))
        return b

    def baseline_chain(self, rule: ChainRule) -> list[int]:
        if rule == "ghost":
            return self.pivot_chain()
        if rule == "longest":
            return self.chain(self.longest_tip())
        raise ValueError(f"unknown chain rule {rule!r}")

    # -- epochs and ordering ---------------------------------------------

    def epochs(self) -> EpochPartition:
        pivot = self.pivot_chain()
        seen: set[int] = set()
        epoch_of: dict[int, int] = {}
        members: dict[int, set[int]] = {}
        for idx, a in enumerate(pivot):
            epoch = self._reach(a, seen)
            seen |= epoch
            members[idx] = epoch
            for x in epoch:
                epoch_of[x] = idx
        return EpochPartition(pivot, epoch_of, members, set(self.blocks) - seen)

    def order_rounds(self, blocks: set[int]) -> list[int]:
        """Topological rounds over ``blocks``; each round sorted by id."""
        remaining: dict[int, int] = {}
        dependents: dict[int, list[int]] = defaultdict(list)
        for x in blocks:
            inner = [p for p in self.blocks[x].predecessors if p in blocks]
            remaining[x] = len(inner)
            for p in inner:
                dependents[p].append(x)
        ready = sorted(x for x, n in remaining.items() if n == 0)
        out: list[int] = []
        while ready:
            out.extend(ready)
            nxt = []
            for x in ready:
                for y in dependents[x]:
                    remaining[y] -= 1
                    if remaining[y] == 0:
                        nxt.append(y)
            ready = sorted(nxt)
        if len(out) != len(blocks):
            raise CyclicReference("epoch contains a cycle")
        return out

    def conflux_order(self, a: int) -> list[int]:
        """Ordered list of every block in or before the epoch of pivot block ``a``."""
        self.block(a)
        path = self.pivot_chain()
        if a not in path:
            raise NotOnPivotChain(f"block {a} is not on the pivot chain")
        seen: set[int] = set()
        out: list[int] = []
        for p in path[: path.index(a) + 1]:
            epoch = self._reach(p, seen)
            seen |= epoch
            out.extend(self.order_rounds(epoch))
        return out

    def total_order(self) -> list[int]:
        """Order up to the pivot tip, then the not-yet-referenced remainder.

        The remainder is ordered as the epoch the next generated pivot block
        would create, since that block references every tip.
        """
        if self.genesis is None:
            return []
        ordered = self.conflux_order(self.pivot())
        rest = set(self.blocks) - set(ordered)
        return ordered + self.order_rounds(rest)


def build_dag(blocks: Sequence[Block], stale: Iterable[int] = ()) -> DagState:
    """Build a state from blocks given in any order."""
    stale = set(stale)
    state = DagState()
    for blk in blocks:
        state.insert_block(blk, stale=blk.id in stale)
    if state.pending:
        missing = sorted(state.pending)
        raise InvalidBlock(f"blocks with incomplete ancestry: {missing[:10]}")
    return state
