"""Deterministic discrete-event simulation of nodes running the main loop.

Mining is one global Poisson process of rate ``lambda``. Each mining event is
won by the attacker with probability ``q / (1 + q)`` and otherwise by a
uniformly chosen honest node. Honest blocks are delivered directly to every
other honest node after a sampled delay of at most ``d``; a node buffers any
block whose ancestry is still missing.

Randomness comes from :class:`random.Random` (MT19937) instances seeded with
the strings ``"conflux/<seed>/<stream>"`` for the streams ``mine``,
``delay``, ``id`` and ``tx``. String seeding is hashed with SHA-512 by the
standard library, so a seed yields the same trace on every platform.
"""

from __future__ import annotations

import heapq
import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Literal, Protocol

from .confirm import RiskParams, honest_count, sibling_kickout_bound
from .dag import GENESIS_MINER, Block, DagState
from .errors import ConfigInvalid
from .ledger import Transaction

Rule = Literal["conflux", "ghost", "longest"]
DelayModel = Literal["constant", "uniform", "matrix"]
StaleVerdict = Literal["ok", "stale"]

GENESIS_ID = 0

_MINE, _DELIVER, _CHECK = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    num_nodes: int = 10
    lambda_: float = 0.1
    attacker_q: float = 0.0
    delay_model: DelayModel = "uniform"
    d: float = 10.0
    delay_matrix: tuple[tuple[float, ...], ...] | None = None
    block_size_txs: int = 0
    duration: float = 3600.0
    seed: int = 0
    rule: Rule = "conflux"
    stale_window: int = 11
    stale_future: float = 7200.0
    confirm_q: float = 0.25
    confirm_tolerance: float = 1e-4
    # seconds between confirmation checks at the observer; 0 turns tracking off
    confirm_interval: float = 0.0
    observer: int = 0

    def validate(self) -> SimConfig:
        problems = []
        if self.num_nodes < 1:
            problems.append("num_nodes must be >= 1")
        if not self.lambda_ > 0:
            problems.append("lambda must be > 0")
        if not 0 <= self.attacker_q < 1:
            problems.append("attacker_q must lie in [0, 1)")
        if self.delay_model not in ("constant", "uniform", "matrix"):
            problems.append(f"unknown delay_model {self.delay_model!r}")
        if not self.d >= 0:
            problems.append("d must be >= 0")
        if self.delay_model == "matrix":
            m = self.delay_matrix
            if m is None or len(m) != self.num_nodes or any(len(r) != self.num_nodes for r in m):
                problems.append("delay_matrix must be num_nodes x num_nodes")
            elif any(not 0 <= x <= self.d for r in m for x in r):
                problems.append("delay_matrix entries must lie in [0, d]")
        if self.block_size_txs < 0:
            problems.append("block_size_txs must be >= 0")
        if not self.duration > 0:
            problems.append("duration must be > 0")
        if self.rule not in ("conflux", "ghost", "longest"):
            problems.append(f"unknown rule {self.rule!r}")
        if self.stale_window < 1:
            problems.append("stale_window must be >= 1")
        if not self.stale_future >= 0:
            problems.append("stale_future must be >= 0")
        if not 0 <= self.confirm_q < 1:
            problems.append("confirm_q must lie in [0, 1)")
        if not 0 < self.confirm_tolerance < 1:
            problems.append("confirm_tolerance must lie in (0, 1)")
        if not self.confirm_interval >= 0:
            problems.append("confirm_interval must be >= 0")
        if not 0 <= self.observer < max(self.num_nodes, 1):
            problems.append("observer must name an honest node")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    @property
    def lambda_h(self) -> float:
        return self.lambda_ / (1.0 + self.attacker_q)

    @property
    def attacker_share(self) -> float:
        return self.attacker_q / (1.0 + self.attacker_q)

    def to_dict(self) -> dict[str, Any]:
        out = {("lambda" if k == "lambda_" else k): v for k, v in asdict(self).items()}
        if self.delay_matrix is not None:
            out["delay_matrix"] = [list(r) for r in self.delay_matrix]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SimConfig:
        data = dict(data)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        if data.get("delay_matrix") is not None:
            data["delay_matrix"] = tuple(tuple(float(x) for x in r) for r in data["delay_matrix"])
        return cls(**data)


@dataclass
class NodeState:
    id: int
    dag: DagState
    receipt_time: dict[int, float] = field(default_factory=dict)
    rule: Rule = "conflux"
    stale_window: int = 11
    stale_future: float = 7200.0

    @classmethod
    def fresh(cls, node_id: int, genesis: Block, **kw: Any) -> NodeState:
        node = cls(node_id, DagState(genesis), **kw)
        node.receipt_time[genesis.id] = genesis.timestamp
        return node


def genesis_block() -> Block:
    return Block(GENESIS_ID, None, timestamp=0.0, miner=GENESIS_MINER)


def stale_check(node: NodeState, block: Block, network_time: float) -> StaleVerdict:
    """Timestamp rule: too far in the future, or older than the recent pivot median."""
    if block.timestamp > network_time + node.stale_future:
        return "stale"
    recent = node.dag._pivot[-node.stale_window :]
    median = statistics.median(node.dag.blocks[x].timestamp for x in recent)
    return "stale" if block.timestamp < median else "ok"


def node_on_receive(node: NodeState, block: Block, now: float) -> list[int]:
    """Merge a delivered block. Returns the ids to relay (newly valid blocks)."""
    if node.dag.knows(block.id):
        return []
    stale = stale_check(node, block, now) == "stale"
    valid = node.dag.insert_block(block, stale=stale)
    for bid in valid:
        node.receipt_time[bid] = now
    return valid


def node_on_generate(
    node: NodeState, now: float, block_id: int, transactions: tuple[Transaction, ...] = ()
) -> Block:
    dag = node.dag
    if node.rule == "longest":
        parent, refs = dag.longest_tip(), frozenset()
    elif node.rule == "ghost":
        parent, refs = dag.pivot(), frozenset()
    else:
        parent = dag.pivot()
        refs = frozenset(dag._tips - {parent})
    blk = Block(block_id, parent, refs, transactions, now, miner=str(node.id))
    dag.insert_block(blk)
    node.receipt_time[blk.id] = now
    return blk


class LaggedView:
    """The part of a node's DAG older than ``lag`` seconds.

    Blocks are fed as the node validates them and enter the view once their
    timestamp falls behind ``now - lag``.
    """

    def __init__(self, genesis: Block, lag: float) -> None:
        self.dag = DagState(genesis)
        self.lag = lag
        self._queue: list[tuple[float, int, Block, bool]] = []

    def feed(self, block: Block, stale: bool = False) -> None:
        heapq.heappush(self._queue, (block.timestamp, block.id, block, stale))

    def advance(self, now: float) -> DagState:
        cutoff = now - self.lag
        while self._queue and self._queue[0][0] <= cutoff:
            _, _, blk, stale = heapq.heappop(self._queue)
            if not self.dag.knows(blk.id):
                self.dag.insert_block(blk, stale=stale)
        return self.dag


class Attacker(Protocol):
    """What the simulator needs from an adversary strategy."""

    def observe_honest(self, block: Block) -> None: ...

    def on_mine(self, view: DagState, now: float, block_id: int) -> Block | None: ...

    def tick(self, view: DagState, now: float) -> list[Block]: ...


class ConfirmationTracker:
    """Confirms pivot-chain prefixes at one node and records first-confirmation latency.

    Each pivot block is scored against its visible siblings and a withheld
    sibling with no honest blocks. Confirmation only ever extends from the
    frontier: blocks already confirmed are not re-evaluated on later checks.
    """

    def __init__(self, config: SimConfig, genesis: Block, view: LaggedView) -> None:
        self.params = RiskParams(config.confirm_q, config.lambda_h, 0.0, config.d)
        self.tolerance = config.confirm_tolerance
        self.view = view
        self.confirmed_pivot: list[int] = [genesis.id]
        self.running_max = 0.0
        self.latency: dict[int, float] = {}
        self.confirmed_at: dict[int, float] = {}
        self._seen: set[int] = {genesis.id}
        self.reversions: list[tuple[float, int]] = []

    def check(self, node: NodeState, now: float) -> None:
        dag = node.dag
        honest_view = self.view.advance(now)
        pivot = dag._pivot
        keep = 0
        while keep < len(self.confirmed_pivot) and keep < len(pivot) and pivot[keep] == self.confirmed_pivot[keep]:
            keep += 1
        if keep < len(self.confirmed_pivot):
            for lost in self.confirmed_pivot[keep:]:
                self.reversions.append((now, lost))
            del self.confirmed_pivot[keep:]
            self.running_max = 0.0
        while len(self.confirmed_pivot) < len(pivot):
            a = pivot[len(self.confirmed_pivot)]
            parent_time = dag.blocks[dag.blocks[a].parent].timestamp
            params = replace(self.params, t=max(0.0, now - parent_time))
            n = honest_view.subtree_weight.get(a, 0)
            # m = 0 stands for a sibling the attacker may be withholding
            worst = max(self.running_max, sibling_kickout_bound(n, 0, params))
            for s in dag.siblings(a):
                worst = max(worst, sibling_kickout_bound(n, honest_count(dag, s), params))
            if worst >= self.tolerance:
                return
            self.running_max = worst
            self.confirmed_pivot.append(a)
            epoch = dag._reach(a, self._seen)
            self._seen |= epoch
            for x in epoch:
                if x not in self.latency:
                    self.latency[x] = now - dag.blocks[x].timestamp
                    self.confirmed_at[x] = now


@dataclass
class SimTrace:
    config: SimConfig
    blocks: list[Block]
    final_orders: dict[int, list[int]]
    metrics: dict[str, Any]
    epoch_of: dict[int, int] = field(default_factory=dict)
    confirm_latency: dict[int, float] = field(default_factory=dict)
    reversions: list[tuple[float, int]] = field(default_factory=list)
    nodes: list[NodeState] = field(default_factory=list, repr=False)


class Simulation:
    """One run of the event loop.

    ``after_event(sim, now)`` is called after every processed event and may
    call :meth:`stop`.
    """

    def __init__(
        self,
        config: SimConfig,
        adversary: Attacker | None = None,
        after_event: Callable[[Simulation, float], None] | None = None,
    ) -> None:
        self.config = config.validate()
        self.adversary = adversary
        self.after_event = after_event
        tag = f"conflux/{config.seed}"
        self.rng_mine = random.Random(f"{tag}/mine")
        self.rng_delay = random.Random(f"{tag}/delay")
        self.rng_id = random.Random(f"{tag}/id")
        self.rng_tx = random.Random(f"{tag}/tx")
        self.genesis = genesis_block()
        self.nodes = [
            NodeState.fresh(
                i,
                self.genesis,
                rule=config.rule,
                stale_window=config.stale_window,
                stale_future=config.stale_future,
            )
            for i in range(config.num_nodes)
        ]
        # zero-delay union of every block ever created (honest and private)
        self.global_view = DagState(self.genesis) if adversary is not None else None
        self.all_blocks: list[Block] = [self.genesis]
        self.generated_at: dict[int, int | str] = {}
        # the observer's honest view: its blocks older than d
        self.lagged = LaggedView(self.genesis, config.d)
        self.tracker = (
            ConfirmationTracker(config, self.genesis, self.lagged) if config.confirm_interval > 0 else None
        )
        self.now = 0.0
        self.relays = 0
        self._used_ids = {GENESIS_ID}
        self._events: list[tuple[float, int, int, Any, Any]] = []
        self._seq = 0
        self._stopped = False

    # -- plumbing ---------------------------------------------------------

    def _push(self, time: float, kind: int, a: Any = None, b: Any = None) -> None:
        heapq.heappush(self._events, (time, self._seq, kind, a, b))
        self._seq += 1

    def stop(self) -> None:
        self._stopped = True

    def new_block_id(self) -> int:
        while True:
            bid = self.rng_id.getrandbits(64)
            if bid not in self._used_ids:
                self._used_ids.add(bid)
                return bid

    def _delay(self, src: int, dst: int) -> float:
        cfg = self.config
        if cfg.delay_model == "constant":
            return cfg.d
        if cfg.delay_model == "uniform":
            return self.rng_delay.uniform(0.0, cfg.d)
        return cfg.delay_matrix[src][dst]

    def _transactions(self, miner: int) -> tuple[Transaction, ...]:
        k = self.config.block_size_txs
        if k == 0:
            return ()
        rng = self.rng_tx
        txs = [Transaction(rng.getrandbits(64), "coinbase", f"acct{miner}", 50)]
        for _ in range(k - 1):
            payer = f"acct{rng.randrange(self.config.num_nodes)}"
            payee = f"acct{rng.randrange(self.config.num_nodes)}"
            txs.append(Transaction(rng.getrandbits(64), "transfer", payee, rng.randint(1, 20), payer))
        return tuple(txs)

    # -- event handlers ---------------------------------------------------

    def _on_mine(self, now: float) -> None:
        cfg = self.config
        attacker_wins = self.rng_mine.random() < cfg.attacker_share
        winner = self.rng_mine.randrange(cfg.num_nodes)
        if attacker_wins:
            if self.adversary is not None:
                blk = self.adversary.on_mine(self.global_view, now, self.new_block_id())
                if blk is not None:
                    self.global_view.insert_block(blk)
                    self.all_blocks.append(blk)
        else:
            node = self.nodes[winner]
            blk = node_on_generate(node, now, self.new_block_id(), self._transactions(winner))
            self.all_blocks.append(blk)
            if winner == cfg.observer:
                self.lagged.feed(blk)
            if self.global_view is not None:
                self.global_view.insert_block(blk)
                self.adversary.observe_honest(blk)
            for j in range(cfg.num_nodes):
                if j != winner:
                    self._push(now + self._delay(winner, j), _DELIVER, j, blk)
        if self.adversary is not None:
            for blk in self.adversary.tick(self.global_view, now):
                for j in range(cfg.num_nodes):
                    self._push(now, _DELIVER, j, blk)

    def _on_deliver(self, now: float, j: int, blk: Block) -> None:
        node = self.nodes[j]
        valid = node_on_receive(node, blk, now)
        self.relays += len(valid)
        if j == self.config.observer:
            for bid in valid:
                self.lagged.feed(node.dag.blocks[bid], bid in node.dag.stale)

    # -- main loop --------------------------------------------------------

    def run(self) -> SimTrace:
        self.run_events()
        return self.trace()

    def run_events(self) -> None:
        """Process events until the queue drains or :meth:`stop` is called."""
        cfg = self.config
        self._push(self.rng_mine.expovariate(cfg.lambda_), _MINE)
        if self.tracker is not None:
            self._push(cfg.confirm_interval, _CHECK)
        while self._events and not self._stopped:
            now, _, kind, a, b = heapq.heappop(self._events)
            self.now = now
            if kind == _MINE:
                if now > cfg.duration:
                    continue
                self._on_mine(now)
                self._push(now + self.rng_mine.expovariate(cfg.lambda_), _MINE)
            elif kind == _DELIVER:
                self._on_deliver(now, a, b)
            else:
                self.tracker.check(self.nodes[cfg.observer], now)
                if len(self._events) > 0:
                    self._push(now + cfg.confirm_interval, _CHECK)
            if self.after_event is not None:
                self.after_event(self, now)

    def trace(self) -> SimTrace:
        cfg = self.config
        observer = self.nodes[cfg.observer]
        dag = observer.dag
        orders = {n.id: n.dag.total_order() for n in self.nodes}
        partition = dag.epochs()
        honest = [b for b in self.all_blocks[1:] if b.is_honest]
        honest_ids = {b.id for b in honest}

        def ratio(ids: list[int]) -> float:
            if not honest_ids:
                return 1.0
            return sum(1 for x in ids if x in honest_ids) / len(honest_ids)

        chain_ratio = {"ghost": ratio(dag.pivot_chain()), "longest": ratio(dag.baseline_chain("longest"))}
        ordered = ratio(orders[cfg.observer])
        utilization = ordered if cfg.rule == "conflux" else chain_ratio[cfg.rule]
        metrics: dict[str, Any] = {
            "blocks": len(self.all_blocks),
            "honest_blocks": len(honest),
            "attacker_blocks": len(self.all_blocks) - 1 - len(honest),
            "utilization": utilization,
            "chain_ratio": chain_ratio,
            "in_order": ordered,
            "in_pivot_epochs": ratio(list(partition.epoch_of)),
            "fork_points": sum(1 for c in dag.children.values() if len(c) > 1),
            "stale_blocks": len(dag.stale),
            "relays": self.relays,
            "converged": len({tuple(o) for o in orders.values()}) == 1,
            "end_time": self.now,
        }
        latency: dict[int, float] = {}
        reversions: list[tuple[float, int]] = []
        if self.tracker is not None:
            latency = dict(self.tracker.latency)
            reversions = list(self.tracker.reversions)
            metrics["confirmation"] = summarize([latency[x] for x in latency if x in honest_ids])
            metrics["pivot_reversions"] = len(reversions)
        return SimTrace(
            config=cfg,
            blocks=list(self.all_blocks),
            final_orders=orders,
            metrics=metrics,
            epoch_of=partition.epoch_of,
            confirm_latency=latency,
            reversions=reversions,
            nodes=self.nodes,
        )


def summarize(values: list[float]) -> dict[str, float | int | None]:
    """Count, mean and the min/p25/median/p75/max spread of ``values``."""
    if not values:
        return {"count": 0, "mean": None, "min": None, "p25": None, "median": None, "p75": None, "max": None}
    xs = sorted(values)
    q1, q2, q3 = statistics.quantiles(xs, n=4, method="inclusive") if len(xs) > 1 else (xs[0],) * 3
    return {
        "count": len(xs),
        "mean": math.fsum(xs) / len(xs),
        "min": xs[0],
        "p25": q1,
        "median": q2,
        "p75": q3,
        "max": xs[-1],
    }


def run(config: SimConfig, adversary: Attacker | None = None) -> SimTrace:
    return Simulation(config, adversary).run()
