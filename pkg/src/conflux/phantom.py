"""Greedy PHANTOM coloring and the liveness attack against its main chain.

PHANTOM has a single edge kind, so a block's parent is treated as one more
reference here. Pasts are kept as integer bitsets indexed by topological
position. A block's blue set ``Blue_k(past(b))`` depends only on its past, so
it is computed once per block and reused by every snapshot of the DAG.

Attack DAG ids: honest block ``b_j`` has id ``j`` (``b_1`` is genesis) and
malicious block ``a_i`` has id ``MALICIOUS_BASE + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dag import ADVERSARY, Block, DagState
from .errors import DomainError, ScheduleInfeasible

MALICIOUS_BASE = 1_000_000


@dataclass
class PhantomColoring:
    k: int
    blue: set[int]
    # |Blue_k(past(b))| for every block
    score: dict[int, int]
    main_chain: list[int]
    # highest-scoring tip of past(b), None for genesis
    selected_parent: dict[int, int | None] = field(default_factory=dict)
    blue_past: dict[int, frozenset[int]] = field(default_factory=dict, repr=False)


class _Index:
    """Topological indexing plus past/future bitsets of a DAG."""

    def __init__(self, state: DagState) -> None:
        self.state = state
        self.ids = list(state.order)
        self.pos = {b: i for i, b in enumerate(self.ids)}
        self.preds = [[self.pos[p] for p in state.blocks[b].predecessors] for b in self.ids]
        n = len(self.ids)
        past = [0] * n
        for i in range(n):
            acc = 0
            for p in self.preds[i]:
                acc |= past[p] | (1 << p)
            past[i] = acc
        future = [0] * n
        for i in range(n - 1, -1, -1):
            for p in self.preds[i]:
                future[p] |= future[i] | (1 << i)
        self.past = past
        self.future = future

    def bits(self, ids: Iterable[int]) -> int:
        acc = 0
        for b in ids:
            acc |= 1 << self.pos[b]
        return acc

    def members(self, mask: int) -> list[int]:
        out = []
        while mask:
            low = mask & -mask
            out.append(self.ids[low.bit_length() - 1])
            mask ^= low
        return out


def _color_past(idx: _Index, k: int, tips: list[int], universe: int, blue_past: list[int], score: list[int]) -> tuple[int, int | None]:
    """Blue set of the subgraph ``universe`` whose maximal blocks are ``tips`` (positions)."""
    if not tips:
        return 0, None
    bmax = min(tips, key=lambda t: (-score[t], idx.ids[t]))
    blue = blue_past[bmax] | (1 << bmax)
    added = 0
    rest = universe & ~idx.past[bmax] & ~(1 << bmax)
    while rest:
        low = rest & -rest
        c = low.bit_length() - 1
        rest ^= low
        anti = universe & ~idx.past[c] & ~idx.future[c] & ~low
        if (anti & blue).bit_count() < k:
            added |= low
    return blue | added, bmax


def _maximal(idx: _Index, candidates: list[int]) -> list[int]:
    covered = 0
    for c in candidates:
        covered |= idx.past[c]
    return [c for c in candidates if not (covered >> c) & 1]


def phantom_color(state: DagState, k: int, view: Iterable[int] | None = None) -> PhantomColoring:
    """Color ``state`` (or the down-closed subset ``view``) with parameter ``k``.

    Blocks in the anticone of the chosen tip are judged against the blue set
    inherited from that tip; they do not see each other's verdicts.
    """
    if k < 0:
        raise DomainError("k must be non-negative")
    idx = _Index(state)
    return _coloring(idx, k, view)


def _coloring(idx: _Index, k: int, view: Iterable[int] | None, cache: tuple[list[int], list[int], list[int | None]] | None = None) -> PhantomColoring:
    n = len(idx.ids)
    if cache is None:
        blue_past = [0] * n
        score = [0] * n
        parent: list[int | None] = [None] * n
        for i in range(n):
            tips = _maximal(idx, idx.preds[i])
            blue_past[i], parent[i] = _color_past(idx, k, tips, idx.past[i], blue_past, score)
            score[i] = blue_past[i].bit_count()
        cache = (blue_past, score, parent)
    blue_past, score, parent = cache
    if view is None:
        universe = (1 << n) - 1
    else:
        universe = idx.bits(view)
        for i in idx.members(universe):
            if idx.past[idx.pos[i]] & ~universe:
                raise DomainError(f"view is not closed under ancestry at block {i}")
    positions = [p for p in range(n) if (universe >> p) & 1]
    blue, top = _color_past(idx, k, _maximal(idx, positions), universe, blue_past, score)
    chain = []
    while top is not None:
        chain.append(idx.ids[top])
        top = parent[top]
    chain.reverse()
    ids = idx.ids
    return PhantomColoring(
        k=k,
        blue=set(idx.members(blue)),
        score={ids[i]: score[i] for i in positions},
        main_chain=chain,
        selected_parent={ids[i]: (None if parent[i] is None else ids[parent[i]]) for i in positions},
        blue_past={ids[i]: frozenset(idx.members(blue_past[i])) for i in positions},
    )


# -- the attack schedule ----------------------------------------------------


def h(n: int) -> int:
    """Honest index paired with malicious block ``n``: ``(n-2)(n-1)/2 + 1``."""
    return (n - 2) * (n - 1) // 2 + 1


def honest_id(j: int) -> int:
    return j


def malicious_id(i: int) -> int:
    return MALICIOUS_BASE + i


@dataclass(frozen=True)
class AttackSchedule:
    k_delta: int
    k_prime: int
    i_max: int

    def __post_init__(self) -> None:
        if self.k_delta < 1 or self.k_prime < 0 or self.i_max < 1:
            raise ScheduleInfeasible("need k_delta >= 1, k_prime >= 0 and i_max >= 1")
        if self.k_delta * (self.k_delta - 7) < 4 * self.k_prime:
            raise ScheduleInfeasible(
                f"k_delta (k_delta - 7) >= 4 k_prime fails for k_delta={self.k_delta}, k_prime={self.k_prime}"
            )

    @property
    def k(self) -> int:
        return self.k_delta + self.k_prime

    @property
    def lag(self) -> int:
        """Honest blocks hidden from each new honest block: the anticone is at most twice this."""
        return self.k_prime // 2

    @property
    def num_honest(self) -> int:
        return h(self.i_max + self.k_delta)

    @property
    def kick_out_from(self) -> int:
        """First malicious index from which the release kicks ``b_2`` out."""
        return 3 * self.k_delta - 14

    def release_index(self, i: int) -> int:
        """``a_i`` is published together with honest block ``b_{h(i - 1 + k_delta)}``."""
        return h(i - 1 + self.k_delta)

    @property
    def h_map(self) -> dict[int, int]:
        return {i: h(i) for i in range(1, self.i_max + 1)}

    @property
    def release_times(self) -> dict[int, int]:
        return {i: self.release_index(i) for i in range(1, self.i_max + 1)}

    def anti_count(self, i: int) -> int:
        """Closed form of ``|anti(a_i) ∩ B|``."""
        return (self.k_delta - 1) * (self.k_delta + 2 * i - 4) // 2


@dataclass
class AttackDag:
    schedule: AttackSchedule
    state: DagState
    labels: dict[int, str]

    @property
    def honest(self) -> list[int]:
        return [honest_id(j) for j in range(1, self.schedule.num_honest + 1)]

    @property
    def malicious(self) -> list[int]:
        return [malicious_id(i) for i in range(1, self.schedule.i_max + 1)]

    def snapshot(self, v: int, released: int) -> set[int]:
        """Blocks ``b_1..b_v`` plus ``a_1..a_released``."""
        return set(range(1, v + 1)) | {malicious_id(i) for i in range(1, released + 1)}


def build_attack_dag(schedule: AttackSchedule) -> AttackDag:
    """Honest blocks ``b_1..b_{h(i_max + k_delta)}`` and malicious ``a_1..a_{i_max}``.

    ``b_j`` sees honest blocks up to ``u = max(2, j - 1 - lag)`` and
    references the honest tips among them, ``b_{u-lag}..b_u``. It sees
    ``a_i`` once ``a_i`` has been published (``j > release_index(i)``).
    ``a_i`` references ``b_1..b_{h_i}`` and ``a_1..a_{i-1}``.
    """
    s = schedule
    lag = s.lag
    state = DagState()
    labels: dict[int, str] = {}
    n_honest = s.num_honest
    mal_ready = 0  # malicious blocks inserted so far
    released = 0  # largest i with release_index(i) < j
    for j in range(1, n_honest + 1):
        # malicious blocks whose honest prefix already exists are mined now
        while mal_ready < s.i_max and h(mal_ready + 1) < j:
            i = mal_ready + 1
            refs = {honest_id(x) for x in range(1, h(i) + 1)} | {malicious_id(y) for y in range(1, i)}
            parent = malicious_id(i - 1) if i > 1 else honest_id(h(i))
            refs.discard(parent)
            state.insert_block(Block(malicious_id(i), parent, frozenset(refs), timestamp=float(j), miner=ADVERSARY))
            labels[malicious_id(i)] = f"a{i}"
            mal_ready = i
        while released < s.i_max and s.release_index(released + 1) < j:
            released += 1
        if j == 1:
            blk = Block(honest_id(1), None, timestamp=1.0, miner="honest")
        else:
            u = 1 if j == 2 else max(2, j - 1 - lag)
            refs = {honest_id(x) for x in range(max(1, u - lag), u + 1)}
            if released and s.release_index(released) >= u:
                refs.add(malicious_id(released))
            parent = honest_id(u)
            refs.discard(parent)
            blk = Block(honest_id(j), parent, frozenset(refs), timestamp=float(j), miner="honest")
        state.insert_block(blk)
        labels[blk.id] = f"b{j}"
    while mal_ready < s.i_max:
        i = mal_ready + 1
        refs = {honest_id(x) for x in range(1, h(i) + 1)} | {malicious_id(y) for y in range(1, i)}
        parent = malicious_id(i - 1) if i > 1 else honest_id(h(i))
        refs.discard(parent)
        state.insert_block(Block(malicious_id(i), parent, frozenset(refs), timestamp=float(n_honest), miner=ADVERSARY))
        labels[malicious_id(i)] = f"a{i}"
        mal_ready = i
    return AttackDag(s, state, labels)


# -- lemma checks and the kick-out run --------------------------------------


@dataclass
class LemmaReport:
    # i -> |anti(a_i) ∩ B| measured on the full DAG
    anti_counts: dict[int, int]
    anti_counts_ok: bool
    # largest |anti(b_j) ∩ A| over honest blocks
    max_honest_anti_malicious: int
    honest_anti_ok: bool
    # largest |anti(b_j) ∩ B| over honest blocks
    max_honest_anti_honest: int
    honest_sync_ok: bool
    coloring_ok: bool
    coloring_failures: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.anti_counts_ok and self.honest_anti_ok and self.honest_sync_ok and self.coloring_ok


def check_lemmas(dag: AttackDag, coloring: PhantomColoring | None = None) -> LemmaReport:
    s = dag.schedule
    idx = _Index(dag.state)
    honest_bits = idx.bits(dag.honest)
    mal_bits = idx.bits(dag.malicious)
    everything = (1 << len(idx.ids)) - 1

    def anti(b: int) -> int:
        p = idx.pos[b]
        return everything & ~idx.past[p] & ~idx.future[p] & ~(1 << p)

    counts = {i: (anti(malicious_id(i)) & honest_bits).bit_count() for i in range(1, s.i_max + 1)}
    counts_ok = all(counts[i] == s.anti_count(i) for i in counts)
    worst_a = max((anti(b) & mal_bits).bit_count() for b in dag.honest)
    worst_b = max((anti(b) & honest_bits).bit_count() for b in dag.honest)
    b2_clean = (anti(honest_id(2)) & honest_bits) == 0 if s.num_honest >= 2 else True
    if coloring is None:
        coloring = _coloring(idx, s.k, None)
    failures = []
    for b in dag.honest:
        want = frozenset(idx.members(idx.past[idx.pos[b]] & honest_bits))
        if coloring.blue_past[b] != want:
            failures.append(b)
    for a in dag.malicious:
        want = frozenset(idx.members(idx.past[idx.pos[a]]))
        if coloring.blue_past[a] != want:
            failures.append(a)
    return LemmaReport(
        anti_counts=counts,
        anti_counts_ok=counts_ok,
        max_honest_anti_malicious=worst_a,
        honest_anti_ok=worst_a < s.k_delta,
        max_honest_anti_honest=worst_b,
        honest_sync_ok=worst_b <= s.k_prime and b2_clean,
        coloring_ok=not failures,
        coloring_failures=failures,
    )


@dataclass
class Checkpoint:
    kind: str  # "honest" (scheduled releases only) or "attack" (a_1..a_w published early)
    index: int  # malicious index i (honest) or w (attack)
    v: int  # highest honest index in the snapshot
    tip: int
    main_chain: list[int]
    through_b2: bool
    through_a1: bool

    @property
    def ok(self) -> bool:
        return self.through_b2 if self.kind == "honest" else self.through_a1 and not self.through_b2


@dataclass
class LivenessResult:
    schedule: AttackSchedule
    k: int
    checkpoints: list[Checkpoint]
    lemmas: LemmaReport

    @property
    def violations(self) -> list[Checkpoint]:
        return [c for c in self.checkpoints if not c.ok]


def run_liveness_attack(
    schedule: AttackSchedule,
    k: int | None = None,
    checkpoints: Sequence[int] | None = None,
    dag: AttackDag | None = None,
) -> LivenessResult:
    """Main chains at the release checkpoints of the schedule.

    For each malicious index ``i`` in ``checkpoints`` (default: all):

    * honest checkpoint at ``v = release_index(i)``: the DAG as the schedule
      publishes it, ``a_i`` arriving together with ``b_v``;
    * attack checkpoint, when ``i >= 3 k_delta - 14``: ``w = i``, the last
      honest index before ``a_{w+1}`` is due (``v = h(w + 1) - 1``), with
      ``a_1..a_w`` published at once.

    The honest checkpoints are expected to run through ``b_2`` and the attack
    checkpoints through ``a_1``.
    """
    s = schedule
    k = s.k if k is None else k
    dag = build_attack_dag(s) if dag is None else dag
    idx = _Index(dag.state)
    full = _coloring(idx, k, None)
    cache = (
        [idx.bits(full.blue_past[b]) for b in idx.ids],
        [full.score[b] for b in idx.ids],
        [None if full.selected_parent[b] is None else idx.pos[full.selected_parent[b]] for b in idx.ids],
    )
    lemmas = check_lemmas(dag, full) if k == s.k else check_lemmas(dag)
    wanted = range(1, s.i_max + 1) if checkpoints is None else checkpoints
    b2, a1 = honest_id(2), malicious_id(1)
    results = []
    for i in wanted:
        if not 1 <= i <= s.i_max:
            raise DomainError(f"checkpoint {i} outside 1..{s.i_max}")
        plans = [("honest", i, s.release_index(i), i)]
        if i >= s.kick_out_from:
            plans.append(("attack", i, h(i + 1) - 1, i))
        for kind, index, v, published in plans:
            if kind == "honest":
                published = max((y for y in range(1, s.i_max + 1) if s.release_index(y) <= v), default=0)
            col = _coloring(idx, k, dag.snapshot(v, published), cache)
            chain = col.main_chain
            results.append(Checkpoint(kind, index, v, chain[-1], chain, b2 in chain, a1 in chain))
    return LivenessResult(s, k, results, lemmas)


# -- success probability ----------------------------------------------------


def _check_k_delta(k_delta: int) -> None:
    if k_delta % 2 or k_delta < 6:
        raise DomainError(f"k_delta must be an even integer >= 6, got {k_delta}")


def liveness_success_bound(q: float, k_delta: int, tail_tol: float = 1e-12) -> float:
    """``(1 - e^{-cq})^{3k_delta-15} * prod_{i >= 3k_delta-14} (1 - e^{-q(i-1)})`` with ``c = 1.5 k_delta - 8``.

    ``q`` is the attacker-to-honest rate ratio. The product stops once the
    geometric tail ``sum_{i>N} e^{-q(i-1)}`` drops below ``tail_tol``; the
    remainder is bounded below by ``1 - tail``, which is folded in.
    """
    if not q > 0 or not math.isfinite(q):
        raise DomainError(f"q must be positive, got {q}")
    _check_k_delta(k_delta)
    c = 1.5 * k_delta - 8
    log_p = (3 * k_delta - 15) * math.log1p(-math.exp(-c * q))
    first = 3 * k_delta - 14
    # tail after index N: e^{-qN} / (1 - e^{-q})
    denom = -math.expm1(-q)
    n_stop = max(first, math.ceil((-math.log(tail_tol) - math.log(denom)) / q) + 1)
    i = np.arange(first, n_stop + 1, dtype=float)
    log_p += math.fsum(np.log1p(-np.exp(-q * (i - 1))))
    tail = math.exp(-q * n_stop) / denom
    return math.exp(log_p) * (1.0 - tail)


def attack_success_probability(q: float, k_delta: int) -> float:
    """Success bound for an attacker holding share ``q`` of all mining power.

    The share is converted to the rate ratio ``q / (1 - q)`` that the product
    formula expects; 15% of the power at ``k_delta = 40`` gives 0.989.
    """
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    return liveness_success_bound(q / (1.0 - q), k_delta)


def race_windows(k_delta: int, count: int) -> list[int]:
    """Honest blocks the attacker may be outpaced by while mining ``a_1..a_count``.

    ``c = 1.5 k_delta - 8`` for the first ``3 k_delta - 15`` blocks, then
    ``h(i+1) - h(i) = i - 1``.
    """
    _check_k_delta(k_delta)
    c = int(1.5 * k_delta - 8)
    return [c if i <= 3 * k_delta - 15 else i - 1 for i in range(1, count + 1)]


def race_success_probability(share: float, k_delta: int, tail_tol: float = 1e-12) -> float:
    """Exact success of the per-block races when each block is a Poisson race.

    A window of ``c`` honest blocks is lost with probability ``(1 - share)^c``.
    """
    if not 0 < share < 1:
        raise DomainError(f"share must lie in (0, 1), got {share}")
    _check_k_delta(k_delta)
    log_honest = math.log1p(-share)
    c = 1.5 * k_delta - 8
    first = 3 * k_delta - 14
    log_p = (3 * k_delta - 15) * math.log1p(-math.exp(c * log_honest))
    i = first
    while True:
        fail = math.exp((i - 1) * log_honest)
        log_p += math.log1p(-fail)
        if fail / share < tail_tol:  # remaining failures sum to at most fail / share
            return math.exp(log_p)
        i += 1


def mining_race_failures(share: float, window: int, trials: int, seed: int = 0) -> float:
    """Monte-Carlo frequency with which ``window`` honest blocks arrive before one attacker block.

    Rates are normalized to a total of 1; honest arrival of the ``window``-th
    block is Gamma distributed and the attacker's first block exponential.
    """
    if not 0 < share < 1 or window < 1 or trials < 1:
        raise DomainError("need 0 < share < 1, window >= 1 and trials >= 1")
    rng = np.random.default_rng(seed)
    honest = rng.gamma(window, 1.0 / (1.0 - share), size=trials)
    attacker = rng.exponential(1.0 / share, size=trials)
    return float(np.mean(honest < attacker))
