"""Attacker strategies for the simulator and the double-spend experiment.

The attacker sees every block the moment it is created. Under
``pivot_revert`` it keeps mining on the sibling that is closest to overtaking
a pivot ancestor of the target, withholding its blocks until the victim has
confirmed and the private side is heavier (or the horizon runs out).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

from scipy.stats import beta, binom

from .confirm import RiskParams, prefix_risk
from .dag import ADVERSARY, Block, DagState
from .errors import ConfigInvalid, DomainError
from .simnet import SimConfig, Simulation

Strategy = Literal["pivot_revert", "withhold_release"]
Trigger = Literal["heavier", "horizon"]

# A pair (a, a') where a' is None stands for a sibling of the target that does
# not exist yet; its gap is the target's whole subtree.
Pair = tuple[int, "int | None"]


@dataclass(frozen=True)
class AttackPlan:
    strategy: Strategy = "pivot_revert"
    # None: the first honest block mined after genesis
    target: int | None = None
    withhold_horizon: float = 3600.0
    release_trigger: Trigger = "heavier"

    def __post_init__(self) -> None:
        if self.strategy not in ("pivot_revert", "withhold_release"):
            raise ConfigInvalid(f"unknown strategy {self.strategy!r}")
        if self.release_trigger not in ("heavier", "horizon"):
            raise ConfigInvalid(f"unknown release_trigger {self.release_trigger!r}")
        if not (self.withhold_horizon >= 0 and math.isfinite(self.withhold_horizon)):
            raise ConfigInvalid("withhold_horizon must be finite and non-negative")


def closest_pair(view: DagState, target: int) -> tuple[int, Pair]:
    """Smallest ``S(a) - S(a')`` over the ancestors of ``target`` and their siblings.

    Existing siblings win ties against minting a new one; remaining ties go
    to the smallest ``(a, a')``.
    """
    size = view.subtree_size
    best: tuple[int, int, int, int] = (size[target], 1, target, -1)
    for a in view.chain(target)[1:]:
        for s in view.children[view.blocks[a].parent]:
            if s != a:
                cand = (size[a] - size[s], 0, a, s)
                if cand < best:
                    best = cand
    gap, _, a, s = best
    return gap, (a, None if s < 0 else s)


def attacker_on_mine(view: DagState, plan: AttackPlan, now: float, block_id: int, target: int) -> tuple[Block, Pair | None]:
    """The attacker's next block and, for ``pivot_revert``, the pair it extends."""
    if plan.strategy == "withhold_release":
        return Block(block_id, view.pivot(), timestamp=now, miner=ADVERSARY), None
    _, pair = closest_pair(view, target)
    a, s = pair
    parent = view.blocks[a].parent if s is None else s
    return Block(block_id, parent, timestamp=now, miner=ADVERSARY), pair


def release_policy(
    plan: AttackPlan,
    private_blocks: list[Block],
    view: DagState,
    now: float,
    target: int | None = None,
    armed: bool = True,
) -> list[Block]:
    """Withheld blocks to publish now: all of them or none."""
    if not private_blocks:
        return []
    if now - private_blocks[0].timestamp >= plan.withhold_horizon:
        return list(private_blocks)
    if plan.release_trigger == "heavier" and armed and target is not None:
        size = view.subtree_size
        for a in view.chain(target)[1:]:
            if any(size[s] > size[a] for s in view.siblings(a)):
                return list(private_blocks)
    return []


class Adversary:
    """Stateful attacker plugged into :class:`~conflux.simnet.Simulation`."""

    def __init__(self, plan: AttackPlan, armed: bool = True) -> None:
        self.plan = plan
        self.target = plan.target
        self.armed = armed
        self.private: list[Block] = []
        self.released: list[Block] = []
        # (block id, pair extended) for every block mined, in order
        self.choices: list[tuple[int, Pair | None]] = []

    def observe_honest(self, block: Block) -> None:
        if self.target is None:
            self.target = block.id

    def on_mine(self, view: DagState, now: float, block_id: int) -> Block | None:
        if self.target is None or self.target not in view:
            return None
        blk, pair = attacker_on_mine(view, self.plan, now, block_id, self.target)
        self.private.append(blk)
        self.choices.append((blk.id, pair))
        return blk

    def tick(self, view: DagState, now: float) -> list[Block]:
        out = release_policy(self.plan, self.private, view, now, self.target, self.armed)
        if out:
            self.private = []
            self.released.extend(out)
        return out

    def gap(self, view: DagState) -> int | None:
        if self.target is None or self.target not in view:
            return None
        return closest_pair(view, self.target)[0]


@dataclass
class SeedOutcome:
    seed: int
    confirmed: bool
    confirm_time: float | None
    bound: float | None
    reverted: bool
    revert_time: float | None
    attacker_blocks: int
    end: str


@dataclass
class ExperimentReport:
    runs: int
    confirmed: int
    reverted: int
    frequency: float
    ci_low: float
    ci_high: float
    mean_bound: float
    band_upper: float
    dominated: bool
    confidence: float = 0.99
    outcomes: list[SeedOutcome] = field(default_factory=list, repr=False)


def clopper_pearson(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def run_double_spend(
    config: SimConfig,
    plan: AttackPlan,
    tolerance: float,
    abandon_gap: int = 25,
) -> SeedOutcome:
    """One seeded race: the victim confirms the target, then the attacker tries to revert it.

    ``tolerance >= 1`` confirms as soon as the target sits on the victim's
    pivot chain.
    """
    if not tolerance > 0:
        raise DomainError("tolerance must be positive")
    adversary = Adversary(plan, armed=False)
    params = RiskParams(config.confirm_q, config.lambda_h, 0.0, config.d)
    state = {"confirm_time": None, "bound": None, "revert_time": None, "end": "duration"}

    def watch(sim: Simulation, now: float) -> None:
        target = adversary.target
        if target is None:
            return
        victim = sim.nodes[sim.config.observer].dag
        if state["confirm_time"] is None:
            if not victim.on_pivot_chain(target):
                if target in victim and buried_by(victim, target) > abandon_gap:
                    state["end"] = "lost"
                    sim.stop()
                return
            if tolerance >= 1.0:
                bound = 1.0
            else:
                honest = sim.lagged.advance(now)
                bound = prefix_risk(
                    victim, target, params, honest_view=honest, now=now, private_sibling=True
                ).prefix_bound
                if bound >= tolerance:
                    return
            state["confirm_time"], state["bound"] = now, bound
            adversary.armed = True
            return
        if not any(n.dag.on_pivot_chain(target) for n in sim.nodes):
            state["revert_time"], state["end"] = now, "reverted"
            sim.stop()
            return
        gap = adversary.gap(sim.global_view)
        if gap is not None and gap > abandon_gap:
            state["end"] = "abandoned"
            sim.stop()

    sim = Simulation(config, adversary, after_event=watch)
    sim.run_events()
    return SeedOutcome(
        seed=config.seed,
        confirmed=state["confirm_time"] is not None,
        confirm_time=state["confirm_time"],
        bound=state["bound"],
        reverted=state["revert_time"] is not None,
        revert_time=state["revert_time"],
        attacker_blocks=len(adversary.choices),
        end=state["end"],
    )


def buried_by(state: DagState, b: int) -> int:
    """How far the pivot chain leads ``b``'s branch at the fork (0 if ``b`` is on it)."""
    pivot = state.pivot_chain()
    path = state.chain(b)
    for depth, a in enumerate(path):
        if depth >= len(pivot) or pivot[depth] != a:
            if depth >= len(pivot):
                return 0
            return state.subtree_weight[pivot[depth]] - state.subtree_weight[a]
    return 0


def _run_one(args: tuple[SimConfig, AttackPlan, float, int]) -> SeedOutcome:
    return run_double_spend(*args)


def double_spend_experiment(
    config: SimConfig,
    plan: AttackPlan,
    confirm_tolerance: float,
    seeds: int,
    confidence: float = 0.99,
    abandon_gap: int = 25,
    workers: int | None = None,
) -> ExperimentReport:
    """Repeat :func:`run_double_spend` over seeds ``config.seed .. config.seed + seeds - 1``.

    The frequency counts reversions among runs that confirmed. The band
    upper limit is the ``confidence`` quantile of a binomial with the mean
    analytic bound as success probability, divided by the run count.
    """
    if seeds < 1:
        raise DomainError("seeds must be >= 1")
    config.validate()
    jobs = [(replace(config, seed=config.seed + i), plan, confirm_tolerance, abandon_gap) for i in range(seeds)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_run_one, jobs, chunksize=max(1, seeds // (4 * workers))))
    else:
        outcomes = [_run_one(j) for j in jobs]
    done = [o for o in outcomes if o.confirmed]
    n = len(done)
    k = sum(o.reverted for o in done)
    freq = k / n if n else 0.0
    mean_bound = math.fsum(o.bound for o in done) / n if n else 0.0
    band = float(binom.ppf(confidence, n, min(mean_bound, 1.0))) / n if n else 0.0
    lo, hi = clopper_pearson(k, n, confidence)
    return ExperimentReport(
        runs=len(outcomes),
        confirmed=n,
        reverted=k,
        frequency=freq,
        ci_low=lo,
        ci_high=hi,
        mean_bound=mean_bound,
        band_upper=band,
        dominated=freq <= band,
        confidence=confidence,
        outcomes=outcomes,
    )
