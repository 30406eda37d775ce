"""Confirmation risk for pivot-chain blocks.

The attacker mines at rate ``q * lambda_h``. Over the ``t`` seconds since a
pivot block's parent was generated, the number of attacker blocks ``k`` is
Poisson. Given an honest lead of ``n - m - k`` blocks, the attacker overtakes
with probability at most ``q ** (n - m - k + 1)``. The per-sibling bound
averages that over ``k``; the prefix bound takes the worst pair along a chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import gammaln, pdtrc

from .dag import DagState
from .errors import DomainError, NotOnPivotChain

DEFAULT_ASSUMED_Q = 0.25
DEFAULT_TOLERANCE = 1e-4

Decision = Literal["confirmed", "wait"]


@dataclass(frozen=True)
class RiskParams:
    q: float
    lambda_h: float
    t: float
    d: float = 0.0
    epsilon_tail: float = 1e-12

    def __post_init__(self) -> None:
        if not 0.0 <= self.q < 1.0:
            raise DomainError(f"q must lie in [0, 1), got {self.q}")
        if not self.lambda_h > 0.0:
            raise DomainError(f"lambda_h must be positive, got {self.lambda_h}")
        if not self.t >= 0.0:
            raise DomainError(f"t must be non-negative, got {self.t}")
        if not self.d >= 0.0:
            raise DomainError(f"d must be non-negative, got {self.d}")
        if not 0.0 < self.epsilon_tail < 1.0:
            raise DomainError(f"epsilon_tail must lie in (0, 1), got {self.epsilon_tail}")

    @property
    def attacker_mean(self) -> float:
        """Expected attacker blocks over ``t``."""
        return self.q * self.lambda_h * self.t


@dataclass
class RiskReport:
    # sibling None is the withheld sibling scored under private_sibling
    per_sibling: dict[tuple[int, int | None], float] = field(default_factory=dict)
    prefix_bound: float = 0.0
    argmax_pair: tuple[int, int | None] | None = None
    # smallest |Subtree(a)| - |Subtree(a')| over the pairs; diagnostic only
    min_gap: int | None = None


def zeta(k: int, params: RiskParams) -> float:
    """Probability that the attacker mines exactly ``k`` blocks within ``t``."""
    if k < 0:
        raise DomainError("k must be non-negative")
    mu = params.attacker_mean
    if mu == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(mu) - mu - math.lgamma(k + 1))


def zeta_terms(params: RiskParams) -> np.ndarray:
    """Leading terms zeta_0, zeta_1, ... until the remaining mass is below epsilon_tail."""
    mu = params.attacker_mean
    if mu == 0.0:
        return np.ones(1)
    hi = int(mu + 10.0 * math.sqrt(mu) + 40.0)
    while pdtrc(hi, mu) > params.epsilon_tail:
        hi *= 2
    ks = np.arange(hi + 1)
    terms = np.exp(ks * math.log(mu) - mu - gammaln(ks + 1))
    cut = int(np.searchsorted(np.cumsum(terms), 1.0 - params.epsilon_tail)) + 1
    return terms[: min(cut, hi + 1)]


def sibling_kickout_bound(n: int, m: int, params: RiskParams) -> float:
    """Bound on a pivot block being displaced by one sibling.

    ``n`` counts blocks in the pivot block's subtree older than ``d``; ``m``
    counts honest blocks in the sibling's subtree.
    """
    if n < 0 or m < 0:
        raise DomainError("subtree counts must be non-negative")
    gap = n - m
    if gap < 0:
        return 1.0
    mu = params.attacker_mean
    q = params.q
    if mu == 0.0:
        return q ** (gap + 1)
    ks = np.arange(gap + 1)
    log_terms = ks * math.log(mu) - mu - gammaln(ks + 1) + (gap + 1 - ks) * math.log(q)
    head = math.fsum(np.exp(log_terms))
    tail = float(pdtrc(gap, mu))
    return min(1.0, head + tail)


def honest_count(state: DagState, root: int) -> int:
    return sum(1 for x in state.subtree(root) if state.blocks[x].is_honest)


def prefix_risk(
    state: DagState,
    b: int,
    params: RiskParams,
    honest_view: DagState | None = None,
    now: float | None = None,
    private_sibling: bool = False,
) -> RiskReport:
    """Worst sibling bound over the pivot ancestors of ``b``.

    ``honest_view`` is the state known to every honest node (blocks older
    than ``d``); ``n`` is read from it. When ``now`` is given, each pair uses
    the age of the pivot block's parent as ``t``; otherwise ``params.t``.

    Only visible siblings are scored by default, so a chain without forks
    has risk 0. With ``private_sibling`` every ancestor is also scored
    against a withheld sibling holding no honest blocks (``m = 0``), keyed
    ``(a, None)``; an attacker may be mining one the victim cannot see.
    """
    path = state.chain(b)
    if state.pivot_chain()[: len(path)] != path:
        raise NotOnPivotChain(f"block {b} is not on the pivot chain")
    view = state if honest_view is None else honest_view
    report = RiskReport()
    for a in path[1:]:
        siblings: list[int | None] = sorted(state.siblings(a))
        if private_sibling:
            siblings.append(None)
        if not siblings:
            continue
        pair_params = params
        if now is not None:
            parent_time = state.blocks[state.blocks[a].parent].timestamp
            pair_params = replace(params, t=max(0.0, now - parent_time))
        n = view.subtree_weight.get(a, 0)
        for s in siblings:
            m = 0 if s is None else honest_count(state, s)
            bound = sibling_kickout_bound(n, m, pair_params)
            report.per_sibling[(a, s)] = bound
            if report.argmax_pair is None or bound > report.prefix_bound:
                report.prefix_bound = bound
                report.argmax_pair = (a, s)
            gap = state.subtree_size[a] - (0 if s is None else state.subtree_size[s])
            if report.min_gap is None or gap < report.min_gap:
                report.min_gap = gap
    return report


def confirm_decision(report: RiskReport | float, tolerance: float) -> Decision:
    if not 0.0 < tolerance < 1.0:
        raise DomainError(f"tolerance must lie in (0, 1), got {tolerance}")
    bound = report.prefix_bound if isinstance(report, RiskReport) else float(report)
    return "confirmed" if bound < tolerance else "wait"
