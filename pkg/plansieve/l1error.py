"""
Position vectors and the L1-error between the true and the estimated
ordering of a query's subplans, per join size and aggregated.
"""

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import IncompleteAssignmentError
from .planspace import subplan_key


@dataclass(frozen=True)
class PositionVectorPair:
    """
    Orderings of the same N_k subplans of one join size.  ``rho[i]`` and
    ``rho_hat[i]`` are the 1-based positions of ``subplans[i]`` when sorted
    ascending by the true-like and the estimated cardinalities.
    """

    k: int
    subplans: Tuple[object, ...]
    rho: Tuple[int, ...]
    rho_hat: Tuple[int, ...]

    @property
    def n(self):
        return len(self.subplans)

    def in_rho_order(self):
        """Returns the subplans sorted by their position in rho."""
        return [s for _, s in sorted(zip(self.rho, self.subplans), key=lambda p: p[0])]

    def in_rho_hat_order(self):
        return [s for _, s in sorted(zip(self.rho_hat, self.subplans), key=lambda p: p[0])]


def default_weight(k):
    """
    Returns 2^-(k-2): two-way joins weigh 1 and each further level half as much.
    """
    return 2.0 ** -(k - 2)


@dataclass(frozen=True)
class L1Report:
    per_k: Dict[int, int]
    weights: Dict[int, float]
    aggregate: float
    sizes: Dict[int, int] = field(default_factory=dict)

    @property
    def scale(self):
        """
        The largest aggregate attainable for these group sizes.
        """
        return l1_scale(self.sizes, self.weights)

    @property
    def normalized(self):
        scale = self.scale
        return self.aggregate / scale if scale else 0.0

    def to_dict(self):
        return {
            "per_k": {str(k): v for k, v in sorted(self.per_k.items())},
            "weights": {str(k): v for k, v in sorted(self.weights.items())},
            "sizes": {str(k): v for k, v in sorted(self.sizes.items())},
            "aggregate": self.aggregate,
        }


def _value(cards, subplan):
    key = subplan_key(subplan)
    if isinstance(cards, Mapping):
        if key not in cards:
            raise IncompleteAssignmentError(
                "no cardinality for subplan {}".format("⋈".join(key))
            ) from None
        return cards[key]
    return cards[subplan]


def _positions(subplans, cards):
    values = [_value(cards, s) for s in subplans]
    order = sorted(range(len(subplans)), key=lambda i: (values[i], subplan_key(subplans[i])))
    positions = [0] * len(subplans)
    for rank, i in enumerate(order, start=1):
        positions[i] = rank
    return tuple(positions)


def position_vectors(subplans_k, truth_like, est):
    """
    Returns the PositionVectorPair of one join size.  Both sorts are ascending
    by cardinality with ties broken by the canonical subplan key.
    """
    subplans = tuple(sorted(subplans_k, key=subplan_key))
    sizes = {len(subplan_key(s)) for s in subplans}
    k = sizes.pop() if len(sizes) == 1 else 0
    return PositionVectorPair(
        k=k,
        subplans=subplans,
        rho=_positions(subplans, truth_like),
        rho_hat=_positions(subplans, est),
    )


def l1_error_k(pair):
    """
    Returns the sum of absolute position differences of one join size.
    """
    if not pair.n:
        return 0
    return int(np.abs(np.asarray(pair.rho) - np.asarray(pair.rho_hat)).sum())


def l1_scale(sizes, weights=None):
    """
    Returns the sum over join sizes of w_k * floor(N_k^2 / 2).
    """
    weights = weights or {}
    return float(
        sum(weights.get(k, default_weight(k)) * (n * n // 2) for k, n in sizes.items())
    )


def aggregate_l1(per_k, weight=default_weight, sizes=None):
    """
    Returns the L1Report weighting each join size's L1 by ``weight(k)``.
    """
    per_k = {int(k): int(v) for k, v in per_k.items()}
    weights = {k: float(weight(k)) for k in sorted(per_k)}
    aggregate = float(sum(weights[k] * per_k[k] for k in sorted(per_k)))
    return L1Report(
        per_k=per_k,
        weights=weights,
        aggregate=aggregate,
        sizes={int(k): int(v) for k, v in (sizes or {}).items()},
    )


def query_l1(subplans_by_k, truth_like, est, weight=default_weight):
    """
    Returns ``(pairs, report)`` for every join size of a query.
    """
    pairs = [position_vectors(subplans_by_k[k], truth_like, est) for k in sorted(subplans_by_k)]
    report = aggregate_l1(
        {p.k: l1_error_k(p) for p in pairs}, weight=weight, sizes={p.k: p.n for p in pairs}
    )
    return pairs, report


def displaced_subplans(pairs, top=5):
    """
    Returns ``(subplan, displacement)`` for the ``top`` subplans whose estimated
    position is furthest from their true position, most displaced first.
    Subplans that sit in the right place are left out.
    """
    rows = []
    for pair in pairs:
        for subplan, r, r_hat in zip(pair.subplans, pair.rho, pair.rho_hat):
            if r != r_hat:
                rows.append((subplan, abs(r - r_hat)))
    rows.sort(key=lambda row: (-row[1], len(subplan_key(row[0])), subplan_key(row[0])))
    return rows[:top]
