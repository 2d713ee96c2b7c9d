"""
Third-party cardinality estimators that produce surrogate values on a cache
miss, and the optimizer's own "system default" estimate.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import networkx as nx
import numpy as np

from .errors import ConfigError, MissingContextError
from .planspace import subplan_key
from .utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class EstimationContext:
    """
    What an estimator may know about the query it estimates for.  ``truth``
    maps canonical subplan keys to true cardinalities and is only needed by
    the reversed estimator.
    """

    query_id: str = ""
    truth: Optional[Dict[Tuple[str, ...], int]] = field(default=None, repr=False)


class CardEst:
    """Base class for cardinality estimators."""

    def __init__(self, spec, catalog):
        self.spec = spec
        self.catalog = catalog

    def __call__(self, subplan, context=None):
        value = self.estimate(subplan, context or EstimationContext())
        if self.spec.noise_sigma > 0:
            value *= self._noise(subplan, context or EstimationContext())
        return value

    def estimate(self, subplan, context):
        raise NotImplementedError()

    def _noise(self, subplan, context):
        rng = np.random.default_rng(
            derive_seed("noise", self.spec.seed, context.query_id, *subplan_key(subplan))
        )
        return float(math.exp(rng.normal(0.0, self.spec.noise_sigma)))


class IndependenceEst(CardEst):
    """
    System-R style estimate: filtered table sizes times one join selectivity
    1 / max(V(R, a), V(S, b)) per edge of a spanning tree of the subplan.
    """

    def estimate(self, subplan, context):
        tables = subplan.tables
        value = 1.0
        for table in tables:
            mask = self.catalog.selection_mask(table, subplan.selections)
            value *= float(mask.sum())
        if len(tables) == 1 or value == 0:
            return value

        graph = nx.Graph()
        graph.add_nodes_from(tables)
        for edge in subplan.joins:
            graph.add_edge(edge.left_table, edge.right_table)
        for u, v in nx.bfs_edges(graph, tables[0], sort_neighbors=sorted):
            for edge in subplan.joins:
                if {edge.left_table, edge.right_table} == {u, v}:
                    value /= max(
                        self.catalog.distinct_count(edge.left_table, edge.left_column),
                        self.catalog.distinct_count(edge.right_table, edge.right_column),
                    )
        return value


class RandEst(CardEst):
    """
    Uniform integer in [rand_low, largest table size], seeded per
    (seed, query, subplan).
    """

    def estimate(self, subplan, context):
        high = max(self.catalog.row_count(t) for t in self.catalog.table_names)
        low = min(self.spec.rand_low, high)
        rng = np.random.default_rng(
            derive_seed("rand_est", self.spec.seed, context.query_id, *subplan_key(subplan))
        )
        return float(rng.integers(low, high + 1))


class ReversedTrueEst(CardEst):
    """
    Hands out the query's true same-k cardinalities in reversed order: the
    subplan with the smallest true value gets the largest one.
    """

    def estimate(self, subplan, context):
        if context.truth is None:
            raise MissingContextError(
                "reversed_tc needs the true cardinalities of the query's subplans"
            )
        key = subplan_key(subplan)
        same_k = sorted(
            (k for k in context.truth if len(k) == len(key)),
            key=lambda k: (context.truth[k], k),
        )
        if key not in same_k:
            raise MissingContextError(
                "no true cardinality for subplan {} in the query context".format("⋈".join(key))
            )
        values = [context.truth[k] for k in same_k]
        return float(values[len(values) - 1 - same_k.index(key)])


class EnsembleEst(CardEst):
    """
    Geometric mean of the member estimates, each taken as at least one row.
    """

    def __init__(self, spec, catalog):
        super().__init__(spec, catalog)
        self.members = [build_estimator(m, catalog) for m in spec.members]

    def estimate(self, subplan, context):
        logs = [math.log(max(member(subplan, context), 1.0)) for member in self.members]
        return float(math.exp(sum(logs) / len(logs)))


_KINDS = {
    "independence": IndependenceEst,
    "rand_est": RandEst,
    "reversed_tc": ReversedTrueEst,
    "ensemble": EnsembleEst,
}


def build_estimator(spec, catalog):
    """
    Returns the estimator object described by an EstimatorSpec.
    """
    if spec.kind not in _KINDS:
        raise ConfigError(
            "invalid estimator kind. expected one of the following: %s" % list(_KINDS)
        )
    spec.validate()
    return _KINDS[spec.kind](spec, catalog)


def surrogate(estimator, subplan, catalog, context=None):
    """
    Returns the surrogate cardinality of ``subplan``.  ``estimator`` may be an
    EstimatorSpec or an already built estimator.
    """
    if not isinstance(estimator, CardEst):
        estimator = build_estimator(estimator, catalog)
    return estimator(subplan, context)
