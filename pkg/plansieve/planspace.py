"""
The optimizer's plan space: join-predicate closure, connected subplan
enumeration, C_out costing, dynamic-programming plan search and the
sub-optimality label.
"""

import itertools
import logging
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Tuple

import networkx as nx

from .errors import (
    DegenerateCostError,
    IncompleteAssignmentError,
    StructuralError,
    UnknownReferenceError,
)

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
SUBOPTIMAL = "sub-optimal"
LABELS = (OPTIMAL, SUBOPTIMAL)

SELECTION_OPS = ("=", "<", ">", "<=", ">=")
PROVENANCE_TAGS = ("true", "surrogate", "estimated")

# relative tolerance under which two plan costs count as a tie
_COST_RTOL = 1e-9


@dataclass(frozen=True, order=True)
class Selection:
    table: str
    column: str
    op: str
    value: int

    def to_dict(self):
        return {"table": self.table, "col": self.column, "op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, mapping):
        return cls(
            table=mapping["table"],
            column=mapping.get("col", mapping.get("column")),
            op=mapping["op"],
            value=int(mapping["value"]),
        )

    def __str__(self):
        return "{}.{} {} {}".format(self.table, self.column, self.op, self.value)


@dataclass(frozen=True, order=True)
class JoinEdge:
    """
    Equality predicate ``left_table.left_column = right_table.right_column``.
    """

    left_table: str
    left_column: str
    right_table: str
    right_column: str

    def canonical(self):
        if (self.left_table, self.left_column) <= (self.right_table, self.right_column):
            return self
        return JoinEdge(self.right_table, self.right_column, self.left_table, self.left_column)

    def sides(self):
        return (self.left_table, self.left_column), (self.right_table, self.right_column)

    def touches(self, table, others):
        """
        True if the edge links ``table`` to one of ``others``.
        """
        (lt, _), (rt, _) = self.sides()
        return (lt == table and rt in others) or (rt == table and lt in others)

    def oriented(self, table, others):
        """
        Returns the two sides with ``table`` second, or None when the edge does
        not link ``table`` to ``others``.
        """
        left, right = self.sides()
        if right[0] == table and left[0] in others:
            return left, right
        if left[0] == table and right[0] in others:
            return right, left
        return None

    def to_list(self):
        return [self.left_table, self.left_column, self.right_table, self.right_column]

    def __str__(self):
        return "{}.{} = {}.{}".format(*self.to_list())


@dataclass(frozen=True)
class Query:
    """
    A select-project-join query: tables, equality joins and single-column
    selections.
    """

    id: str
    tables: Tuple[str, ...]
    joins: Tuple[JoinEdge, ...] = ()
    selections: Tuple[Selection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "joins", tuple(self.joins))
        object.__setattr__(self, "selections", tuple(self.selections))

    @classmethod
    def from_dict(cls, mapping):
        """
        Returns a Query from the workload line layout
        ``{id, tables, joins: [[t1, c1, t2, c2], ...], selections: [{table, col, op, value}]}``.
        """
        return cls(
            id=str(mapping["id"]),
            tables=tuple(mapping["tables"]),
            joins=tuple(JoinEdge(*j) for j in mapping.get("joins", [])),
            selections=tuple(Selection.from_dict(s) for s in mapping.get("selections", [])),
        )

    def to_dict(self):
        return {
            "id": self.id,
            "tables": list(self.tables),
            "joins": [j.to_list() for j in self.joins],
            "selections": [s.to_dict() for s in self.selections],
        }

    def validate(self):
        """
        Checks that every referenced table is listed and every comparison is
        supported.
        """
        listed = set(self.tables)
        if len(listed) != len(self.tables):
            raise UnknownReferenceError("query {} lists a table twice".format(self.id))
        for edge in self.joins:
            for table, column in edge.sides():
                if table not in listed:
                    raise UnknownReferenceError(
                        "query {} joins on {}.{} but {} is not among its tables".format(
                            self.id, table, column, table
                        )
                    )
            if edge.left_table == edge.right_table:
                raise StructuralError(
                    "query {} has a join predicate within table {}".format(self.id, edge.left_table)
                )
        for sel in self.selections:
            if sel.table not in listed:
                raise UnknownReferenceError(
                    "query {} selects on {}.{} but {} is not among its tables".format(
                        self.id, sel.table, sel.column, sel.table
                    )
                )
            if sel.op not in SELECTION_OPS:
                raise UnknownReferenceError(
                    "invalid comparison '{}' in query {}. expected one of the following: {}".format(
                        sel.op, self.id, list(SELECTION_OPS)
                    )
                )
        return self


@dataclass(frozen=True)
class Subplan:
    """
    A connected set of tables of a query together with the selections and
    (closed) join predicates that apply inside it.  Two subplans with the same
    table set are the same subplan; ``key`` is the canonical identity.
    """

    tables: Tuple[str, ...]
    selections: Tuple[Selection, ...] = ()
    joins: Tuple[JoinEdge, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(sorted(self.tables)))
        object.__setattr__(self, "selections", tuple(sorted(self.selections)))
        object.__setattr__(self, "joins", tuple(sorted(self.joins)))
        if not self.tables:
            raise StructuralError("a subplan needs at least one table")

    @property
    def k(self):
        return len(self.tables)

    @property
    def key(self):
        return self.tables

    def __str__(self):
        return "⋈".join(self.tables)


def subplan_key(subplan):
    """
    Returns the canonical key of a Subplan, or of an iterable of table names.
    """
    if isinstance(subplan, Subplan):
        return subplan.key
    return tuple(sorted(subplan))


class JoinGraph:
    """
    The transitivity-closed join graph of a query.  Tables are adjacent when
    they hold columns of the same column-equivalence class.
    """

    def __init__(self, query, classes, graph):
        self.query = query
        self.tables = tuple(sorted(query.tables))
        self.classes = classes
        self.graph = graph

    def __repr__(self):
        return "JoinGraph({}, {} edges)".format(self.query.id, self.graph.number_of_edges())

    def edges(self):
        return sorted(tuple(sorted(e)) for e in self.graph.edges())

    def adjacent(self, left, right):
        return self.graph.has_edge(left, right)

    def is_connected(self, tables):
        tables = list(tables)
        if len(tables) == 1:
            return True
        return nx.is_connected(self.graph.subgraph(tables))

    def closed_joins(self, tables):
        """
        Returns every equality predicate implied between the given tables.
        """
        inside = set(tables)
        edges = set()
        for members in self.classes:
            cols = sorted(m for m in members if m[0] in inside)
            for (lt, lc), (rt, rc) in itertools.combinations(cols, 2):
                if lt != rt:
                    edges.add(JoinEdge(lt, lc, rt, rc).canonical())
        return tuple(sorted(edges))

    def subplan(self, tables):
        """
        Returns the Subplan of this query over ``tables``.
        """
        tables = subplan_key(tables)
        unknown = set(tables) - set(self.tables)
        if unknown:
            raise UnknownReferenceError(
                "tables {} are not part of query {}".format(sorted(unknown), self.query.id)
            )
        selections = tuple(s for s in self.query.selections if s.table in tables)
        return Subplan(tables=tables, selections=selections, joins=self.closed_joins(tables))


def infer_join_closure(query):
    """
    Returns the JoinGraph of ``query`` after closing its join predicates under
    transitivity.  Raises StructuralError when the closed graph is disconnected.
    """
    query.validate()
    columns = nx.Graph()
    for edge in query.joins:
        left, right = edge.sides()
        columns.add_edge(left, right)
    classes = sorted(
        (frozenset(c) for c in nx.connected_components(columns)), key=lambda c: sorted(c)
    )
    tables = nx.Graph()
    tables.add_nodes_from(sorted(query.tables))
    for members in classes:
        owners = sorted({t for t, _ in members})
        tables.add_edges_from(itertools.combinations(owners, 2))
    if not nx.is_connected(tables):
        parts = [sorted(p) for p in nx.connected_components(tables)]
        raise StructuralError(
            "query {} has a disconnected join graph {}; cross products are unsupported".format(
                query.id, sorted(parts)
            )
        )
    return JoinGraph(query, classes, tables)


def _as_graph(query_or_graph):
    if isinstance(query_or_graph, JoinGraph):
        return query_or_graph
    return infer_join_closure(query_or_graph)


def enumerate_subplans(graph, min_k=2):
    """
    Returns ``{k: [Subplan, ...]}`` with every connected table subset of size
    ``min_k``..T, each listed once, in lexicographic order of the sorted tables.
    """
    graph = _as_graph(graph)
    by_k = {}
    for k in range(min_k, len(graph.tables) + 1):
        subsets = [
            combo for combo in itertools.combinations(graph.tables, k) if graph.is_connected(combo)
        ]
        if subsets:
            by_k[k] = [graph.subplan(combo) for combo in subsets]
    return by_k


def all_subplans(graph):
    """
    Returns the enumerated subplans of every join size as one flat list.
    """
    by_k = enumerate_subplans(graph)
    return [s for k in sorted(by_k) for s in by_k[k]]


#####################################################################


class Leaf:
    """Scan of a single table."""

    def __init__(self, subplan):
        self.subplan = subplan

    @property
    def tables(self):
        return self.subplan.tables

    def subplans(self):
        yield self.subplan

    def internal_subplans(self):
        return iter(())

    def shape(self):
        return self.subplan.tables[0]

    def __eq__(self, other):
        return isinstance(other, (Leaf, Join)) and self.shape() == other.shape()

    def __hash__(self):
        return hash(self.shape())

    def __str__(self):
        return self.subplan.tables[0]

    __repr__ = __str__


class Join:
    """Binary join of two disjoint, connected subtrees."""

    def __init__(self, left, right, subplan):
        if set(left.tables) & set(right.tables):
            raise StructuralError(
                "join children overlap on {}".format(sorted(set(left.tables) & set(right.tables)))
            )
        self.left = left
        self.right = right
        self.subplan = subplan

    @property
    def tables(self):
        return self.subplan.tables

    def subplans(self):
        yield from self.left.subplans()
        yield from self.right.subplans()
        yield self.subplan

    def internal_subplans(self):
        yield from self.left.internal_subplans()
        yield from self.right.internal_subplans()
        yield self.subplan

    def shape(self):
        return (self.left.shape(), self.right.shape())

    def __eq__(self, other):
        return isinstance(other, (Leaf, Join)) and self.shape() == other.shape()

    def __hash__(self):
        return hash(self.shape())

    def __str__(self):
        return "({}⋈{})".format(self.left, self.right)

    __repr__ = __str__


def build_plan(graph, shape):
    """
    Returns the PlanTree for a nested-tuple shape such as (("A", "B"), "C").
    """
    if isinstance(shape, str):
        return Leaf(graph.subplan((shape,)))
    left = build_plan(graph, shape[0])
    right = build_plan(graph, shape[1])
    tables = left.tables + right.tables
    if not graph.is_connected(tables):
        raise StructuralError("plan node {} is not connected".format("+".join(sorted(tables))))
    return Join(left, right, graph.subplan(tables))


class CardinalityAssignment:
    """
    Cardinality per canonical subplan, each tagged with where it came from:
    "true", "surrogate" or "estimated".
    """

    def __init__(self, values=None, provenance=None):
        self.values = {}
        self.provenance = {}
        for key, value in (values or {}).items():
            tag = (provenance or {}).get(subplan_key(key), "estimated")
            self.set(key, value, tag)

    @classmethod
    def from_function(cls, subplans, func, tag="estimated"):
        assignment = cls()
        for subplan in subplans:
            assignment.set(subplan, func(subplan), tag)
        return assignment

    def set(self, subplan, value, tag="estimated"):
        if tag not in PROVENANCE_TAGS:
            raise ValueError(
                "invalid provenance tag. expected one of the following: %s" % list(PROVENANCE_TAGS)
            )
        if value < 0:
            raise ValueError("cardinality of {} is negative".format(subplan_key(subplan)))
        key = subplan_key(subplan)
        self.values[key] = value
        self.provenance[key] = tag

    def __getitem__(self, subplan):
        key = subplan_key(subplan)
        try:
            return self.values[key]
        except KeyError:
            raise IncompleteAssignmentError(
                "no cardinality for subplan {}".format("⋈".join(key))
            ) from None

    def __contains__(self, subplan):
        return subplan_key(subplan) in self.values

    def __len__(self):
        return len(self.values)

    def tag(self, subplan):
        return self.provenance[subplan_key(subplan)]

    def scaled(self, factor):
        return CardinalityAssignment(
            {k: v * factor for k, v in self.values.items()}, dict(self.provenance)
        )


#####################################################################


def cost_plan(plan, cards):
    """
    Returns the C_out cost of a plan: the sum of the cardinalities of its
    internal join nodes.  Leaves cost nothing.
    """
    return sum(cards[s] for s in plan.internal_subplans())


def _better(cost, best):
    return best is None or cost < best - _COST_RTOL * max(abs(cost), abs(best))


def optimize(graph, cards, left_deep=False):
    """
    Returns the minimum-C_out plan under ``cards`` found by dynamic
    programming over connected subsets.  Bushy trees are allowed unless
    ``left_deep`` is set.  Among equal-cost splits the one whose left table set
    is lexicographically smallest wins.
    """
    graph = _as_graph(graph)
    best = {(t,): (0.0, Leaf(graph.subplan((t,)))) for t in graph.tables}
    by_k = enumerate_subplans(graph)
    for k in sorted(by_k):
        for subplan in by_k[k]:
            tables = subplan.tables
            splits = sorted(
                left
                for size in range(1, k)
                for left in itertools.combinations(tables, size)
            )
            best_cost, best_plan = None, None
            for left in splits:
                right = tuple(t for t in tables if t not in left)
                if left_deep and len(right) != 1:
                    continue
                if left not in best or right not in best:
                    continue
                cost = best[left][0] + best[right][0] + cards[subplan]
                if _better(cost, best_cost):
                    best_cost = cost
                    best_plan = Join(best[left][1], best[right][1], subplan)
            if best_plan is not None:
                best[tables] = (best_cost, best_plan)
    return best[graph.tables][1]


PlanEvaluation = namedtuple(
    "PlanEvaluation", ["chosen_plan", "optimal_plan", "chosen_cost", "optimal_cost", "p_error"]
)


def evaluate_plans(query, est, truth, left_deep=False):
    """
    Returns the plan picked under the estimates, the plan picked under the
    truth, both of their true costs and the resulting P-error.
    """
    graph = _as_graph(query)
    chosen = optimize(graph, est, left_deep=left_deep)
    optimal = optimize(graph, truth, left_deep=left_deep)
    chosen_cost = cost_plan(chosen, truth)
    optimal_cost = cost_plan(optimal, truth)
    if optimal_cost == 0:
        if chosen_cost == 0:
            ratio = 1.0
        else:
            raise DegenerateCostError(
                "query {}: optimal plan costs 0 but the chosen plan costs {}".format(
                    graph.query.id, chosen_cost
                )
            )
    else:
        ratio = max(1.0, chosen_cost / optimal_cost)
    return PlanEvaluation(chosen, optimal, chosen_cost, optimal_cost, ratio)


def p_error(query, est, truth, left_deep=False):
    """
    Returns the true cost of the plan chosen under ``est`` divided by the true
    cost of the plan chosen under ``truth``.
    """
    return evaluate_plans(query, est, truth, left_deep=left_deep).p_error


def label_from_p_error(ratio, cfg):
    if ratio > cfg.c * (1.0 + cfg.eps):
        return SUBOPTIMAL
    return OPTIMAL


def label(query, est, truth, cfg, left_deep=False):
    """
    Returns "sub-optimal" when the P-error exceeds ``cfg.c`` beyond the
    relative tolerance ``cfg.eps``, else "optimal".
    """
    return label_from_p_error(p_error(query, est, truth, left_deep=left_deep), cfg)
