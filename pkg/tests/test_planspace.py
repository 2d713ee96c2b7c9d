import itertools

import numpy as np
import pytest

from plansieve.config import SubOptConfig
from plansieve.errors import DegenerateCostError, IncompleteAssignmentError, StructuralError
from plansieve.planspace import (
    OPTIMAL,
    SUBOPTIMAL,
    CardinalityAssignment,
    JoinEdge,
    Query,
    all_subplans,
    build_plan,
    cost_plan,
    enumerate_subplans,
    evaluate_plans,
    infer_join_closure,
    label,
    label_from_p_error,
    optimize,
    p_error,
)

from .conftest import AB, AC

S3_TRUTH = {("A", "B"): 300, ("A", "C"): 200, ("B", "C"): 60000, ("A", "B", "C"): 600}


def _movie_query():
    joins = [JoinEdge("t", "id", other, "movie_id") for other in ("mi", "mc", "ci", "mk")]
    return Query("q5", ("t", "mi", "mc", "ci", "mk"), joins)


def _chain(n):
    names = ["T{}".format(i) for i in range(n)]
    joins = [
        JoinEdge(names[i], "id", names[i + 1], "ref{}".format(i)) for i in range(n - 1)
    ]
    return Query("chain{}".format(n), names, joins)


def test_transitive_closure_connects_all_movie_tables():
    graph = infer_join_closure(_movie_query())
    assert len(graph.edges()) == 10
    assert graph.adjacent("mi", "mk")


def test_shared_key_closes_triangle():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    assert graph.edges() == [("A", "B"), ("A", "C"), ("B", "C")]


def test_distinct_classes_do_not_close():
    query = Query("c", ("A", "B", "C"), (JoinEdge("A", "id", "B", "aid"), JoinEdge("B", "x", "C", "y")))
    graph = infer_join_closure(query)
    assert graph.edges() == [("A", "B"), ("B", "C")]
    by_k = enumerate_subplans(graph)
    assert [s.key for s in by_k[2]] == [("A", "B"), ("B", "C")]
    assert [s.key for s in by_k[3]] == [("A", "B", "C")]


def test_disconnected_query_raises():
    with pytest.raises(StructuralError):
        infer_join_closure(Query("x", ("A", "B")))


def test_closed_subplan_carries_implied_join():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    assert graph.subplan(("B", "C")).joins == (JoinEdge("B", "aid", "C", "aid"),)


def test_enumeration_counts():
    by_k = enumerate_subplans(infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC))))
    assert {k: len(v) for k, v in by_k.items()} == {2: 3, 3: 1}
    by_k = enumerate_subplans(infer_join_closure(_movie_query()))
    assert {k: len(v) for k, v in by_k.items()} == {2: 10, 3: 10, 4: 5, 5: 1}


def test_enumeration_is_canonical():
    subplans = all_subplans(infer_join_closure(_movie_query()))
    keys = [s.key for s in subplans]
    assert len(keys) == len(set(keys))
    for k in range(2, 6):
        same_k = [key for key in keys if len(key) == k]
        assert same_k == sorted(same_k)


def test_cost_of_left_deep_plan():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    cards = CardinalityAssignment({("A", "B"): 10, ("A", "B", "C"): 4})
    assert cost_plan(build_plan(graph, (("A", "B"), "C")), cards) == 14
    assert cost_plan(build_plan(graph, "A"), cards) == 0


def test_cost_of_bushy_plan():
    graph = infer_join_closure(_chain(4))
    cards = CardinalityAssignment(
        {("T0", "T1"): 10, ("T2", "T3"): 7, ("T0", "T1", "T2", "T3"): 3}
    )
    assert cost_plan(build_plan(graph, (("T0", "T1"), ("T2", "T3"))), cards) == 20


def test_cost_with_missing_cardinality_names_subplan():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    cards = CardinalityAssignment({("A", "B"): 10})
    with pytest.raises(IncompleteAssignmentError, match="A⋈B⋈C"):
        cost_plan(build_plan(graph, (("A", "B"), "C")), cards)


def test_disconnected_plan_node_is_rejected():
    graph = infer_join_closure(_chain(3))
    with pytest.raises(StructuralError):
        build_plan(graph, (("T0", "T2"), "T1"))


def test_optimizer_joins_cheapest_pair_first():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    plan = optimize(graph, CardinalityAssignment(S3_TRUTH))
    assert plan.shape() == (("A", "C"), "B")
    assert cost_plan(plan, CardinalityAssignment(S3_TRUTH)) == 800


def test_optimizer_on_two_tables():
    graph = infer_join_closure(Query("ab", ("A", "B"), (AB,)))
    cards = CardinalityAssignment({("A", "B"): 42})
    plan = optimize(graph, cards)
    assert plan.shape() == ("A", "B")
    assert cost_plan(plan, cards) == 42


def test_equal_costs_prefer_smallest_left_side():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    cards = CardinalityAssignment({("A", "B"): 5, ("A", "C"): 5, ("B", "C"): 5, ("A", "B", "C"): 1})
    assert optimize(graph, cards).shape() == ("A", ("B", "C"))


def test_left_deep_restriction():
    graph = infer_join_closure(_chain(4))
    cards = CardinalityAssignment.from_function(
        all_subplans(graph), lambda s: 1000 if s.k == 3 else 1
    )
    assert optimize(graph, cards).shape() == (("T0", "T1"), ("T2", "T3"))
    left_deep = optimize(graph, cards, left_deep=True)
    assert isinstance(left_deep.shape()[1], str)


#####################################################################


def _random_query(rng, n):
    names = ["R{}".format(i) for i in range(n)]
    edges = set()
    for i in range(1, n):
        edges.add((int(rng.integers(i)), i))
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.3:
            edges.add((i, j))
    joins = [JoinEdge(names[i], "to_" + names[j], names[j], "to_" + names[i]) for i, j in sorted(edges)]
    return Query("r", names, joins)


def _exhaustive_min(graph, cards):
    connected = {s.key for s in all_subplans(graph)} | {(t,) for t in graph.tables}
    memo = {}

    def costs(tables):
        if len(tables) == 1:
            return {0}
        if tables in memo:
            return memo[tables]
        out = set()
        for size in range(1, len(tables)):
            for left in itertools.combinations(tables, size):
                right = tuple(t for t in tables if t not in left)
                if left not in connected or right not in connected:
                    continue
                for lc in costs(left):
                    for rc in costs(right):
                        out.add(lc + rc + cards[tables])
        memo[tables] = out
        return out

    return min(costs(graph.tables))


def test_dynamic_program_matches_exhaustive_search():
    rng = np.random.default_rng(7)
    for _ in range(200):
        graph = infer_join_closure(_random_query(rng, int(rng.integers(2, 6))))
        cards = CardinalityAssignment.from_function(
            all_subplans(graph), lambda s: int(rng.integers(1, 1000))
        )
        plan = optimize(graph, cards)
        assert cost_plan(plan, cards) == _exhaustive_min(graph, cards)


def test_p_error_is_at_least_one():
    rng = np.random.default_rng(11)
    for _ in range(100):
        graph = infer_join_closure(_random_query(rng, int(rng.integers(2, 6))))
        subplans = all_subplans(graph)
        truth = CardinalityAssignment.from_function(subplans, lambda s: int(rng.integers(1, 1000)), "true")
        est = CardinalityAssignment.from_function(subplans, lambda s: int(rng.integers(1, 1000)))
        assert p_error(graph, est, truth) >= 1.0
        assert p_error(graph, truth, truth) == 1.0
        assert label(graph, truth, truth, SubOptConfig()) == OPTIMAL


def test_global_scaling_keeps_the_label():
    rng = np.random.default_rng(3)
    for _ in range(50):
        graph = infer_join_closure(_random_query(rng, 4))
        subplans = all_subplans(graph)
        truth = CardinalityAssignment.from_function(subplans, lambda s: int(rng.integers(1, 1000)), "true")
        est = CardinalityAssignment.from_function(subplans, lambda s: int(rng.integers(1, 1000)))
        assert p_error(graph, est.scaled(10), truth) == p_error(graph, est, truth)
        assert label(graph, est.scaled(10), truth, SubOptConfig()) == label(
            graph, est, truth, SubOptConfig()
        )


def test_swapped_estimates_give_suboptimal_plan():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    truth = CardinalityAssignment(S3_TRUTH)
    swapped = dict(S3_TRUTH)
    swapped[("A", "C")], swapped[("B", "C")] = S3_TRUTH[("B", "C")], S3_TRUTH[("A", "C")]
    evaluation = evaluate_plans(graph, CardinalityAssignment(swapped), truth)
    assert evaluation.chosen_plan.shape() == ("A", ("B", "C"))
    assert evaluation.p_error == pytest.approx(60600 / 800)
    assert label(graph, CardinalityAssignment(swapped), truth, SubOptConfig()) == SUBOPTIMAL


def test_label_threshold_and_tolerance():
    cfg = SubOptConfig(c=1, eps=1e-9)
    assert label_from_p_error(1.0, cfg) == OPTIMAL
    assert label_from_p_error(1.37, cfg) == SUBOPTIMAL
    assert label_from_p_error(1.0 + 1e-12, cfg) == OPTIMAL
    assert label_from_p_error(1.5, SubOptConfig(c=2)) == OPTIMAL


def test_zero_cost_plans():
    graph = infer_join_closure(Query("s3", ("A", "B", "C"), (AB, AC)))
    zeros = CardinalityAssignment({key: 0 for key in S3_TRUTH})
    assert p_error(graph, zeros, zeros) == 1.0

    truth = CardinalityAssignment({("A", "B"): 0, ("A", "C"): 5, ("B", "C"): 5, ("A", "B", "C"): 0})
    est = CardinalityAssignment({("A", "B"): 100, ("A", "C"): 1, ("B", "C"): 100, ("A", "B", "C"): 1})
    with pytest.raises(DegenerateCostError):
        p_error(graph, est, truth)
    with pytest.raises(ZeroDivisionError):
        p_error(graph, est, truth)


def test_assignment_rejects_negative_values():
    with pytest.raises(ValueError):
        CardinalityAssignment({("A", "B"): -1})
