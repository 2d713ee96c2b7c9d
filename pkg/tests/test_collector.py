import numpy as np
import pytest

from plansieve.catalog import execute_query, true_cardinality
from plansieve.collector import (
    PATTERN_KINDS,
    CardinalityCollector,
    ingest_log,
    lookup,
    make_pattern,
)
from plansieve.config import CollectorConfig, EstimatorSpec
from plansieve.data_export import write_cache
from plansieve.data_loaders import read_cache
from plansieve.errors import ConfigError, MissingContextError
from plansieve.estimators import CardEst, EstimationContext, build_estimator, surrogate
from plansieve.l1error import position_vectors
from plansieve.planspace import (
    CardinalityAssignment,
    JoinEdge,
    Query,
    Selection,
    Subplan,
    all_subplans,
    build_plan,
    infer_join_closure,
)

TABLES = ("mk", "mi", "t")
INFO = Selection("mi", "info", "=", 1)


def _q(*selections):
    return Subplan(TABLES, tuple(selections))


Q1 = _q(INFO, Selection("t", "year", ">", 2000))
Q2 = _q(INFO, Selection("t", "year", ">", 1990))
Q3 = _q(INFO)
Q4 = _q(Selection("t", "year", ">", 2005))
Q5 = _q()
OBSERVED = [(Q1, 25700), (Q2, 35300), (Q3, 58300), (Q4, 157000000), (Q5, 235400000)]


class ConstEst(CardEst):
    def estimate(self, subplan, context):
        return 7.0


@pytest.fixture
def const_est():
    return ConstEst(EstimatorSpec(), None)


def test_pattern_kinds():
    assert str(make_pattern(Q1, "join_only")) == "mi⋈mk⋈t"
    assert str(make_pattern(Q1, "selection_aware")) == "mi_σ⋈mk⋈t_σ"
    assert make_pattern(Q5, "selection_aware").selection_signature == ()
    assert str(make_pattern(Q5, "selection_aware")) == str(make_pattern(Q5, "join_only"))
    assert make_pattern(Q1, "exact") != make_pattern(Q2, "exact")
    assert make_pattern(Q1, "selection_aware") == make_pattern(Q2, "selection_aware")
    with pytest.raises(ValueError):
        make_pattern(Q1, "fuzzy")


def test_running_means_over_five_observations():
    cache = CardinalityCollector().ingest(OBSERVED)
    join_only = cache.entry(make_pattern(Q1, "join_only"))
    assert join_only.observation_count == 5
    assert join_only.total == 392519300
    assert join_only.mean_cardinality == 78503860
    assert cache.entry(make_pattern(Q1, "selection_aware")).mean_cardinality == 30500
    assert cache.stats()["entries"] == {"exact": 5, "selection_aware": 4, "join_only": 1}


def test_same_observation_twice():
    cache = CardinalityCollector().ingest([(Q1, 100), (Q1, 100)])
    entry = cache.entry(make_pattern(Q1, "exact"))
    assert entry.observation_count == 2
    assert entry.mean_cardinality == 100
    assert entry.last_updated == 2


def test_recency_policy_weights_the_newest_value():
    cache = CardinalityCollector(CollectorConfig(policy="recency", alpha=0.25))
    cache.ingest([(Q1, 100), (Q1, 200)])
    assert cache.entry(make_pattern(Q1, "exact")).mean_cardinality == pytest.approx(125.0)


def test_negative_observation_is_rejected():
    with pytest.raises(ValueError):
        CardinalityCollector().ingest([(Q1, -1)])


def test_lookup_precedence(const_est):
    cache = CardinalityCollector().ingest([(Q1, 25700)])
    assert cache.lookup(Q1, const_est, None).source == "exact_hit"
    assert cache.lookup(Q2, const_est, None).source == "selection_aware_hit"
    found = cache.lookup(Q4, const_est, None)
    assert found.source == "join_only_hit"
    assert found.value == 25700
    assert found.from_cache


def test_miss_falls_back_to_surrogate_without_caching(const_est):
    cache = CardinalityCollector()
    found = lookup(cache, Q1, const_est, None)
    assert found.source == "surrogate"
    assert found.value == 7.0
    assert not found.from_cache
    assert len(cache) == 0
    assert cache.stats()["lookups"]["surrogate"] == 1


def test_cache_file_round_trip(tmp_path):
    cache = CardinalityCollector().ingest(OBSERVED + [(Q1, 3), (Q3, 11)])
    path = str(tmp_path / "cache.jsonl")
    write_cache(cache, path)
    loaded = read_cache(path)
    assert loaded.to_records() == cache.to_records()
    assert loaded.entries == cache.entries
    assert loaded.stats()["sequence"] == cache.stats()["sequence"]


def test_fuzzed_ingest_and_lookup(const_est):
    rng = np.random.default_rng(5)
    tables = ["a", "b", "c", "d"]
    universe = []
    for size in (2, 3):
        for start in range(len(tables) - size + 1):
            group = tuple(tables[start : start + size])
            for value in (None, 1, 2):
                selections = () if value is None else (Selection(group[0], "v", "=", value),)
                universe.append(Subplan(group, selections))

    cache = CardinalityCollector()
    observed = {}
    for _ in range(1000):
        subplan = universe[int(rng.integers(len(universe)))]
        if rng.random() < 0.5:
            value = int(rng.integers(0, 10000))
            cache.ingest([(subplan, value)])
            for kind in PATTERN_KINDS:
                observed.setdefault(make_pattern(subplan, kind), []).append(value)
            for kind in PATTERN_KINDS:
                assert cache.entry(make_pattern(subplan, kind)) is not None
        else:
            found = cache.lookup(subplan, const_est, None)
            exact = make_pattern(subplan, "exact")
            if exact in observed:
                assert found.source == "exact_hit"
                assert found.value == sum(observed[exact]) / len(observed[exact])
            elif make_pattern(subplan, "selection_aware") in observed:
                assert found.source == "selection_aware_hit"
            elif make_pattern(subplan, "join_only") in observed:
                assert found.source == "join_only_hit"
            else:
                assert found.source == "surrogate"

    for pattern, values in observed.items():
        entry = cache.entry(pattern)
        assert entry.total == sum(values)
        assert entry.observation_count == len(values)
        assert entry.mean_cardinality == sum(values) / len(values)


def test_complete_logs_converge_to_truth(s3_catalog, s3_query, const_est):
    graph = infer_join_closure(s3_query)
    subplans = all_subplans(graph)
    truth = {s.key: true_cardinality(s3_catalog, s) for s in subplans}
    cache = CardinalityCollector()
    for shape in [(("A", "B"), "C"), (("A", "C"), "B"), (("B", "C"), "A")]:
        ingest_log(cache, execute_query(s3_catalog, build_plan(graph, shape), s3_query.id))

    looked_up = {}
    for subplan in subplans:
        found = cache.lookup(subplan, const_est, s3_catalog)
        assert found.source == "exact_hit"
        assert found.value == truth[subplan.key]
        looked_up[subplan.key] = found.value
    pair = position_vectors([s for s in subplans if s.k == 2], looked_up, truth)
    assert pair.rho == pair.rho_hat


#####################################################################


def test_independence_on_fk_join_equals_truth(s3_catalog):
    graph = infer_join_closure(Query("ab", ("A", "B"), (JoinEdge("A", "id", "B", "aid"),)))
    subplan = graph.subplan(("A", "B"))
    estimator = build_estimator(EstimatorSpec(kind="independence"), s3_catalog)
    assert estimator(subplan) == pytest.approx(300.0)
    assert true_cardinality(s3_catalog, subplan) == 300


def test_independence_uses_selection_frequencies(s3_catalog):
    subplan = Subplan(("A",), (Selection("A", "x", "<", 30),))
    expected = int((s3_catalog.column("A", "x") < 30).sum())
    assert surrogate(EstimatorSpec(kind="independence"), subplan, s3_catalog) == expected


def test_reversed_true_cardinalities():
    estimator = build_estimator(EstimatorSpec(kind="reversed_tc"), None)
    context = EstimationContext("q", {("mk", "t"): 1, ("ci", "mk"): 10, ("ci", "mk", "t"): 4})
    assert estimator(Subplan(("mk", "t")), context) == 10
    assert estimator(Subplan(("ci", "mk")), context) == 1
    assert estimator(Subplan(("ci", "mk", "t")), context) == 4
    with pytest.raises(MissingContextError):
        estimator(Subplan(("mk", "t")))


def test_random_estimates_are_seeded(s3_catalog):
    subplan = Subplan(("A", "B"))
    context = EstimationContext("q")
    first = build_estimator(EstimatorSpec(kind="rand_est", seed=3), s3_catalog)
    second = build_estimator(EstimatorSpec(kind="rand_est", seed=3), s3_catalog)
    value = first(subplan, context)
    assert value == second(subplan, context)
    assert 1 <= value <= 300


def test_noise_is_seeded_per_subplan(s3_catalog):
    subplan = Subplan(("A",), (Selection("A", "x", "<", 30),))
    spec = EstimatorSpec(kind="independence", seed=4, noise_sigma=1.0)
    first = build_estimator(spec, s3_catalog)(subplan, EstimationContext("q"))
    second = build_estimator(spec, s3_catalog)(subplan, EstimationContext("q"))
    assert first == second
    assert first > 0


def test_ensemble_takes_geometric_mean(s3_catalog):
    spec = EstimatorSpec(
        kind="ensemble",
        members=[EstimatorSpec(kind="independence"), EstimatorSpec(kind="independence", seed=9)],
    )
    subplan = Subplan(("A",))
    assert build_estimator(spec, s3_catalog)(subplan) == pytest.approx(100.0)
    with pytest.raises(ConfigError):
        build_estimator(EstimatorSpec(kind="ensemble"), s3_catalog)


def test_surrogates_are_independent_of_the_cache(s3_catalog):
    cache = CardinalityCollector()
    spec = EstimatorSpec(kind="rand_est", seed=1)
    subplan = Subplan(("A", "C"))
    values = {cache.lookup(subplan, spec, s3_catalog, EstimationContext("q")).value for _ in range(3)}
    assert len(values) == 1
    assert len(cache) == 0


def test_assignment_from_lookups(s3_catalog, s3_query, const_est):
    graph = infer_join_closure(s3_query)
    cache = CardinalityCollector()
    values = CardinalityAssignment.from_function(
        all_subplans(graph), lambda s: cache.lookup(s, const_est, s3_catalog).value, tag="surrogate"
    )
    assert all(values.tag(s) == "surrogate" for s in all_subplans(graph))
