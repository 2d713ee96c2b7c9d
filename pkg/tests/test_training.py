import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
import torch

from plansieve.baseline import confusion, train_baseline_dt
from plansieve.config import ModelConfig, TrainConfig
from plansieve.errors import SingleClassWarning, TrainingError
from plansieve.featurize import build_vocab
from plansieve.l1error import l1_error_k, position_vectors
from plansieve.planspace import OPTIMAL, SUBOPTIMAL, JoinEdge, Query, enumerate_subplans, infer_join_closure
from plansieve.training import (
    LabeledExample,
    augment_permute,
    classify,
    make_example,
    one_cycle,
    split_queries,
    train,
)

from .conftest import AB, AC

MOVIE = Query(
    "q5",
    ("t", "mi", "mc", "ci", "mk"),
    [JoinEdge("t", "id", other, "movie_id") for other in ("mi", "mc", "ci", "mk")],
)
MOVIE_VOCAB = build_vocab(5, table_names=["t", "mi", "mc", "ci", "mk"])
S3_VOCAB = build_vocab(3, table_names=["A", "B", "C"])


def _random_example(query, vocab, rng, label=OPTIMAL, query_id="q", split="train", max_len=None):
    by_k = enumerate_subplans(infer_join_closure(query))
    keys = [s.key for k in by_k for s in by_k[k]]
    truth = dict(zip(keys, (int(v) for v in rng.permutation(len(keys)) + 1)))
    est = dict(zip(keys, (int(v) for v in rng.permutation(len(keys)) + 1)))
    pairs = [position_vectors(by_k[k], truth, est) for k in sorted(by_k)]
    max_len = max_len or 2 * len(keys) + 3
    return make_example(pairs, vocab, max_len, label, query_id, split=split)


def _s3_dataset(labels, seed=0):
    rng = np.random.default_rng(seed)
    s3 = Query("s3", ("A", "B", "C"), (AB, AC))
    return [
        _random_example(s3, S3_VOCAB, rng, label, "q{}".format(i), max_len=16)
        for i, label in enumerate(labels)
    ]


def test_augmented_replicas_keep_the_contract():
    rng = np.random.default_rng(0)
    for trial in range(20):
        original = _random_example(MOVIE, MOVIE_VOCAB, rng, SUBOPTIMAL, "m{}".format(trial), "test")
        replicas = augment_permute(original, MOVIE_VOCAB, 8, seed=trial)
        assert len(replicas) == 8
        assert replicas[0].sequence == original.sequence
        assert [r.replica_id for r in replicas] == list(range(8))
        for replica in replicas:
            assert replica.label == SUBOPTIMAL
            assert replica.split == "test"
            assert replica.query_id == original.query_id
            assert replica.l1_per_k == {p.k: l1_error_k(p) for p in replica.pairs}
            for before, after in zip(original.pairs, replica.pairs):
                assert after.subplans == before.subplans
                assert after.rho_hat == before.rho_hat
                assert sorted(after.rho) == list(range(1, before.n + 1))
                fixed = math.ceil(before.n / 2)
                for r_before, r_after in zip(before.rho, after.rho):
                    if r_before <= fixed:
                        assert r_after == r_before
                if before.n == 1:
                    assert after == before


def test_replicas_are_seeded():
    original = _random_example(MOVIE, MOVIE_VOCAB, np.random.default_rng(1))
    first = augment_permute(original, MOVIE_VOCAB, 4, seed=3)
    second = augment_permute(original, MOVIE_VOCAB, 4, seed=3)
    assert [r.sequence for r in first] == [r.sequence for r in second]


def test_replica_count_edges():
    original = _random_example(MOVIE, MOVIE_VOCAB, np.random.default_rng(2))
    assert augment_permute(original, MOVIE_VOCAB, 0, seed=0) == []
    assert len(augment_permute(original, MOVIE_VOCAB, 1, seed=0)) == 1
    with pytest.raises(ValueError):
        augment_permute(original, MOVIE_VOCAB, -1, seed=0)


def test_example_record_round_trip():
    example = _random_example(MOVIE, MOVIE_VOCAB, np.random.default_rng(3), SUBOPTIMAL, "m", "test")
    assert LabeledExample.from_record(example.to_record()) == example


def test_split_is_seeded_and_sized():
    ids = ["q{:03d}".format(i) for i in range(100)]
    split = split_queries(ids, 0.7, seed=4)
    assert sum(v == "train" for v in split.values()) == 70
    assert split == split_queries(list(reversed(ids)), 0.7, seed=4)
    assert split_queries(["only"], 0.7, seed=0) == {"only": "train"}
    assert split_queries([], 0.7, seed=0) == {}


#####################################################################


def test_empty_dataset_is_rejected(tiny_model_config):
    with pytest.raises(TrainingError):
        train([], tiny_model_config)
    held_out_only = [replace(e, split="test") for e in _s3_dataset([OPTIMAL, SUBOPTIMAL])]
    with pytest.raises(TrainingError):
        train(held_out_only, tiny_model_config)


def test_single_class_training_warns_and_fits(tiny_model_config):
    dataset = _s3_dataset([OPTIMAL] * 12)
    with pytest.warns(SingleClassWarning):
        model, history = train(dataset, tiny_model_config, TrainConfig(epochs=20, learning_rate=1e-2))
    labels, _ = classify(model, dataset)
    assert labels == [OPTIMAL] * 12
    assert history["heldout_accuracy"].max() == 1.0


def test_history_has_one_row_per_epoch(tiny_model_config):
    dataset = _s3_dataset([OPTIMAL, SUBOPTIMAL] * 6)
    dataset = [replace(e, split="test") if i % 4 == 0 else e for i, e in enumerate(dataset)]
    _, history = train(dataset, tiny_model_config, TrainConfig(epochs=3, batch_size=4))
    assert list(history.columns) == ["epoch", "train_loss", "heldout_accuracy", "learning_rate", "seconds"]
    assert history["epoch"].tolist() == [1, 2, 3]
    assert (history["train_loss"] > 0).all()


def test_training_is_deterministic(tiny_model_config):
    dataset = _s3_dataset([OPTIMAL, SUBOPTIMAL] * 6)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        first, first_history = train(dataset, tiny_model_config, cfg)
        second, second_history = train(dataset, tiny_model_config, cfg)
    a, b = first.state_dict(), second.state_dict()
    assert all(torch.equal(a[name], b[name]) for name in a)
    assert first_history["train_loss"].tolist() == second_history["train_loss"].tolist()


K4 = Query(
    "k4",
    ("t0", "t1", "t2", "t3"),
    [JoinEdge("t0", "id", other, "id") for other in ("t1", "t2", "t3")],
)


def _separable_examples(count, seed, train_fraction=0.8):
    """
    Optimal examples have a normalized L1 of at most 0.3, sub-optimal ones
    of at least 0.6.
    """
    rng = np.random.default_rng(seed)
    vocab = build_vocab(4)
    by_k = enumerate_subplans(infer_join_closure(K4))
    keys = [s.key for k in by_k for s in by_k[k]]
    pair_keys = [s.key for s in by_k[2]]
    examples = []
    while len(examples) < count:
        suboptimal = len(examples) % 2 == 1
        truth = dict(zip(keys, (int(v) for v in rng.permutation(len(keys)) + 1)))
        if suboptimal:
            est = dict(zip(keys, (int(v) for v in rng.permutation(len(keys)) + 1)))
        else:
            est = dict(truth)
            a, b = rng.choice(len(pair_keys), size=2, replace=False)
            est[pair_keys[a]], est[pair_keys[b]] = truth[pair_keys[b]], truth[pair_keys[a]]
        pairs = [position_vectors(by_k[k], truth, est) for k in sorted(by_k)]
        label = SUBOPTIMAL if suboptimal else OPTIMAL
        example = make_example(pairs, vocab, 25, label, "k{:03d}".format(len(examples)))
        normalized = example.l1_aggregate / example.l1_scale
        if (suboptimal and normalized >= 0.6) or (not suboptimal and normalized <= 0.3):
            examples.append(example)
    split = split_queries([e.query_id for e in examples], train_fraction, seed)
    return [replace(e, split=split[e.query_id]) for e in examples]


@pytest.mark.slow
def test_separable_dataset_is_learned():
    dataset = _separable_examples(1000, seed=0)
    test_set = [e for e in dataset if e.split == "test"]
    assert len(test_set) == 200
    config = ModelConfig(
        layers=1, heads=2, embed_dim=16, max_len=25, vocab_size=20, mlp_hidden=16, dropout_rate=0.0
    )
    model, _ = train(dataset, config, TrainConfig(epochs=40, batch_size=32, learning_rate=1e-2))
    labels, _ = classify(model, test_set)
    assert confusion(labels, [e.label for e in test_set]).accuracy >= 0.95


def test_baseline_separates_by_l1_alone():
    dataset = _separable_examples(300, seed=1)
    train_set = [e for e in dataset if e.split == "train"]
    test_set = [e for e in dataset if e.split == "test"]
    tree = train_baseline_dt(
        [e.l1_aggregate for e in train_set], [e.label for e in train_set], [1, 2, 3], folds=5
    )
    held_out = confusion(tree.predict([e.l1_aggregate for e in test_set]), [e.label for e in test_set])
    assert held_out.total == 60
    assert held_out.accuracy >= 0.95
    assert tree.predict([0.0, 100.0]) == [OPTIMAL, SUBOPTIMAL]


def _rates(train_cfg, total_steps):
    weight = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.AdamW([weight], lr=train_cfg.learning_rate)
    scheduler = one_cycle(optimizer, train_cfg, total_steps)
    rates = []
    for _ in range(total_steps):
        rates.append(optimizer.param_groups[0]["lr"])
        optimizer.step()
        scheduler.step()
    return np.array(rates)


def test_warmup_is_linear_then_cosine():
    rates = _rates(TrainConfig(learning_rate=1e-2, pct_start=0.3), 100)
    warmup = np.diff(rates[:31])
    assert warmup[0] > 0
    assert np.allclose(warmup, warmup[0])
    assert rates[0] == pytest.approx(1e-2 / 25)
    assert rates[30] == pytest.approx(1e-2)
    assert (np.diff(rates[30:]) <= 0).all()
    assert rates[65] == pytest.approx(1e-2 * (1e-4 + (1 - 1e-4) * 0.5))


def test_linear_anneal_keeps_the_linear_warmup():
    rates = _rates(TrainConfig(learning_rate=1e-2, pct_start=0.3, anneal_strategy="linear"), 100)
    assert np.allclose(np.diff(rates[:31]), np.diff(rates[:31])[0])
    decay = np.diff(rates[30:])
    assert (decay < 0).all()
    assert np.allclose(decay, decay[0])
