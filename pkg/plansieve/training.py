"""
Labeled examples, subplan-permutation augmentation, the query-level split
and the training loop (AdamW with a one-cycle schedule and best-epoch
checkpointing).
"""

import copy
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .errors import SingleClassWarning, TrainingError
from .featurize import TokenSequence, encode_sequence
from .l1error import PositionVectorPair, aggregate_l1, l1_error_k
from .model import collate, init_model, predict_batch
from .planspace import OPTIMAL, SUBOPTIMAL
from .utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledExample:
    """
    One classifier input with its label.  Replicas produced by augmentation
    share ``query_id``, ``label`` and ``split`` and differ in ``replica_id``.
    """

    sequence: TokenSequence
    l1_aggregate: float
    l1_scale: float
    label: str
    query_id: str
    replica_id: int = 0
    split: str = "train"
    l1_per_k: Dict[int, int] = field(default_factory=dict)
    pairs: Optional[Tuple[PositionVectorPair, ...]] = field(default=None, repr=False, compare=False)

    def to_record(self):
        return {
            "query_id": self.query_id,
            "replica_id": self.replica_id,
            "split": self.split,
            "label": self.label,
            "l1_aggregate": self.l1_aggregate,
            "l1_scale": self.l1_scale,
            "l1_per_k": {str(k): v for k, v in sorted(self.l1_per_k.items())},
            "tokens": list(self.sequence.tokens),
            "attention_mask": list(self.sequence.attention_mask),
            "true_length": self.sequence.true_length,
        }

    @classmethod
    def from_record(cls, record):
        sequence = TokenSequence(
            tuple(int(t) for t in record["tokens"]),
            tuple(int(m) for m in record["attention_mask"]),
            int(record["true_length"]),
        )
        return cls(
            sequence=sequence,
            l1_aggregate=float(record["l1_aggregate"]),
            l1_scale=float(record["l1_scale"]),
            label=record["label"],
            query_id=str(record["query_id"]),
            replica_id=int(record["replica_id"]),
            split=record["split"],
            l1_per_k={int(k): int(v) for k, v in (record.get("l1_per_k") or {}).items()},
        )


def make_example(pairs, vocab, max_len, label, query_id, replica_id=0, split="train"):
    """
    Returns the LabeledExample of a query's position-vector pairs.
    """
    pairs = tuple(sorted(pairs, key=lambda p: p.k))
    report = aggregate_l1({p.k: l1_error_k(p) for p in pairs}, sizes={p.k: p.n for p in pairs})
    return LabeledExample(
        sequence=encode_sequence(pairs, vocab, max_len),
        l1_aggregate=report.aggregate,
        l1_scale=report.scale,
        label=label,
        query_id=query_id,
        replica_id=replica_id,
        split=split,
        l1_per_k=dict(report.per_k),
        pairs=pairs,
    )


def _permute_pair(pair, rng, fixed_fraction):
    """
    Keeps the first ceil(fixed_fraction * N_k) subplans of rho in place and
    shuffles the positions of the rest among themselves.
    """
    fixed = math.ceil(fixed_fraction * pair.n)
    if pair.n - fixed < 2:
        return pair
    by_position = sorted(range(pair.n), key=lambda i: pair.rho[i])
    moving = by_position[fixed:]
    positions = [pair.rho[i] for i in moving]
    shuffled = rng.permutation(len(moving))
    rho = list(pair.rho)
    for i, j in zip(moving, shuffled):
        rho[i] = positions[j]
    return replace(pair, rho=tuple(rho))


def augment_permute(example, vocab, r, seed, fixed_fraction=0.5, max_len=None):
    """
    Returns ``r`` examples for one query: the original as replica 0, then
    replicas whose rho has the tail of every join-size group permuted.  rho_hat,
    label and split never change; the L1 features are recomputed.
    """
    if r < 0:
        raise ValueError("replica count must be nonnegative, got {}".format(r))
    if r == 0:
        return []
    if example.pairs is None:
        raise ValueError("example {} carries no position vectors".format(example.query_id))
    max_len = max_len or len(example.sequence.tokens)
    replicas = [replace(example, replica_id=0)]
    for replica in range(1, r):
        rng = np.random.default_rng(derive_seed("augment", seed, example.query_id, replica))
        pairs = [_permute_pair(p, rng, fixed_fraction) for p in example.pairs]
        replicas.append(
            make_example(
                pairs,
                vocab,
                max_len,
                example.label,
                example.query_id,
                replica_id=replica,
                split=example.split,
            )
        )
    return replicas


def split_queries(query_ids, train_fraction, seed):
    """
    Returns ``{query_id: "train" | "test"}`` assigning a seeded
    ``train_fraction`` of the distinct query ids to training.
    """
    ids = sorted(set(query_ids))
    if not ids:
        return {}
    rng = np.random.default_rng(derive_seed("split", seed))
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(round(train_fraction * len(ids)))
    if len(ids) > 1:
        n_train = min(max(n_train, 1), len(ids) - 1)
    else:
        n_train = 1
    train_ids = set(order[:n_train])
    return {qid: ("train" if qid in train_ids else "test") for qid in ids}


#####################################################################


def classify(model, examples, threshold=0.5):
    """
    Returns ``(labels, p_suboptimal)`` for a list of examples.
    """
    probs = predict_batch(model, list(examples))
    labels = [SUBOPTIMAL if p > threshold else OPTIMAL for p in probs]
    return labels, probs


def _accuracy(model, examples, threshold):
    if not examples:
        return float("nan")
    labels, _ = classify(model, examples, threshold)
    return float(np.mean([p == e.label for p, e in zip(labels, examples)]))


_WARMUP_START = 1.0 / 25
_FINAL_FACTOR = 1e-4


def one_cycle(optimizer, train_cfg, total_steps):
    """
    Returns a one-cycle scheduler.  The rate rises linearly from a 25th of
    ``train_cfg.learning_rate`` to the peak over the first ``pct_start`` of
    the steps, then decays to 1e-4 of the peak following ``anneal_strategy``.
    """
    warmup = max(1, int(round(train_cfg.pct_start * total_steps)))
    decay = max(1, total_steps - warmup)

    def factor(step):
        if step < warmup:
            return _WARMUP_START + (1.0 - _WARMUP_START) * step / warmup
        progress = min(1.0, (step - warmup) / decay)
        if train_cfg.anneal_strategy == "linear":
            shape = 1.0 - progress
        else:
            shape = 0.5 * (1.0 + math.cos(math.pi * progress))
        return _FINAL_FACTOR + (1.0 - _FINAL_FACTOR) * shape

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def train(dataset, model_cfg, train_cfg=None):
    """
    Trains a classifier on the examples marked "train" and returns
    ``(model, history)``.

    The returned model is the checkpoint with the best accuracy on the
    "test" examples (on the training examples when there are none); earlier
    epochs win ties.  ``history`` is a DataFrame with one row per epoch.
    """
    train_cfg = train_cfg or TrainConfig()
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    train_set = [e for e in dataset if e.split == "train"]
    held_out = [e for e in dataset if e.split == "test"]
    if not train_set:
        raise TrainingError("dataset has no training examples")
    if not held_out:
        logger.warning("no held-out examples, checkpointing on training accuracy")
        held_out = train_set
    if len({e.label for e in train_set}) < 2:
        warnings.warn(
            "training data holds a single class ({})".format(train_set[0].label),
            SingleClassWarning,
        )

    if train_cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(train_cfg.seed)
    model = init_model(model_cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay
    )
    steps_per_epoch = math.ceil(len(train_set) / train_cfg.batch_size)
    scheduler = one_cycle(optimizer, train_cfg, train_cfg.epochs * steps_per_epoch)
    rng = np.random.default_rng(derive_seed("batches", train_cfg.seed))

    best_accuracy, best_state, rows = -1.0, None, []
    for epoch in range(1, train_cfg.epochs + 1):
        started = time.perf_counter()
        model.train()
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = collate([train_set[i] for i in order[start : start + train_cfg.batch_size]])
            optimizer.zero_grad(set_to_none=True)
            logits = model(batch.tokens, batch.attention_mask, batch.l1)
            loss = F.cross_entropy(logits, batch.labels)
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(float(loss.detach()) * len(batch.labels))

        accuracy = _accuracy(model, held_out, train_cfg.decision_threshold)
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_state = copy.deepcopy(model.state_dict())
        rows.append(
            {
                "epoch": epoch,
                "train_loss": sum(losses) / len(train_set),
                "heldout_accuracy": accuracy,
                "learning_rate": scheduler.get_last_lr()[0],
                "seconds": time.perf_counter() - started,
            }
        )
        logger.info(
            "epoch %d: loss %.4f, held-out accuracy %.4f",
            epoch,
            rows[-1]["train_loss"],
            accuracy,
        )

    model.load_state_dict(best_state)
    model.eval()
    history = pd.DataFrame(rows, columns=["epoch", "train_loss", "heldout_accuracy", "learning_rate", "seconds"])
    history.attrs["best_heldout_accuracy"] = best_accuracy
    return model, history
