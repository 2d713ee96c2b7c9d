"""
The cardinality collector: a pattern-keyed cache of true cardinalities
learned from execution logs, answering lookups with the most specific
cached value and falling back to a surrogate estimator on a miss.
"""

import logging
import threading
from collections import Counter
from dataclasses import dataclass, replace
from typing import Tuple

from .config import CollectorConfig
from .errors import ConfigError
from .estimators import CardEst, build_estimator
from .planspace import subplan_key

logger = logging.getLogger(__name__)

# most specific first; this is also the lookup precedence
PATTERN_KINDS = ("exact", "selection_aware", "join_only")
SOURCES = ("exact_hit", "selection_aware_hit", "join_only_hit", "surrogate")
_HIT = dict(zip(PATTERN_KINDS, SOURCES))


@dataclass(frozen=True)
class Pattern:
    kind: str
    table_set: Tuple[str, ...]
    selection_signature: Tuple = ()

    def to_dict(self):
        return {
            "kind": self.kind,
            "table_set": list(self.table_set),
            "selection_signature": [
                list(s) if isinstance(s, tuple) else s for s in self.selection_signature
            ],
        }

    @classmethod
    def from_dict(cls, mapping):
        signature = tuple(
            tuple(s) if isinstance(s, list) else s for s in mapping["selection_signature"]
        )
        return cls(mapping["kind"], tuple(mapping["table_set"]), signature)

    def __str__(self):
        if self.kind == "join_only":
            return "⋈".join(self.table_set)
        if self.kind == "selection_aware":
            marked = set(self.selection_signature)
            return "⋈".join(t + "_σ" if t in marked else t for t in self.table_set)
        preds = ", ".join("{}.{} {} {}".format(*s) for s in self.selection_signature)
        return "{} [{}]".format("⋈".join(self.table_set), preds)


def make_pattern(subplan, kind):
    """
    Returns the cache pattern of ``subplan`` at one level of generality.

    exact keeps every selection, selection_aware keeps only which tables
    carry a selection, and join_only keeps the table set alone.
    """
    tables = subplan_key(subplan)
    if kind == "exact":
        signature = tuple(
            sorted((s.table, s.column, s.op, s.value) for s in subplan.selections)
        )
    elif kind == "selection_aware":
        signature = tuple(sorted({s.table for s in subplan.selections}))
    elif kind == "join_only":
        signature = ()
    else:
        raise ValueError(
            "invalid pattern kind. expected one of the following: %s" % list(PATTERN_KINDS)
        )
    return Pattern(kind, tables, signature)


@dataclass(frozen=True)
class CacheEntry:
    """
    Running aggregate of every observation of one pattern.  ``total`` is the
    exact integer sum of the observations, so the unweighted mean is exact.
    """

    pattern: Pattern
    mean_cardinality: float
    observation_count: int
    last_updated: int
    total: int = 0

    def to_dict(self):
        record = self.pattern.to_dict()
        record.update(
            mean=self.mean_cardinality,
            count=self.observation_count,
            last_updated=self.last_updated,
            total=self.total,
        )
        return record

    @classmethod
    def from_dict(cls, mapping):
        return cls(
            pattern=Pattern.from_dict(mapping),
            mean_cardinality=float(mapping["mean"]),
            observation_count=int(mapping["count"]),
            last_updated=int(mapping["last_updated"]),
            total=int(mapping.get("total", 0)),
        )


@dataclass(frozen=True)
class CardLookup:
    value: float
    source: str

    @property
    def from_cache(self):
        return self.source != "surrogate"


class CardinalityCollector:
    """
    Pattern-keyed cardinality cache.  Lookups may run concurrently; ingests
    build a new entry table and swap it in whole, so a lookup sees either all
    or none of an ingested log.
    """

    def __init__(self, config=None):
        self.config = config or CollectorConfig()
        self._entries = {}
        self._sequence = 0
        self._write_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self._hits = Counter()

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        return "CardinalityCollector({} entries, policy={})".format(
            len(self._entries), self.config.policy
        )

    @property
    def entries(self):
        return dict(self._entries)

    def entry(self, pattern):
        return self._entries.get(pattern)

    def find(self, subplan):
        """
        Returns the most specific cached entry matching ``subplan`` and the
        lookup source it corresponds to, or ``(None, "surrogate")``.
        """
        entries = self._entries
        for kind in PATTERN_KINDS:
            entry = entries.get(make_pattern(subplan, kind))
            if entry is not None:
                return entry, _HIT[kind]
        return None, "surrogate"

    def lookup(self, subplan, estimator, catalog, context=None):
        """
        Returns a CardLookup for ``subplan``.  Surrogate values are returned but
        never cached.
        """
        entry, source = self.find(subplan)
        with self._stats_lock:
            self._hits[source] += 1
        if entry is not None:
            return CardLookup(entry.mean_cardinality, source)
        if not isinstance(estimator, CardEst):
            estimator = build_estimator(estimator, catalog)
        return CardLookup(float(estimator(subplan, context)), "surrogate")

    def ingest(self, observations):
        """
        Folds ``(subplan, true cardinality)`` observations into the entries of
        all three pattern kinds.
        """
        observations = list(observations)
        with self._write_lock:
            entries = dict(self._entries)
            sequence = self._sequence
            for subplan, value in observations:
                value = int(value)
                if value < 0:
                    raise ValueError(
                        "negative cardinality for subplan {}".format(subplan_key(subplan))
                    )
                sequence += 1
                for kind in PATTERN_KINDS:
                    pattern = make_pattern(subplan, kind)
                    entries[pattern] = self._fold(entries.get(pattern), pattern, value, sequence)
            self._entries = entries
            self._sequence = sequence
        logger.debug("ingested %d observations, cache holds %d entries", len(observations), len(entries))
        return self

    def ingest_log(self, log):
        return self.ingest(log.entries)

    def _fold(self, entry, pattern, value, sequence):
        if entry is None:
            return CacheEntry(pattern, float(value), 1, sequence, value)
        count = entry.observation_count + 1
        total = entry.total + value
        if self.config.policy == "mean":
            mean = total / count
        elif self.config.policy == "recency":
            alpha = self.config.alpha
            mean = alpha * value + (1.0 - alpha) * entry.mean_cardinality
        else:
            raise ConfigError(
                "invalid collector policy. expected one of the following: %s"
                % ["mean", "recency"]
            )
        return replace(
            entry,
            mean_cardinality=float(mean),
            observation_count=count,
            last_updated=sequence,
            total=total,
        )

    def stats(self):
        """
        Returns entry counts per pattern kind and lookup counts per source.
        """
        entries = self._entries
        with self._stats_lock:
            hits = dict(self._hits)
        return {
            "entries": {kind: sum(1 for p in entries if p.kind == kind) for kind in PATTERN_KINDS},
            "lookups": {source: hits.get(source, 0) for source in SOURCES},
            "sequence": self._sequence,
        }

    def to_records(self):
        """
        Returns the entries as plain records in a stable order.
        """
        entries = self._entries
        return [
            entries[p].to_dict()
            for p in sorted(
                entries,
                key=lambda p: (PATTERN_KINDS.index(p.kind), p.table_set, repr(p.selection_signature)),
            )
        ]

    @classmethod
    def from_records(cls, records, config=None):
        collector = cls(config)
        entries = {}
        for record in records:
            entry = CacheEntry.from_dict(record)
            entries[entry.pattern] = entry
        collector._entries = entries
        collector._sequence = max((e.last_updated for e in entries.values()), default=0)
        return collector


def lookup(cache, subplan, estimator, catalog, context=None):
    return cache.lookup(subplan, estimator, catalog, context)


def ingest_log(cache, log):
    return cache.ingest_log(log)
