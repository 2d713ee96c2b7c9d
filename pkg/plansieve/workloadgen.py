"""
Workload scaling: split template queries into components, learn the
domains of their predicate columns once, generate predicate-mutated
variants that keep the join structure, and keep the ones with non-empty
results.
"""

import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .config import MutationPolicy
from .catalog import true_cardinality
from .errors import BudgetWarning, StructuralError, UnknownReferenceError
from .planspace import JoinEdge, Query, Selection, infer_join_closure
from .utils import derive_seed

logger = logging.getLogger(__name__)

SAMPLE_SIZE = 64
RETRY_FACTOR = 50
_EMPTY_OPS = (">", ">=", "=")


@dataclass(frozen=True)
class TemplateComponents:
    template_id: str
    tables: Tuple[str, ...]
    joins: Tuple[JoinEdge, ...]
    slots: Tuple[Selection, ...]

    def recombine(self, query_id=None, slots=None, joins=None):
        """
        Returns a Query from the components, optionally with other slots or
        joins.
        """
        return Query(
            id=self.template_id if query_id is None else query_id,
            tables=self.tables,
            joins=self.joins if joins is None else tuple(joins),
            selections=self.slots if slots is None else tuple(slots),
        )


def extract_components(template):
    """
    Returns the TemplateComponents of a template query; recombining them
    reproduces the template.
    """
    template.validate()
    return TemplateComponents(
        template_id=template.id,
        tables=tuple(template.tables),
        joins=tuple(template.joins),
        slots=tuple(template.selections),
    )


#####################################################################


@dataclass(frozen=True)
class DomainInfo:
    column_key: str
    min: int
    max: int
    sample: Tuple[int, ...]
    row_count: int

    def to_dict(self):
        return {
            "min": self.min,
            "max": self.max,
            "sample": list(self.sample),
            "row_count": self.row_count,
        }

    @classmethod
    def from_dict(cls, column_key, mapping):
        return cls(
            column_key=column_key,
            min=int(mapping["min"]),
            max=int(mapping["max"]),
            sample=tuple(int(v) for v in mapping["sample"]),
            row_count=int(mapping["row_count"]),
        )


class DomainStore:
    """
    Key-value store of learned column domains, keyed by "table.column" and
    persisted as one JSON document.
    """

    def __init__(self, entries=None):
        self._entries = dict(entries or {})

    def __contains__(self, column_key):
        return column_key in self._entries

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, column_key):
        try:
            return self._entries[column_key]
        except KeyError:
            raise UnknownReferenceError("no learned domain for column {}".format(column_key)) from None

    def get(self, column_key):
        return self._entries.get(column_key)

    def put(self, info):
        self._entries[info.column_key] = info

    def keys(self):
        return sorted(self._entries)

    def to_dict(self):
        return {key: self._entries[key].to_dict() for key in sorted(self._entries)}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return cls({key: DomainInfo.from_dict(key, value) for key, value in raw.items()})


def column_key(table, column=None):
    if column is None:
        return table
    return "{}.{}".format(table, column)


def learn_domain(catalog, column, store):
    """
    Returns the DomainInfo of ``column`` ("table.column" or a (table, column)
    pair).  A stored domain is returned without reading the catalog; a new
    one is scanned once and stored.
    """
    key = column if isinstance(column, str) else column_key(*column)
    cached = store.get(key)
    if cached is not None:
        return cached
    if "." not in key:
        raise UnknownReferenceError("column {} is not of the form table.column".format(key))
    table, name = key.split(".", 1)
    values = catalog.scan_column(table, name)
    distinct = np.unique(values)
    if distinct.size > SAMPLE_SIZE:
        picks = np.linspace(0, distinct.size - 1, SAMPLE_SIZE).round().astype(int)
        distinct = distinct[np.unique(picks)]
    info = DomainInfo(
        column_key=key,
        min=int(values.min()),
        max=int(values.max()),
        sample=tuple(int(v) for v in distinct),
        row_count=int(values.size),
    )
    store.put(info)
    logger.debug("learned domain of %s: [%d, %d]", key, info.min, info.max)
    return info


#####################################################################


def _revalue(slot, info, rng, policy):
    if policy.value_source == "out_of_domain":
        ops = [op for op in policy.ops if op in _EMPTY_OPS] or [">"]
        return Selection(slot.table, slot.column, ops[int(rng.integers(len(ops)))], info.max + 1)
    op = policy.ops[int(rng.integers(len(policy.ops)))]
    if policy.value_source == "sample":
        value = int(info.sample[int(rng.integers(len(info.sample)))])
    else:
        value = int(rng.integers(info.min, info.max + 1))
    return Selection(slot.table, slot.column, op, value)


def _rewire_joins(components, graph, rng):
    """
    Replaces, per column-equivalence class with three or more columns and
    with probability one half, the template's join predicates by a star
    around a randomly chosen member.  The closure is unchanged.
    """
    joins = list(components.joins)
    for members in graph.classes:
        if len(members) < 3 or rng.random() >= 0.5:
            continue
        cols = sorted(members)
        center = cols[int(rng.integers(len(cols)))]
        joins = [j for j in joins if j.sides()[0] not in members]
        joins += [JoinEdge(center[0], center[1], t, c) for t, c in cols if (t, c) != center]
    return tuple(sorted(j.canonical() for j in joins))


def _variant(components, graph, store, index, seed, policy):
    rng = np.random.default_rng(derive_seed("generate", seed, components.template_id, index))
    slots = []
    for slot in components.slots:
        draw = rng.random()
        if draw < policy.keep:
            slots.append(slot)
        elif draw < policy.keep + policy.revalue:
            slots.append(_revalue(slot, store[column_key(slot.table, slot.column)], rng, policy))
    joins = _rewire_joins(components, graph, rng) if policy.modify_joins else None
    return components.recombine(
        query_id="{}_{}".format(components.template_id, index), slots=slots, joins=joins
    )


def generate(template, store, n, seed, policy=None, start=0):
    """
    Returns ``n`` variants of ``template``.  Each selection slot is kept,
    re-valued from its learned domain or dropped, independently and seeded
    per variant.  Tables and (unless the policy says otherwise) joins are the
    template's.
    """
    if n <= 0:
        raise ValueError("number of variants must be positive, got {}".format(n))
    policy = (policy or MutationPolicy()).validate()
    components = extract_components(template)
    graph = infer_join_closure(template)
    return [_variant(components, graph, store, start + i, seed, policy) for i in range(n)]


@dataclass(frozen=True)
class Validation:
    accepted: bool
    reason: Optional[str] = None
    cardinality: Optional[int] = None

    def __bool__(self):
        return self.accepted


def validate(catalog, query):
    """
    Returns an accepted Validation iff the query resolves against the catalog
    and its full join has at least one row.  Rejection is a value.
    """
    try:
        graph = infer_join_closure(query)
        full = graph.subplan(query.tables)
        count = true_cardinality(catalog, full)
    except UnknownReferenceError as err:
        return Validation(False, "reference: {}".format(err))
    except StructuralError as err:
        return Validation(False, "structure: {}".format(err))
    if count < 1:
        return Validation(False, "empty result", 0)
    return Validation(True, None, count)


def _signature(query):
    return (
        tuple(sorted(query.tables)),
        tuple(sorted(j.canonical() for j in query.joins)),
        tuple(sorted(query.selections)),
    )


@dataclass
class Workload:
    queries: list
    template_of: Dict[str, str] = field(default_factory=dict)
    attempts: int = 0
    rejected: Counter = field(default_factory=Counter)
    complete: bool = True
    class_balance: Optional[Dict[str, int]] = None

    def __len__(self):
        return len(self.queries)


def scale_workload(templates, catalog, target_count, seed, policy=None, store=None, labeler=None):
    """
    Returns a Workload of ``target_count`` validated variants drawn round-robin
    from ``templates``.  Stops early with a BudgetWarning after 50 attempts
    per requested query.  ``labeler``, when given, maps a query to its label
    and fills in the class balance.
    """
    templates = list(templates)
    if not templates:
        raise ValueError("scaling needs at least one template")
    if target_count <= 0:
        raise ValueError("target count must be positive, got {}".format(target_count))
    policy = (policy or MutationPolicy()).validate()
    store = store if store is not None else DomainStore()

    prepared = []
    for template in templates:
        components = extract_components(template)
        for slot in components.slots:
            learn_domain(catalog, (slot.table, slot.column), store)
        prepared.append((components, infer_join_closure(template)))

    workload = Workload(queries=[])
    seen = set()
    budget = RETRY_FACTOR * target_count
    while len(workload.queries) < target_count and workload.attempts < budget:
        components, graph = prepared[workload.attempts % len(prepared)]
        index = workload.attempts // len(prepared)
        workload.attempts += 1
        candidate = _variant(components, graph, store, index, seed, policy)
        signature = _signature(candidate)
        if signature in seen:
            workload.rejected["duplicate"] += 1
            continue
        verdict = validate(catalog, candidate)
        if not verdict:
            workload.rejected[verdict.reason.split(":")[0]] += 1
            continue
        seen.add(signature)
        workload.queries.append(candidate)
        workload.template_of[candidate.id] = components.template_id

    if len(workload.queries) < target_count:
        workload.complete = False
        warnings.warn(
            "retry budget of {} attempts exhausted with {} of {} queries".format(
                budget, len(workload.queries), target_count
            ),
            BudgetWarning,
        )
    if labeler is not None:
        counts = Counter(labeler(q) for q in workload.queries)
        workload.class_balance = dict(sorted(counts.items()))
        logger.info("class balance of scaled workload: %s", workload.class_balance)
    logger.info(
        "scaled %d templates to %d queries in %d attempts",
        len(templates),
        len(workload.queries),
        workload.attempts,
    )
    return workload
