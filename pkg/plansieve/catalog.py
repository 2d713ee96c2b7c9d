"""
Synthetic schemas, seeded data generation and the brute-force cardinality
oracle that stands in for executing queries.
"""

import logging
import operator
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import SchemaValidationError, UnknownReferenceError

logger = logging.getLogger(__name__)

COLUMN_KINDS = ["key", "fk", "int"]

# below this many rows on either side a join runs as a nested loop
NESTED_LOOP_ROWS = 64

_OPS = {
    "=": operator.eq,
    "<": operator.lt,
    ">": operator.gt,
    "<=": operator.le,
    ">=": operator.ge,
}

_WEIGHT = "__w"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    target: Optional[Tuple[str, str]] = None
    lo: Optional[int] = None
    hi: Optional[int] = None


@dataclass(frozen=True)
class TableSpec:
    name: str
    rows: int
    columns: Tuple[ColumnSpec, ...]

    def column(self, name):
        for col in self.columns:
            if col.name == name:
                return col
        raise UnknownReferenceError("unknown column {}.{}".format(self.name, name))


@dataclass(frozen=True)
class SchemaSpec:
    """
    Declarative description of a synthetic schema.  ``skew`` is the Zipf
    exponent used for foreign-key values.
    """

    tables: Tuple[TableSpec, ...]
    seed: int = 0
    skew: float = 1.1

    @classmethod
    def from_dict(cls, mapping):
        """
        Returns a validated SchemaSpec from the structured-text layout
        ``{tables: [{name, rows, columns: [{name, kind, target?, lo?, hi?}]}], seed}``.
        """
        tables = []
        for table in mapping.get("tables", []):
            columns = []
            for col in table.get("columns", []):
                target = col.get("target")
                if isinstance(target, str):
                    if "." not in target:
                        raise SchemaValidationError(
                            "foreign key {}.{} target '{}' is not of the form table.column".format(
                                table.get("name"), col.get("name"), target
                            )
                        )
                    target = tuple(target.split(".", 1))
                elif target is not None:
                    target = tuple(target)
                columns.append(
                    ColumnSpec(
                        name=col["name"],
                        kind=col["kind"],
                        target=target,
                        lo=col.get("lo"),
                        hi=col.get("hi"),
                    )
                )
            tables.append(
                TableSpec(name=table["name"], rows=int(table["rows"]), columns=tuple(columns))
            )
        spec = cls(
            tables=tuple(tables),
            seed=int(mapping.get("seed", 0)),
            skew=float(mapping.get("skew", 1.1)),
        )
        return spec.validate()

    def to_dict(self):
        tables = []
        for table in self.tables:
            columns = []
            for col in table.columns:
                entry = {"name": col.name, "kind": col.kind}
                if col.target is not None:
                    entry["target"] = "{}.{}".format(*col.target)
                if col.kind == "int":
                    entry["lo"] = col.lo
                    entry["hi"] = col.hi
                columns.append(entry)
            tables.append({"name": table.name, "rows": table.rows, "columns": columns})
        return {"tables": tables, "seed": self.seed, "skew": self.skew}

    def table(self, name):
        for table in self.tables:
            if table.name == name:
                return table
        raise UnknownReferenceError("unknown table {}".format(name))

    def validate(self):
        """
        Checks every schema invariant and raises SchemaValidationError naming
        the first offending element.
        """
        if not self.tables:
            raise SchemaValidationError("schema declares no tables")
        if not 0 <= self.seed < 2 ** 64:
            raise SchemaValidationError("seed {} is not a 64-bit unsigned integer".format(self.seed))
        if self.skew <= 1:
            raise SchemaValidationError("skew {} must be greater than 1".format(self.skew))
        names = [t.name for t in self.tables]
        for name in names:
            if names.count(name) > 1:
                raise SchemaValidationError("duplicate table name {}".format(name))
        by_name = {t.name: t for t in self.tables}
        for table in self.tables:
            if table.rows < 1:
                raise SchemaValidationError(
                    "table {} has {} rows; at least 1 is required".format(table.name, table.rows)
                )
            col_names = [c.name for c in table.columns]
            for col in table.columns:
                if col_names.count(col.name) > 1:
                    raise SchemaValidationError(
                        "duplicate column name {}.{}".format(table.name, col.name)
                    )
                if col.kind not in COLUMN_KINDS:
                    raise SchemaValidationError(
                        "invalid kind '{}' for column {}.{}. expected one of the following: {}".format(
                            col.kind, table.name, col.name, COLUMN_KINDS
                        )
                    )
                if col.kind == "fk":
                    if col.target is None:
                        raise SchemaValidationError(
                            "foreign key {}.{} has no target".format(table.name, col.name)
                        )
                    target_table, target_col = col.target
                    if target_table not in by_name:
                        raise SchemaValidationError(
                            "foreign key {}.{} references undefined table {}".format(
                                table.name, col.name, target_table
                            )
                        )
                    target = [c for c in by_name[target_table].columns if c.name == target_col]
                    if not target or target[0].kind != "key":
                        raise SchemaValidationError(
                            "foreign key {}.{} target {}.{} is not a key column".format(
                                table.name, col.name, target_table, target_col
                            )
                        )
                if col.kind == "int":
                    if col.lo is None or col.hi is None or col.lo > col.hi:
                        raise SchemaValidationError(
                            "attribute {}.{} needs a domain lo <= hi".format(table.name, col.name)
                        )
        return self


@dataclass(frozen=True)
class ExecutionLog:
    """
    True cardinalities observed while executing one plan, one entry per plan
    node including the single-table selections.
    """

    query_id: str
    entries: Tuple[Tuple[object, int], ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.entries)


class Catalog:
    """
    Generated rows of a SchemaSpec, one integer DataFrame per table.  The
    catalog is never mutated after generation.
    """

    def __init__(self, spec, frames):
        self.spec = spec
        self.frames = frames
        self.table_names = [t.name for t in spec.tables]
        self.table_index = {name: i for i, name in enumerate(self.table_names)}
        self._distinct = {}
        self.column_scans = 0

    def __repr__(self):
        sizes = ", ".join("{}:{}".format(n, len(self.frames[n])) for n in self.table_names)
        return "Catalog({})".format(sizes)

    def row_count(self, table):
        self._check_table(table)
        return len(self.frames[table])

    def rows(self, table):
        """
        Returns the materialized tuples of a table in column order.
        """
        self._check_table(table)
        return list(self.frames[table].itertuples(index=False, name=None))

    def column_names(self, table):
        return [c.name for c in self.spec.table(table).columns]

    def column(self, table, column):
        self._check_column(table, column)
        return self.frames[table][column].to_numpy()

    def scan_column(self, table, column):
        """
        Returns a column's values and counts the scan; the workload generator
        uses the counter to prove it reads from its domain store.
        """
        values = self.column(table, column)
        self.column_scans += 1
        return values

    def distinct_count(self, table, column):
        key = (table, column)
        if key not in self._distinct:
            self._distinct[key] = int(pd.unique(self.column(table, column)).size)
        return self._distinct[key]

    def selection_mask(self, table, selections):
        """
        Returns a boolean mask of the rows of ``table`` that satisfy every
        selection on that table.
        """
        frame = self.frames[table]
        mask = np.ones(len(frame), dtype=bool)
        for sel in selections:
            if sel.table != table:
                continue
            self._check_column(table, sel.column)
            if sel.op not in _OPS:
                raise UnknownReferenceError(
                    "invalid comparison '{}'. expected one of the following: {}".format(
                        sel.op, list(_OPS)
                    )
                )
            mask &= _OPS[sel.op](frame[sel.column].to_numpy(), sel.value)
        return mask

    def _check_table(self, table):
        if table not in self.table_index:
            raise UnknownReferenceError("unknown table {}".format(table))

    def _check_column(self, table, column):
        self._check_table(table)
        if column not in self.frames[table].columns:
            raise UnknownReferenceError("unknown column {}.{}".format(table, column))


#####################################################################


def _fk_values(rng, size, domain, skew):
    """
    Returns foreign-key values over keys 1..domain with Zipf-distributed
    popularity.  Popular keys are scattered over the key range.
    """
    ranks = stats.zipfian(skew, domain).rvs(size=size, random_state=rng)
    scatter = rng.permutation(domain) + 1
    return scatter[np.asarray(ranks, dtype=np.int64) - 1]


def generate_catalog(spec):
    """
    Returns the Catalog generated from a SchemaSpec.  Every table draws from
    its own generator seeded with (seed, table position), so identical specs
    produce identical rows.
    """
    spec.validate()
    frames = {}
    for position, table in enumerate(spec.tables):
        rng = np.random.default_rng([spec.seed, position])
        data = {}
        for col in table.columns:
            if col.kind == "key":
                data[col.name] = np.arange(1, table.rows + 1, dtype=np.int64)
            elif col.kind == "fk":
                domain = spec.table(col.target[0]).rows
                data[col.name] = _fk_values(rng, table.rows, domain, spec.skew)
            else:
                data[col.name] = rng.integers(col.lo, col.hi + 1, size=table.rows, dtype=np.int64)
        frames[table.name] = pd.DataFrame(data, columns=[c.name for c in table.columns])
        logger.debug("generated table %s with %d rows", table.name, table.rows)
    return Catalog(spec, frames)


#####################################################################


def _check_subplan(catalog, subplan):
    for table in subplan.tables:
        catalog._check_table(table)
    for sel in subplan.selections:
        if sel.table not in subplan.tables:
            raise UnknownReferenceError(
                "selection on {}.{} references a table outside the subplan".format(
                    sel.table, sel.column
                )
            )
        catalog._check_column(sel.table, sel.column)
    for edge in subplan.joins:
        catalog._check_column(edge.left_table, edge.left_column)
        catalog._check_column(edge.right_table, edge.right_column)


def _weighted_input(catalog, table, subplan, needed):
    """
    Returns the filtered join columns of one table, collapsed to distinct
    value combinations with a multiplicity column.
    """
    frame = catalog.frames[table]
    mask = catalog.selection_mask(table, subplan.selections)
    columns = sorted(needed)
    filtered = frame.loc[mask, columns]
    filtered.columns = ["{}.{}".format(table, c) for c in columns]
    if not columns:
        return pd.DataFrame({_WEIGHT: [int(mask.sum())]})
    return filtered.groupby(list(filtered.columns)).size().rename(_WEIGHT).reset_index()


def _join(left, right, left_on, right_on):
    """
    Returns the equi-join of two weighted inputs, as a nested loop when a side
    is small and as a hash join otherwise.
    """
    right = right.rename(columns={_WEIGHT: _WEIGHT + "_r"})
    if min(len(left), len(right)) < NESTED_LOOP_ROWS:
        merged = left.merge(right, how="cross")
        keep = np.ones(len(merged), dtype=bool)
        for lcol, rcol in zip(left_on, right_on):
            keep &= merged[lcol].to_numpy() == merged[rcol].to_numpy()
        merged = merged[keep]
    elif len(right) <= len(left):
        merged = left.merge(right, left_on=left_on, right_on=right_on, how="inner")
    else:
        merged = right.merge(left, left_on=right_on, right_on=left_on, how="inner")
    merged = merged.copy()
    merged[_WEIGHT] = merged[_WEIGHT].to_numpy() * merged[_WEIGHT + "_r"].to_numpy()
    return merged.drop(columns=[_WEIGHT + "_r"])


def true_cardinality(catalog, subplan):
    """
    Returns the exact number of rows produced by joining the filtered tables
    of ``subplan`` on its equality join predicates.
    """
    _check_subplan(catalog, subplan)
    tables = sorted(subplan.tables)
    needed = {t: set() for t in tables}
    for edge in subplan.joins:
        needed[edge.left_table].add(edge.left_column)
        needed[edge.right_table].add(edge.right_column)

    if len(tables) == 1:
        return int(catalog.selection_mask(tables[0], subplan.selections).sum())

    joined = [tables[0]]
    current = _weighted_input(catalog, tables[0], subplan, needed[tables[0]])
    while len(joined) < len(tables):
        candidates = [
            t
            for t in tables
            if t not in joined and any(e.touches(t, joined) for e in subplan.joins)
        ]
        if not candidates:
            raise UnknownReferenceError(
                "subplan {} has no join predicate connecting {}".format(
                    "+".join(tables), "+".join(sorted(set(tables) - set(joined)))
                )
            )
        nxt = candidates[0]
        left_on, right_on = [], []
        for edge in subplan.joins:
            pair = edge.oriented(nxt, joined)
            if pair is not None:
                (lt, lc), (rt, rc) = pair
                left_on.append("{}.{}".format(lt, lc))
                right_on.append("{}.{}".format(rt, rc))
        right = _weighted_input(catalog, nxt, subplan, needed[nxt])
        current = _join(current, right, left_on, right_on)
        joined.append(nxt)

        remaining = [t for t in tables if t not in joined]
        keep = sorted(
            {
                "{}.{}".format(t, c)
                for e in subplan.joins
                for (t, c) in e.sides()
                if t in joined and any(o in remaining for (o, _) in e.sides())
            }
        )
        if keep:
            current = current.groupby(keep)[_WEIGHT].sum().reset_index()
        else:
            current = pd.DataFrame({_WEIGHT: [int(current[_WEIGHT].sum())]})
        if current.empty:
            return 0
    return int(current[_WEIGHT].sum())


def execute_query(catalog, plan, query_id=""):
    """
    Returns the ExecutionLog of running ``plan``: the true cardinality of
    every node, leaves first, ordered by join size and canonical key.
    """
    nodes = sorted(plan.subplans(), key=lambda s: (s.k, s.key))
    entries = tuple((subplan, true_cardinality(catalog, subplan)) for subplan in nodes)
    return ExecutionLog(query_id=query_id, entries=entries)
