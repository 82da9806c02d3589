"""In-memory tables and exact evaluation of aggregate queries.

A table is a bag of rows over categorical and bounded-integer attributes.
Queries are COUNT / SUM(a) / MEDIAN(a) with an optional conjunction of
comparison atoms. Everything here is exact and non-private; the deciders
add noise on top of these primitives.

Aggregate values are kept as exact Python ints internally. Reals only
appear once noise is injected, so test oracles never see float drift.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np


class RelationalError(Exception):
    """Base class for table and query errors."""


class SchemaError(RelationalError):
    pass


class LoadError(RelationalError):
    pass


class QueryError(RelationalError):
    pass


class EmptySupportError(QueryError):
    """MEDIAN asked for on a predicate that matches no rows."""


# ---------------------------------------------------------------------------
# domains and schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Categorical:
    """Finite set of labels, kept in declaration order."""

    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise SchemaError("categorical domain needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise SchemaError("categorical domain has duplicate values")
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))

    def contains(self, value) -> bool:
        return value in self.values


@dataclass(frozen=True)
class IntegerRange:
    """Closed integer interval [lo, hi]. The only domain usable for SUM/MEDIAN."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise SchemaError(f"integer range has lo={self.lo} > hi={self.hi}")

    def contains(self, value) -> bool:
        return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


AttributeDomain = Union[Categorical, IntegerRange]


@dataclass(frozen=True)
class Schema:
    """Ordered attribute list with unique names."""

    attributes: tuple[tuple[str, AttributeDomain], ...]

    def __post_init__(self):
        names = [name for name, _ in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names in schema")
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    def domain(self, name: str) -> AttributeDomain:
        for attr, dom in self.attributes:
            if attr == name:
                return dom
        raise SchemaError(f"unknown attribute {name!r}")

    def has(self, name: str) -> bool:
        return any(attr == name for attr, _ in self.attributes)


def load_schema(source: Union[str, dict]) -> Schema:
    """Parse a schema config document (JSON text or an already-parsed dict).

    Expected shape::

        {"attributes": [
            {"name": "sex", "kind": "categorical", "values": ["F", "M"]},
            {"name": "age", "kind": "integer", "min": 0, "max": 99}
        ]}
    """
    doc = json.loads(source) if isinstance(source, str) else source
    try:
        entries = doc["attributes"]
    except (KeyError, TypeError):
        raise SchemaError("schema document must have an 'attributes' list")
    attrs: list[tuple[str, AttributeDomain]] = []
    for entry in entries:
        name = entry.get("name")
        kind = entry.get("kind")
        if not name or not kind:
            raise SchemaError(f"schema entry missing name/kind: {entry!r}")
        if kind == "categorical":
            attrs.append((name, Categorical(tuple(entry["values"]))))
        elif kind == "integer":
            attrs.append((name, IntegerRange(int(entry["min"]), int(entry["max"]))))
        else:
            raise SchemaError(f"unknown attribute kind {kind!r}")
    return Schema(tuple(attrs))


def schema_to_config(schema: Schema) -> dict:
    """Inverse of load_schema, for writing generated datasets to disk."""
    out = []
    for name, dom in schema.attributes:
        if isinstance(dom, Categorical):
            out.append({"name": name, "kind": "categorical", "values": list(dom.values)})
        else:
            out.append({"name": name, "kind": "integer", "min": dom.lo, "max": dom.hi})
    return {"attributes": out}


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


class Table:
    """Immutable bag of rows. Columns are stored as numpy arrays.

    Duplicate rows are allowed (bag semantics); all sensitivity reasoning
    downstream assumes bags.
    """

    def __init__(self, schema: Schema, rows: Iterable[Sequence]):
        self.schema = schema
        materialized = [tuple(row) for row in rows]
        width = len(schema.attributes)
        for i, row in enumerate(materialized):
            if len(row) != width:
                raise LoadError(f"row {i}: expected {width} values, got {len(row)}")
            for (name, dom), value in zip(schema.attributes, row):
                if not dom.contains(value):
                    raise LoadError(f"row {i}: value {value!r} outside domain of {name!r}")
        self._columns: dict[str, np.ndarray] = {}
        for j, (name, dom) in enumerate(schema.attributes):
            vals = [row[j] for row in materialized]
            if isinstance(dom, IntegerRange):
                self._columns[name] = np.asarray(vals, dtype=np.int64)
            else:
                self._columns[name] = np.asarray(vals, dtype=object)
        self._n = len(materialized)

    @property
    def n_rows(self) -> int:
        return self._n

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise QueryError(f"unknown attribute {name!r}")

    def rows(self) -> list[tuple]:
        names = self.schema.names
        cols = [self._columns[n] for n in names]
        return [tuple(col[i].item() if isinstance(col[i], np.integer) else col[i] for col in cols)
                for i in range(self._n)]

    def with_rows(self, rows: Iterable[Sequence]) -> "Table":
        return Table(self.schema, rows)


def load_table(csv_source: Union[str, bytes, io.IOBase], schema: Schema) -> Table:
    """Load a CSV (header row, UTF-8) into a validated Table.

    Header names must match the schema's attribute names, in any order.
    Raises LoadError naming the offending row index and column.
    """
    if isinstance(csv_source, bytes):
        text = csv_source.decode("utf-8")
    elif isinstance(csv_source, str):
        text = csv_source
    else:
        raw = csv_source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise LoadError("empty CSV: missing header row")
    header = [h.strip() for h in header]
    if sorted(header) != sorted(schema.names):
        unknown = [h for h in header if not schema.has(h)]
        if unknown:
            raise LoadError(f"unknown column(s) in header: {unknown}")
        raise LoadError(f"header {header} does not cover schema attributes {list(schema.names)}")
    order = [header.index(name) for name in schema.names]
    rows = []
    for i, raw_row in enumerate(reader):
        if len(raw_row) != len(header):
            raise LoadError(f"row {i}: expected {len(header)} fields, got {len(raw_row)}")
        row = []
        for (name, dom), pos in zip(schema.attributes, order):
            cell = raw_row[pos].strip()
            if isinstance(dom, IntegerRange):
                try:
                    value: Union[int, str] = int(cell)
                except ValueError:
                    raise LoadError(f"row {i}: column {name!r}: {cell!r} is not an integer")
            else:
                value = cell
            if not dom.contains(value):
                raise LoadError(f"row {i}: column {name!r}: value {value!r} outside domain")
            row.append(value)
        rows.append(tuple(row))
    return Table(schema, rows)


def dump_table(table: Table) -> str:
    """Serialize back to CSV with columns in schema order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.schema.names)
    for row in table.rows():
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# predicates and queries
# ---------------------------------------------------------------------------

COMPARATORS = ("=", "<", "<=", ">=", ">")


@dataclass(frozen=True)
class Atom:
    """One comparison `attribute op constant`. LIKE parses to '=' equality."""

    attribute: str
    op: str
    constant: Union[str, int, float]

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise QueryError(f"unsupported comparator {self.op!r}")


@dataclass(frozen=True)
class Predicate:
    """Conjunction of atoms; an empty atom list matches every row.

    Constants outside the attribute domain are accepted and evaluated
    literally: they just match nothing or everything.
    """

    atoms: tuple[Atom, ...] = ()

    def validate(self, schema: Schema) -> None:
        for atom in self.atoms:
            dom = schema.domain(atom.attribute)
            if isinstance(dom, Categorical):
                if atom.op != "=":
                    raise QueryError(
                        f"comparator {atom.op!r} not allowed on categorical {atom.attribute!r}")
            else:
                if not isinstance(atom.constant, (int, float)):
                    raise QueryError(
                        f"numeric constant required for {atom.attribute!r}, got {atom.constant!r}")

    def mask(self, table: Table) -> np.ndarray:
        self.validate(table.schema)
        mask = np.ones(table.n_rows, dtype=bool)
        for atom in self.atoms:
            col = table.column(atom.attribute)
            c = atom.constant
            if atom.op == "=":
                mask &= col == c
            elif atom.op == "<":
                mask &= col < c
            elif atom.op == "<=":
                mask &= col <= c
            elif atom.op == ">=":
                mask &= col >= c
            else:
                mask &= col > c
        return mask


MATCH_ALL = Predicate(())

COUNT, SUM, MEDIAN = "count", "sum", "median"


@dataclass(frozen=True)
class AggregateQuery:
    """COUNT(*) / SUM(attribute) / MEDIAN(attribute) with a predicate."""

    kind: str
    attribute: Union[str, None] = None
    predicate: Predicate = MATCH_ALL

    def __post_init__(self):
        if self.kind not in (COUNT, SUM, MEDIAN):
            raise QueryError(f"unknown aggregate kind {self.kind!r}")
        if self.kind == COUNT and self.attribute is not None:
            raise QueryError("COUNT takes no aggregate attribute")
        if self.kind != COUNT and self.attribute is None:
            raise QueryError(f"{self.kind.upper()} needs an aggregate attribute")


def aggregate_domain(q: AggregateQuery, schema: Schema) -> IntegerRange:
    """Domain of the aggregate attribute; SUM/MEDIAN require a nonnegative
    integer domain (the estimators' max-with-zero step relies on it)."""
    if q.kind == COUNT:
        raise QueryError("COUNT has no aggregate attribute")
    dom = schema.domain(q.attribute)
    if not isinstance(dom, IntegerRange):
        raise QueryError(f"aggregate attribute {q.attribute!r} must be an integer attribute")
    if dom.lo < 0:
        raise QueryError(f"aggregate attribute {q.attribute!r} must have a nonnegative domain")
    return dom


def _matching_values(q: AggregateQuery, table: Table) -> np.ndarray:
    aggregate_domain(q, table.schema)
    mask = q.predicate.mask(table)
    return table.column(q.attribute)[mask]


def answer(q: AggregateQuery, table: Table) -> int:
    """Exact, non-private query answer.

    COUNT: number of matching rows. SUM: sum of the attribute over matching
    rows. MEDIAN: the ceil(n'/2)-th smallest attribute value among the n'
    matching rows; raises EmptySupportError when n' = 0.
    """
    if q.kind == COUNT:
        return int(q.predicate.mask(table).sum())
    vals = _matching_values(q, table)
    if q.kind == SUM:
        return int(vals.sum())
    if vals.size == 0:
        raise EmptySupportError("MEDIAN over an empty set of matching rows")
    k = math.ceil(vals.size / 2)
    return int(np.partition(vals, k - 1)[k - 1])


def truncated_sum(q: AggregateQuery, table: Table, threshold) -> int:
    """Sum of the aggregate attribute over matching rows with value <= threshold.

    Monotone nondecreasing in the threshold and equal to answer(q, table)
    once the threshold covers every matching value.
    """
    if q.kind != SUM:
        raise QueryError("truncated_sum requires a SUM query")
    if threshold < 0:
        raise QueryError("truncation threshold must be nonnegative")
    vals = _matching_values(q, table)
    return int(vals[vals <= threshold].sum())


def rank(table: Table, predicate: Predicate, attribute: str, e) -> int:
    """Number of matching rows whose attribute value is strictly below e."""
    dom = table.schema.domain(attribute)
    if not isinstance(dom, IntegerRange):
        raise QueryError(f"rank requires an integer attribute, got {attribute!r}")
    mask = predicate.mask(table)
    return int((table.column(attribute)[mask] < e).sum())


def downward_local_sensitivity(q: AggregateQuery, table: Table) -> int:
    """Worst-case |answer change| over all single-row deletions (non-private;
    for test oracles and threshold bookkeeping only).

    COUNT: 1 iff any row matches. SUM: the largest matching attribute value.
    MEDIAN: brute force over every deletion, skipping deletions that empty
    the support.
    """
    if q.kind == COUNT:
        return 1 if int(q.predicate.mask(table).sum()) > 0 else 0
    if q.kind == SUM:
        vals = _matching_values(q, table)
        return int(vals.max()) if vals.size else 0
    base = answer(q, table)
    rows = table.rows()
    worst = 0
    for i in range(len(rows)):
        reduced = Table(table.schema, rows[:i] + rows[i + 1:])
        try:
            worst = max(worst, abs(base - answer(q, reduced)))
        except EmptySupportError:
            continue
    return worst


# ---------------------------------------------------------------------------
# query text
# ---------------------------------------------------------------------------

_QUERY_RE = re.compile(
    r"^\s*SELECT\s+(?P<agg>COUNT\s*\(\s*\*\s*\)|(?:SUM|MEDIAN)\s*\(\s*(?P<attr>[\w-]+)\s*\))"
    r"\s+FROM\s+[\w-]+"
    r"(?:\s+WHERE\s+(?P<where>.+?))?\s*;?\s*$",
    re.IGNORECASE | re.DOTALL,
)

_ATOM_RE = re.compile(
    r"^\s*(?P<attr>[\w-]+)\s*(?P<op>LIKE|<=|>=|=|<|>)\s*(?P<const>'[^']*'|-?\d+)\s*$",
    re.IGNORECASE,
)


def parse_query(text: str) -> AggregateQuery:
    """Parse `SELECT COUNT(*)|SUM(a)|MEDIAN(a) FROM t [WHERE atom AND ...]`.

    Atoms are `attr LIKE 'label'` (exact equality) or `attr op number` with
    op one of =, <, <=, >=, >. The table name is accepted and ignored (single
    relation).
    """
    m = _QUERY_RE.match(text)
    if not m:
        raise QueryError(f"cannot parse query: {text!r}")
    agg = m.group("agg").upper()
    if agg.startswith("COUNT"):
        kind, attr = COUNT, None
    elif agg.startswith("SUM"):
        kind, attr = SUM, m.group("attr")
    else:
        kind, attr = MEDIAN, m.group("attr")
    atoms: list[Atom] = []
    where = m.group("where")
    if where:
        for part in re.split(r"\s+AND\s+", where, flags=re.IGNORECASE):
            am = _ATOM_RE.match(part)
            if not am:
                raise QueryError(f"cannot parse predicate atom: {part!r}")
            op = am.group("op").upper()
            raw = am.group("const")
            if raw.startswith("'"):
                constant: Union[str, int] = raw[1:-1]
                if op not in ("LIKE", "="):
                    raise QueryError(f"comparator {op!r} not allowed on a quoted constant")
            else:
                constant = int(raw)
            atoms.append(Atom(am.group("attr"), "=" if op == "LIKE" else op, constant))
    return AggregateQuery(kind, attr, Predicate(tuple(atoms)))
