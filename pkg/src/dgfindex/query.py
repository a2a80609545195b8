"""Query planning and execution over a built table.

A query region is split into inner cells, answered from their stored headers,
and boundary cells, whose slices are read and re-checked record by record.
Queries that cannot be answered from headers (row output, group-by, join,
predicates on non-indexed fields, aggregates the index does not store) read
the slices of every cell in the region instead.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .aggregates import (
    Accumulator,
    Header,
    covers,
    finalize,
    merge,
    merge_all,
    normalize_request,
    required_specs,
)
from .errors import DataError, PolicyError
from .grid import DimSpan, SplittingPolicy, classify, decompose, spans_for
from .index_store import IndexStore
from .schema import Schema
from .segstore import ReadStats, filter_splits, read_split

KINDS = ("aggregate", "group_by", "filter", "join")
# enumerate grid cells directly while the region is at most this many cells
# (or twice the entry count); otherwise classify the stored keys instead
ENUMERATE_LIMIT = 4096


def point_range(kind: str, value) -> tuple:
    """Half-open range matching exactly ``value`` at its natural granularity."""
    if kind in ("int", "date"):
        return (value, value + 1)
    if kind == "float":
        return (value, math.nextafter(value, math.inf))
    return (value, value + "\0")


@dataclass
class RangePredicate:
    """Conjunction of per-field half-open ranges ``lo <= v < hi``."""

    ranges: dict = field(default_factory=dict)

    def __contains__(self, name):
        return name in self.ranges

    def get(self, name):
        return self.ranges.get(name)

    def with_range(self, name, lo, hi) -> "RangePredicate":
        r = dict(self.ranges)
        r[name] = (lo, hi)
        return RangePredicate(r)

    @property
    def empty(self) -> bool:
        return any(not lo < hi for lo, hi in self.ranges.values())

    def matcher(self, schema: Schema) -> Callable[[Sequence], bool]:
        checks = [(schema.index(n), lo, hi) for n, (lo, hi) in self.ranges.items()]

        def match(row) -> bool:
            for i, lo, hi in checks:
                if not lo <= row[i] < hi:
                    return False
            return True

        return match

    @classmethod
    def from_json(cls, where: Mapping, schema: Schema) -> "RangePredicate":
        ranges = {}
        for name, cond in (where or {}).items():
            f = schema.field(name)
            if not isinstance(cond, Mapping):
                cond = {"eq": cond}
            if "eq" in cond:
                ranges[name] = point_range(f.kind, schema.coerce(name, cond["eq"]))
                continue
            unknown = set(cond) - {"lo", "hi"}
            if unknown or not cond:
                raise PolicyError(f"predicate on {name!r} needs lo/hi or eq, got {sorted(cond)}")
            lo = schema.coerce(name, cond["lo"]) if "lo" in cond else -math.inf
            hi = schema.coerce(name, cond["hi"]) if "hi" in cond else math.inf
            ranges[name] = (lo, hi)
        return cls(ranges)

    def to_json(self, schema: Schema) -> dict:
        out = {}
        for name, (lo, hi) in self.ranges.items():
            d = {}
            if lo != -math.inf:
                d["lo"] = schema.render(name, lo)
            if hi != math.inf:
                d["hi"] = schema.render(name, hi)
            out[name] = d
        return out


def complete_predicate(pred: RangePredicate, policy: SplittingPolicy, store: IndexStore) -> RangePredicate:
    """Fill every missing indexed dimension with its stored standardized span."""
    ranges = dict(pred.ranges)
    for d in policy.dims:
        if d.name not in ranges:
            lo, hi = store.cell_bounds(d.name)
            ranges[d.name] = (d.edge(lo), d.edge(hi + 1))
    return RangePredicate(ranges)


@dataclass
class JoinSpec:
    dim_schema: Schema
    dim_rows: list
    on: str  # fact field
    dim_on: str  # dimension-table field
    fields: list | None = None  # projection; None = fact row + dim row

    @classmethod
    def load(cls, table_path, schema_path=None, on="", dim_on=None, fields=None, delimiter=","):
        from .schema import schema_path_for

        table_path = Path(table_path)
        schema = Schema.load(schema_path or schema_path_for(table_path), delimiter)
        with open(table_path, encoding="utf-8") as f:
            rows = [schema.parse_line(line) for line in f if line.strip()]
        return cls(schema, rows, on, dim_on or on, fields)


@dataclass
class Query:
    where: RangePredicate
    kind: str = "aggregate"
    aggregates: list = field(default_factory=list)
    group_by: str | None = None
    join: JoinSpec | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PolicyError(f"unknown query kind {self.kind!r}")
        self.aggregates = [normalize_request(a) for a in self.aggregates]
        if self.kind in ("aggregate", "group_by") and not self.aggregates:
            raise PolicyError(f"{self.kind} query needs at least one aggregate")
        if self.kind == "group_by" and not self.group_by:
            raise PolicyError("group_by query needs a group field")
        if self.kind == "join" and self.join is None:
            raise PolicyError("join query needs a join spec")

    @property
    def is_aggregation(self) -> bool:
        return self.kind == "aggregate"

    @classmethod
    def from_json(cls, obj: Mapping, schema: Schema, base_dir=None) -> "Query":
        where = RangePredicate.from_json(obj.get("where", {}), schema)
        sel = obj.get("select", "*")
        if sel == "*" or (isinstance(sel, Mapping) and sel.get("rows")):
            return cls(where, "filter")
        if not isinstance(sel, Mapping):
            raise PolicyError("select must be '*' or an object")
        if "join" in sel:
            j = sel["join"]
            base = Path(base_dir) if base_dir else Path.cwd()
            path = base / j["table"]
            spec = JoinSpec.load(path, (base / j["schema"]) if j.get("schema") else None,
                                 on=j["on"], dim_on=j.get("dim_on"), fields=j.get("fields"),
                                 delimiter=j.get("delimiter", ","))
            schema.field(spec.on)
            return cls(where, "join", join=spec)
        aggs = sel.get("aggregates") or []
        if isinstance(aggs, str):
            aggs = [aggs]
        if sel.get("group_by"):
            schema.field(sel["group_by"])
            return cls(where, "group_by", aggs, group_by=sel["group_by"])
        return cls(where, "aggregate", aggs)


@dataclass
class QueryPlan:
    predicate: RangePredicate
    is_aggregation: bool
    requests: list
    inner_keys: set = field(default_factory=set)
    boundary_keys: set = field(default_factory=set)
    keys_enumerated: bool = True  # False: key sets hold only the non-empty cells
    inner_cells: int = 0
    boundary_cells: int = 0
    inner_subresult: Header | None = None
    read_slices: list = field(default_factory=list)
    inner_locations: list = field(default_factory=list)
    read_region: dict | None = None
    demoted: str | None = None

    def describe(self, policy: SplittingPolicy) -> dict:
        """JSON-friendly dump (the in-memory stand-in for the index handler's temp files)."""
        return {
            "aggregation": self.is_aggregation,
            "demoted": self.demoted,
            "requests": self.requests,
            "inner_cells": self.inner_cells,
            "boundary_cells": self.boundary_cells,
            "inner_keys": sorted(policy.render_key(k) for k in self.inner_keys),
            "boundary_keys": sorted(policy.render_key(k) for k in self.boundary_keys),
            "inner_subresult": None if self.inner_subresult is None else self.inner_subresult.as_dict(),
            "read_slices": [str(s) for s in self.read_slices],
            "read_region": self.read_region,
        }


def _region(policy: SplittingPolicy, spans: Sequence[DimSpan]) -> dict:
    return {d.name: (d.edge(s.first), d.edge(s.last + 1)) for d, s in zip(policy.dims, spans)}


def _loc_order(loc):
    return loc.file, loc.start


def _clamp_to_bounds(pred: RangePredicate, policy: SplittingPolicy, store: IndexStore) -> dict | None:
    """Indexed ranges intersected with the stored data span; ``None`` if an intersection is empty.

    No record lies outside the span, so the intersection selects the same records.
    """
    out = {}
    for d in policy.dims:
        lo, hi = pred.ranges[d.name]
        blo, bhi = store.cell_bounds(d.name)
        lo, hi = max(lo, d.edge(blo)), min(hi, d.edge(bhi + 1))
        if not lo < hi:
            return None
        out[d.name] = (lo, hi)
    return out


def plan(pred: RangePredicate, table, is_aggregation: bool = False, requests: Sequence[str] = ()) -> QueryPlan:
    """Build the read plan for ``pred`` against ``table`` (anything with store/policy/specs)."""
    store: IndexStore = table.store
    policy = store.policy
    requests = [normalize_request(r) for r in requests]
    qp = QueryPlan(pred, is_aggregation, requests)
    if is_aggregation:
        missing = [r for r in requests if not covers(table.specs, r)]
        residual = [n for n in pred.ranges if n not in policy]
        if missing:
            qp.is_aggregation = False
            qp.demoted = f"not pre-computed: {', '.join(missing)}"
        elif residual:
            qp.is_aggregation = False
            qp.demoted = f"predicate on non-indexed field(s): {', '.join(residual)}"
    if len(store) == 0 or pred.empty:
        return qp
    with store.lock.read():
        full = complete_predicate(pred, policy, store)
        qp.predicate = full
        grid_ranges = _clamp_to_bounds(full, policy, store)
        spans = spans_for(grid_ranges, policy) if grid_ranges is not None else None
        if spans is None:
            return qp
        total = math.prod(s.count for s in spans)
        inner_total = math.prod(s.inner_count for s in spans)
        qp.inner_cells, qp.boundary_cells = inner_total, total - inner_total
        qp.read_region = _region(policy, spans)
        if total <= max(ENUMERATE_LIMIT, 2 * len(store)):
            qp.inner_keys, qp.boundary_keys = decompose(grid_ranges, policy)
            inner = store.multi_get(qp.inner_keys)
            boundary = store.multi_get(qp.boundary_keys)
        else:
            qp.keys_enumerated = False
            inner, boundary = {}, {}
            for key, value in store.items():
                c = classify(key, spans)
                if c == "inner":
                    inner[key] = value
                elif c == "boundary":
                    boundary[key] = value
            qp.inner_keys, qp.boundary_keys = set(inner), set(boundary)
    inner_locs = [v.location for v in inner.values()]
    boundary_locs = sorted((v.location for v in boundary.values()), key=_loc_order)
    qp.inner_locations = inner_locs
    if qp.is_aggregation:
        # fixed merge order: float sums must not depend on how the key set was produced
        qp.inner_subresult = merge_all(table.specs, (inner[k].header for k in sorted(inner)))
        qp.read_slices = boundary_locs
    else:
        qp.read_slices = sorted(inner_locs + boundary_locs, key=_loc_order)
    return qp


@dataclass
class QueryMetrics:
    strategy: str = "dgf"
    splits_chosen: int = 0
    slices_read: int = 0
    records_read: int = 0
    bytes_read: int = 0
    inner_cells: int = 0
    boundary_cells: int = 0
    entries: int = 0
    fragments: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "splits_chosen": self.splits_chosen,
            "slices_read": self.slices_read,
            "records_read": self.records_read,
            "bytes_read": self.bytes_read,
            "inner_cells": self.inner_cells,
            "boundary_cells": self.boundary_cells,
            "entries": self.entries,
        }


@dataclass
class QueryResult:
    kind: str
    value: object  # dict for aggregate/group_by, list of row tuples for filter/join
    metrics: QueryMetrics
    plan: QueryPlan | None = None
    columns: list | None = None

    def rows_json(self, schema: Schema) -> list:
        if self.kind == "aggregate":
            return [self.value]
        if self.kind == "group_by":
            return [{"group": schema.render(self.columns[0], g), **vals} for g, vals in sorted(self.value.items())]
        if self.kind == "filter":
            names = schema.names
            return [[schema.render(n, v) for n, v in zip(names, row)] for row in self.value]
        return [list(row) for row in self.value]

    def to_json(self, schema: Schema) -> dict:
        return {"kind": self.kind, "rows": self.rows_json(schema), "metrics": self.metrics.to_json()}


# --- row sinks shared by every access path -------------------------------------------------

def _needed_specs(requests: Sequence[str]) -> tuple:
    out = []
    for r in requests:
        for s in required_specs(r):
            if s not in out:
                out.append(s)
    return tuple(out)


def aggregate_rows(rows: Iterable[Sequence], schema: Schema, requests: Sequence[str]) -> dict:
    acc = Accumulator(_needed_specs(requests), schema)
    for row in rows:
        acc.add(row)
    h = acc.header()
    return {r: finalize(h, r) for r in requests}


def group_rows(rows: Iterable[Sequence], schema: Schema, group_field: str, requests: Sequence[str]) -> dict:
    specs = _needed_specs(requests)
    gi = schema.index(group_field)
    groups: dict = {}
    for row in rows:
        acc = groups.get(row[gi])
        if acc is None:
            acc = groups[row[gi]] = Accumulator(specs, schema)
        acc.add(row)
    out = {}
    for g, acc in groups.items():
        h = acc.header()
        out[g] = {r: finalize(h, r) for r in requests}
    return out


def join_columns(schema: Schema, spec: JoinSpec) -> tuple[list, Callable]:
    """Output column names and a function ``(fact_row, dim_row) -> output row``."""
    fact_names = schema.names
    dim_names = [n if n not in fact_names else f"dim.{n}" for n in spec.dim_schema.names]
    if spec.fields is None:
        return fact_names + dim_names, lambda a, b: tuple(a) + tuple(b)
    picks = []
    for name in spec.fields:
        if name in fact_names:
            picks.append((0, fact_names.index(name)))
        elif name in dim_names:
            picks.append((1, dim_names.index(name)))
        elif name in spec.dim_schema:
            picks.append((1, spec.dim_schema.index(name)))
        else:
            raise PolicyError(f"join output field {name!r} is not in either table")
    return list(spec.fields), lambda a, b: tuple((a, b)[side][i] for side, i in picks)


def join_rows(rows: Iterable[Sequence], schema: Schema, spec: JoinSpec) -> tuple[list, list]:
    """Hash join of fact rows against an in-memory dimension table (duplicates multiply)."""
    di = spec.dim_schema.index(spec.dim_on)
    fi = schema.index(spec.on)
    table: dict = {}
    for drow in spec.dim_rows:
        table.setdefault(drow[di], []).append(drow)
    columns, emit = join_columns(schema, spec)
    out = []
    for row in rows:
        for drow in table.get(row[fi], ()):
            out.append(emit(row, drow))
    return columns, out


def evaluate(query: Query, rows: Iterable[Sequence], schema: Schema):
    """``(value, columns)`` for a query over an iterable of already-filtered rows."""
    if query.kind == "aggregate":
        return aggregate_rows(rows, schema, query.aggregates), None
    if query.kind == "group_by":
        return group_rows(rows, schema, query.group_by, query.aggregates), [query.group_by]
    if query.kind == "filter":
        return list(rows), schema.names
    return join_rows(rows, schema, query.join)[::-1]


# --- DGF execution -------------------------------------------------------------------------------

def _chosen(qp: QueryPlan, table):
    files = sorted({loc.file for loc in qp.read_slices})
    if not files:
        return [], {}
    return filter_splits(qp.read_slices, table.splits(files), table.segstore)


def _metrics(qp: QueryPlan, table, chosen, stats: ReadStats) -> QueryMetrics:
    return QueryMetrics(
        strategy="dgf",
        splits_chosen=len(chosen),
        slices_read=len(qp.read_slices),
        records_read=stats.records_read,
        bytes_read=stats.bytes_read,
        inner_cells=qp.inner_cells,
        boundary_cells=qp.boundary_cells,
        entries=len(table.store),
        fragments=stats.fragments,
    )


def _run_splits(qp: QueryPlan, table, work: Callable, threads: int = 1):
    """Apply ``work(rows_iterable) -> partial`` to each chosen split; returns (partials, chosen, stats)."""
    chosen, sp_plan = _chosen(qp, table)
    parse = table.schema.parse_line
    match = qp.predicate.matcher(table.schema)

    def one(split):
        reader = read_split(table.segstore, split, sp_plan[split])

        def rows():
            for chunk in reader.chunks():
                for line in chunk:
                    row = parse(line)
                    if match(row):
                        yield row

        partial = work(rows())
        return partial, reader.stats

    if threads > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, chosen))
    else:
        results = [one(sp) for sp in chosen]
    stats = ReadStats()
    for _p, st in results:
        stats.add(st)
    return [p for p, _s in results], chosen, stats


def execute_aggregation(qp: QueryPlan, table, *, threads: int = 1) -> QueryResult:
    """Merge the inner sub-result with the boundary records that pass the exact predicate."""
    if not qp.is_aggregation:
        raise PolicyError("execute_aggregation needs an aggregation plan")
    specs = table.specs

    def work(rows):
        acc = Accumulator(specs, table.schema)
        for row in rows:
            acc.add(row)
        return acc.header()

    partials, chosen, stats = _run_splits(qp, table, work, threads)
    total = qp.inner_subresult if qp.inner_subresult is not None else Header(specs)
    for h in partials:
        total = merge(total, h)
    value = {r: finalize(total, r) for r in qp.requests}
    return QueryResult("aggregate", value, _metrics(qp, table, chosen, stats), qp)


class RecordStream:
    """Rows satisfying the full predicate; ``metrics`` is complete once iteration finishes."""

    def __init__(self, qp: QueryPlan, table, threads: int = 1):
        self.plan = qp
        self.table = table
        self.threads = threads
        self.metrics = QueryMetrics(inner_cells=qp.inner_cells, boundary_cells=qp.boundary_cells,
                                    entries=len(table.store), slices_read=len(qp.read_slices))

    def __iter__(self) -> Iterator[tuple]:
        parts, chosen, stats = _run_splits(self.plan, self.table, list, self.threads)
        self.metrics = _metrics(self.plan, self.table, chosen, stats)
        for part in parts:
            yield from part


def execute_filter(qp: QueryPlan, table, *, threads: int = 1) -> RecordStream:
    if qp.is_aggregation:
        raise PolicyError("execute_filter needs a non-aggregation plan")
    return RecordStream(qp, table, threads)


def execute_group_by(qp: QueryPlan, table, group_field: str, aggregates: Sequence[str], *,
                     threads: int = 1) -> QueryResult:
    stream = execute_filter(qp, table, threads=threads)
    aggregates = [normalize_request(a) for a in aggregates]
    value = group_rows(stream, table.schema, group_field, aggregates)
    return QueryResult("group_by", value, stream.metrics, qp, [group_field])


def execute_join(qp: QueryPlan, table, dim_table: JoinSpec, *, threads: int = 1) -> QueryResult:
    stream = execute_filter(qp, table, threads=threads)
    columns, rows = join_rows(stream, table.schema, dim_table)
    return QueryResult("join", rows, stream.metrics, qp, columns)


def run_query(table, query: Query, *, threads: int = 1) -> QueryResult:
    """Plan and execute ``query`` on ``table`` through the index."""
    qp = plan(query.where, table, query.is_aggregation, query.aggregates)
    if query.kind == "aggregate":
        if qp.is_aggregation:
            return execute_aggregation(qp, table, threads=threads)
        stream = execute_filter(qp, table, threads=threads)
        value = aggregate_rows(stream, table.schema, query.aggregates)
        return QueryResult("aggregate", value, stream.metrics, qp)
    if query.kind == "group_by":
        return execute_group_by(qp, table, query.group_by, query.aggregates, threads=threads)
    if query.kind == "join":
        return execute_join(qp, table, query.join, threads=threads)
    stream = execute_filter(qp, table, threads=threads)
    rows = list(stream)
    return QueryResult("filter", rows, stream.metrics, qp, table.schema.names)


def load_query(path_or_obj, schema: Schema) -> Query:
    if isinstance(path_or_obj, Mapping):
        return Query.from_json(path_or_obj, schema)
    path = Path(path_or_obj)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"query file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}: invalid JSON: {exc}") from None
    return Query.from_json(obj, schema, base_dir=path.parent)


__all__ = [
    "JoinSpec",
    "Query",
    "QueryMetrics",
    "QueryPlan",
    "QueryResult",
    "RangePredicate",
    "RecordStream",
    "complete_predicate",
    "evaluate",
    "execute_aggregation",
    "execute_filter",
    "execute_group_by",
    "execute_join",
    "plan",
    "point_range",
    "run_query",
]
