"""Reference access paths: full-table scan and a Compact-Index emulation.

The scan oracle loads files with pandas and answers queries with vectorized
masks, so it shares no parsing or filtering code with the index path.  The
compact emulation keeps, per distinct combination of indexed values and file,
the set of split offsets holding such records; a query can only prune whole
splits and then scans every chosen split in full.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .grid import SplittingPolicy
from .query import (
    JoinSpec,
    Query,
    QueryMetrics,
    QueryResult,
    RangePredicate,
    evaluate,
    join_columns,
)
from .schema import Schema


def _read_frame(paths: Sequence, schema: Schema) -> pd.DataFrame:
    dtypes = {}
    for f in schema.fields:
        dtypes[f.name] = {"int": "int64", "float": "float64"}.get(f.kind, "str")
    frames = []
    for p in paths:
        if os.path.getsize(p) == 0:
            continue
        frames.append(pd.read_csv(
            p, sep=schema.delimiter, header=None, names=schema.names, dtype=dtypes,
            keep_default_na=False, na_filter=False, float_precision="round_trip", engine="c",
        ))
    if not frames:
        df = pd.DataFrame({n: pd.Series(dtype=dtypes[n] if dtypes[n] != "str" else object) for n in schema.names})
    else:
        df = pd.concat(frames, ignore_index=True) if len(frames) > 1 else frames[0]
    for f in schema.fields:
        if f.kind == "date":
            days = pd.to_datetime(df[f.name], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
            df[f.name] = days.astype("int64")
    return df


class ScanOracle:
    """Ground truth over whole files; every query counts every record as read."""

    def __init__(self, paths: Iterable, schema: Schema):
        self.paths = [Path(p) for p in paths]
        self.schema = schema
        self.frame = _read_frame(self.paths, schema)
        self.columns = {n: self.frame[n].to_numpy() for n in schema.names}
        self.total_bytes = sum(os.path.getsize(p) for p in self.paths)

    def __len__(self):
        return len(self.frame)

    def mask(self, pred: RangePredicate) -> np.ndarray:
        m = np.ones(len(self.frame), dtype=bool)
        for name, (lo, hi) in pred.ranges.items():
            col = self.columns[name]
            if lo != -math.inf:
                m &= col >= lo
            if hi != math.inf:
                m &= col < hi
        return m

    def count(self, pred: RangePredicate) -> int:
        return int(self.mask(pred).sum())

    def _metrics(self) -> QueryMetrics:
        return QueryMetrics(strategy="scan", records_read=len(self.frame), bytes_read=self.total_bytes,
                            splits_chosen=0)

    @staticmethod
    def _agg(frame: pd.DataFrame, request: str):
        fn, _, arg = request.partition("(")
        arg = arg[:-1]
        if fn == "count":
            return int(len(frame))
        parts = arg.split("*")
        x = frame[parts[0]].to_numpy(dtype="float64")
        if len(parts) == 2:
            x = x * frame[parts[1]].to_numpy(dtype="float64")
        if len(x) == 0:
            return 0.0 if fn == "sum" else None
        if fn == "sum":
            return float(np.sum(x))
        if fn == "avg":
            return float(np.sum(x)) / len(x)
        if fn == "min":
            return float(np.min(x))
        return float(np.max(x))

    def query(self, q: Query) -> QueryResult:
        sel = self.frame[self.mask(q.where)]
        if q.kind == "aggregate":
            value = {r: self._agg(sel, r) for r in q.aggregates}
            return QueryResult("aggregate", value, self._metrics())
        if q.kind == "group_by":
            value = {}
            for g, part in sel.groupby(q.group_by, sort=True):
                key = g.item() if hasattr(g, "item") else g
                value[key] = {r: self._agg(part, r) for r in q.aggregates}
            return QueryResult("group_by", value, self._metrics(), columns=[q.group_by])
        if q.kind == "filter":
            rows = list(zip(*(sel[n].tolist() for n in self.schema.names))) if len(sel) else []
            return QueryResult("filter", rows, self._metrics(), columns=self.schema.names)
        return self._join(sel, q.join)

    def _join(self, sel: pd.DataFrame, spec: JoinSpec) -> QueryResult:
        columns, emit = join_columns(self.schema, spec)
        dim = pd.DataFrame(spec.dim_rows, columns=[f"__d{i}" for i in range(len(spec.dim_schema))])
        di = spec.dim_schema.index(spec.dim_on)
        left = sel.reset_index(drop=True)
        merged = left.merge(dim, how="inner", left_on=spec.on, right_on=f"__d{di}", sort=False)
        ncols = len(self.schema)
        rows = []
        if len(merged):
            cols = [merged[c].tolist() for c in list(self.schema.names) + list(dim.columns)]
            for vals in zip(*cols):
                rows.append(emit(vals[:ncols], vals[ncols:]))
        return QueryResult("join", rows, self._metrics(), columns=columns)

    def region_counts(self, policy: SplittingPolicy, pred: RangePredicate) -> dict:
        """Brute-force census of the query's cell regions.

        Returns record counts of the read region (all intersecting cells), the
        inner region, the boundary region and the accurate answer.
        """
        n = len(self.frame)
        touched = np.ones(n, dtype=bool)
        inner = np.ones(n, dtype=bool)
        for d in policy.dims:
            if d.name not in pred.ranges or n == 0:
                continue
            lo, hi = pred.ranges[d.name]
            vals = self.columns[d.name]
            if d.integral:
                k = (vals - d.min) // d.step
                cell_lo = d.min + k * d.step
                cell_hi = cell_lo + d.step
            else:
                top = int((vals.max() - d.min) // d.step) + 2
                edges = np.array([d.edge(i) for i in range(top + 1)])
                k = np.searchsorted(edges, vals, side="right") - 1
                cell_lo, cell_hi = edges[k], edges[k + 1]
            touched &= (cell_lo < hi) & (cell_hi > lo)
            inner &= (cell_lo >= lo) & (cell_hi <= hi)
        inner &= touched
        accurate = self.count(pred)
        return {
            "read_region": int(touched.sum()),
            "inner": int(inner.sum()),
            "boundary": int((touched & ~inner).sum()),
            "accurate": accurate,
        }


def scan_query(paths: Iterable, schema: Schema, query: Query) -> QueryResult:
    return ScanOracle(paths, schema).query(query)


def _iter_records(path: Path):
    """``(start offset, line bytes)`` for every record of a file."""
    offset = 0
    with open(path, "rb") as f:
        for raw in f:
            yield offset, raw
            offset += len(raw)


@dataclass
class CompactIndexTable:
    dims: list
    split_size: int
    schema: Schema
    rows: dict = field(default_factory=dict)  # (value combination, file) -> sorted split offsets
    files: dict = field(default_factory=dict)  # file -> size

    def __len__(self):
        return len(self.rows)


def compact_build(paths: Iterable, schema: Schema, dims: Sequence[str], split_size: int) -> CompactIndexTable:
    """One row per distinct (indexed-value combination, file) with the split offsets holding it."""
    table = CompactIndexTable(list(dims), split_size, schema)
    parse = schema.parser(list(dims))
    rows: dict = {}
    for p in paths:
        name = str(p)
        table.files[name] = os.path.getsize(p)
        for start, raw in _iter_records(Path(p)):
            combo = parse(raw.decode("utf-8"))
            rows.setdefault((combo, name), set()).add(start - start % split_size)
    table.rows = {k: sorted(v) for k, v in rows.items()}
    return table


def _split_records(path: str, start: int, end: int):
    """Records whose first byte lies in ``[start, end)``."""
    with open(path, "rb") as f:
        if start > 0:
            f.seek(start - 1)
            f.readline()  # finish the record straddling into this split
        pos = f.tell()
        while pos < end:
            raw = f.readline()
            if not raw:
                return
            yield raw
            pos += len(raw)


def compact_query(table: CompactIndexTable, query: Query) -> QueryResult:
    """Prune splits through the compact index, then scan every chosen split in full."""
    schema = table.schema
    checks = [(i, query.where.ranges[d]) for i, d in enumerate(table.dims) if d in query.where.ranges]
    chosen: set = set()
    for (combo, name), offsets in table.rows.items():
        if all(lo <= combo[i] < hi for i, (lo, hi) in checks):
            for off in offsets:
                chosen.add((name, off))
    parse = schema.parse_line
    match = query.where.matcher(schema)
    stats = {"records": 0, "bytes": 0}

    def rows():
        for name, off in sorted(chosen):
            end = min(off + table.split_size, table.files[name])
            for raw in _split_records(name, off, end):
                stats["records"] += 1
                stats["bytes"] += len(raw)
                row = parse(raw.decode("utf-8"))
                if match(row):
                    yield row

    value, columns = evaluate(query, rows(), schema)
    metrics = QueryMetrics(strategy="compact", splits_chosen=len(chosen), records_read=stats["records"],
                           bytes_read=stats["bytes"], entries=len(table.rows))
    return QueryResult(query.kind, value, metrics, columns=columns)


def _agg_equal(request: str, a, b, rel: float) -> bool:
    if a is None or b is None:
        return a is b
    if request.startswith(("sum(", "avg(")):
        return math.isclose(a, b, rel_tol=rel, abs_tol=0.0)
    return a == b


def _aggs_equal(a: dict, b: dict, rel: float) -> bool:
    return a.keys() == b.keys() and all(_agg_equal(r, a[r], b[r], rel) for r in a)


def results_match(a: QueryResult, b: QueryResult, rel: float = 1e-9) -> bool:
    """Exact for counts, extrema and rows (as multisets); ``rel`` relative tolerance for sums and averages."""
    if a.kind != b.kind:
        return False
    if a.kind == "aggregate":
        return _aggs_equal(a.value, b.value, rel)
    if a.kind == "group_by":
        return a.value.keys() == b.value.keys() and all(_aggs_equal(a.value[g], b.value[g], rel) for g in a.value)
    return a.columns == b.columns and sorted(a.value) == sorted(b.value)
