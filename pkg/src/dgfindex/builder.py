"""Index construction: map records to cells, shuffle by cell, write one slice per cell.

Table directory layout::

    <table>/table.json      metadata (schema, policy, precompute specs, split size, ...)
    <table>/schema.txt      the record schema, ``name:kind`` per line
    <table>/index.dgf       the index store (see :mod:`dgfindex.index_store`)
    <table>/segments/       seg-00000.dat, seg-00001.dat, ...
    <table>/quarantine.txt  rejected input lines, each followed by the delimiter and a reason code
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import os
import pickle
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .aggregates import Accumulator, AggregateSpec, Header, parse_specs
from .errors import (
    BelowGridMinimum,
    DataError,
    InconsistencyError,
    MalformedRecord,
    NotFound,
    PolicyError,
    StaleAppend,
)
from .grid import GFUKey, SplittingPolicy, parse_policy
from .index_store import GFUValue, IndexStore, SliceLocation
from .schema import Schema
from .segstore import SegmentStore, SegmentWriter, enumerate_splits

log = logging.getLogger(__name__)

META_FILE = "table.json"
SCHEMA_FILE = "schema.txt"
INDEX_FILE = "index.dgf"
SEGMENT_DIR = "segments"
QUARANTINE_FILE = "quarantine.txt"
LOCK_FILE = ".lock"
TABLE_FORMAT = "dgftable v1"

DEFAULT_SPLIT_SIZE = 1 << 20
DEFAULT_SEGMENT_SIZE = 8 << 20


@dataclass
class BuildConfig:
    policy: SplittingPolicy
    agg_specs: Sequence[AggregateSpec] = ()
    split_size: int = DEFAULT_SPLIT_SIZE
    output_dir: Path | None = None
    segment_size: int = DEFAULT_SEGMENT_SIZE
    max_quarantine_rate: float = 0.05
    run_size: int = 1_000_000  # records held in memory per sorted shuffle run
    time_dim: str | None = None

    def __post_init__(self):
        if isinstance(self.policy, str):
            self.policy = parse_policy(self.policy)
        self.agg_specs = parse_specs(self.agg_specs)
        if self.split_size <= 0:
            raise PolicyError("split_size must be positive")
        if self.time_dim is None:
            self.time_dim = next((d.name for d in self.policy.dims if d.kind == "date"), None)
        elif self.time_dim not in self.policy:
            raise PolicyError(f"time dimension {self.time_dim!r} is not indexed")


class Precomputer:
    """Parses only the aggregate argument fields and folds them into a header."""

    def __init__(self, specs: Sequence[AggregateSpec], schema: Schema):
        self.specs = tuple(specs)
        names = []
        for s in self.specs:
            for a in s.args:
                if a not in names:
                    names.append(a)
        self.names = names
        self.sub_schema = Schema([schema.field(n) for n in names], schema.delimiter)
        self.parse = schema.parser(names)
        self._template = Accumulator(self.specs, self.sub_schema)  # also validates argument kinds

    def accumulator(self) -> Accumulator:
        return self._template.clone()

    def fold(self, lines: Iterable[str]) -> Header:
        acc = self.accumulator()
        parse = self.parse
        for line in lines:
            acc.add(parse(line))
        return acc.header()


class Mapper:
    """Computes the cell key of a raw line (the map side)."""

    def __init__(self, schema: Schema, policy: SplittingPolicy):
        for d in policy.dims:
            f = schema.field(d.name)
            if d.kind == "date" and f.kind != "date":
                raise PolicyError(f"dimension {d.name!r} has a date grid but field kind {f.kind}")
            if d.kind == "numeric" and not f.numeric:
                raise PolicyError(f"dimension {d.name!r} has a numeric grid but field kind {f.kind}")
        self.policy = policy
        self.parse = schema.parser(policy.names)
        self._cell = [d.cell_index for d in policy.dims]

    def key(self, line: str) -> GFUKey:
        values = self.parse(line)
        return tuple([c(v) for c, v in zip(self._cell, values)])


def map_assign(line: str, schema: Schema, policy: SplittingPolicy) -> tuple[GFUKey, str]:
    """Cell key and unchanged record; raises MalformedRecord/BelowGridMinimum for bad lines."""
    return Mapper(schema, policy).key(line), line


def reduce_slice(key: GFUKey, records: Sequence[bytes], writer: SegmentWriter, pre: Precomputer) -> GFUValue:
    """Write one cell's records contiguously and return its index value."""
    data = b"".join(records)
    if not data:
        raise ValueError("a slice needs at least one record")
    start = writer.write(data)
    header = pre.fold(r.decode("utf-8") for r in records)
    return GFUValue(header, SliceLocation(writer.name, start, start + len(data) - 1))


class ExternalSorter:
    """Sorts ``(key, seq, payload)`` items with bounded memory: sorted runs spill to disk, then k-way merge."""

    def __init__(self, run_size: int, tmpdir=None):
        self.run_size = max(1, run_size)
        self.tmpdir = tmpdir
        self._buf: list = []
        self._runs: list[str] = []

    def add(self, item) -> None:
        self._buf.append(item)
        if len(self._buf) >= self.run_size:
            self._spill()

    def _spill(self):
        self._buf.sort()
        fd, path = tempfile.mkstemp(prefix="dgf-run-", suffix=".bin", dir=self.tmpdir)
        with os.fdopen(fd, "wb") as f:
            for i in range(0, len(self._buf), 4096):
                pickle.dump(self._buf[i:i + 4096], f, protocol=pickle.HIGHEST_PROTOCOL)
        self._runs.append(path)
        self._buf = []

    @staticmethod
    def _read_run(path):
        with open(path, "rb") as f:
            while True:
                try:
                    chunk = pickle.load(f)
                except EOFError:
                    return
                yield from chunk

    def sorted(self) -> Iterator:
        self._buf.sort()
        if not self._runs:
            yield from self._buf
            return
        try:
            yield from heapq.merge(self._buf, *(self._read_run(p) for p in self._runs))
        finally:
            self.cleanup()

    def cleanup(self):
        for p in self._runs:
            try:
                os.unlink(p)
            except FileNotFoundError:
                pass
        self._runs = []

    @property
    def spilled_runs(self) -> int:
        return len(self._runs)


def read_lines(paths: Iterable) -> Iterator[tuple[str, bytes]]:
    """Yield ``(source, line)`` with every line newline-terminated."""
    for p in paths:
        with open(p, "rb") as f:
            for raw in f:
                if not raw.endswith(b"\n"):
                    raw += b"\n"
                yield str(p), raw


@dataclass
class MapResult:
    sorter: ExternalSorter
    total: int = 0
    quarantined: int = 0
    max_record_len: int = 0


def _map_phase(paths, schema, policy, pre, run_size, quarantine, seq_start=0, tmpdir=None) -> MapResult:
    mapper = Mapper(schema, policy)
    res = MapResult(ExternalSorter(run_size, tmpdir))
    key_of = mapper.key
    validate = pre.parse if pre.names else None
    add = res.sorter.add
    seq = seq_start
    maxlen = 0
    for _src, raw in read_lines(paths):
        res.total += 1
        try:
            line = raw.decode("utf-8")
            key = key_of(line)
            if validate is not None:
                validate(line)
        except UnicodeDecodeError:
            quarantine(raw, "ENCODING")
            res.quarantined += 1
            continue
        except BelowGridMinimum:
            quarantine(raw, "BELOW_MIN")
            res.quarantined += 1
            continue
        except MalformedRecord as exc:
            quarantine(raw, exc.reason)
            res.quarantined += 1
            continue
        if len(raw) > maxlen:
            maxlen = len(raw)
        add((key, seq, raw))
        seq += 1
    res.max_record_len = maxlen
    return res


class _Quarantine:
    def __init__(self, path: Path, delimiter: str, mode="w"):
        self.path = path
        self.delimiter = delimiter.encode("utf-8")
        self._f = open(path, mode + "b")
        self.count = 0

    def __call__(self, raw: bytes, reason: str):
        self._f.write(raw.rstrip(b"\r\n") + self.delimiter + reason.encode("ascii") + b"\n")
        self.count += 1

    def close(self):
        self._f.close()


def _check_quarantine(res: MapResult, limit: float):
    if res.total and res.quarantined / res.total > limit:
        raise DataError(
            f"{res.quarantined} of {res.total} records quarantined "
            f"({res.quarantined / res.total:.1%} > {limit:.1%} threshold)")


def _reduce_phase(items: Iterator, seg_dir: Path, first_seg: int, segment_size: int,
                  pre: Precomputer, store: IndexStore, ndims: int):
    """Pack slices in key order into segment files; returns (segment names, records written, bounds)."""
    segments: list[str] = []
    writer = None
    seg_no = first_seg
    written = 0
    lo = [None] * ndims
    hi = [None] * ndims
    try:
        for key, group in itertools.groupby(items, key=lambda it: it[0]):
            if writer is None or writer.offset >= segment_size:
                if writer is not None:
                    writer.close()
                name = f"seg-{seg_no:05d}.dat"
                seg_no += 1
                writer = SegmentWriter(seg_dir / name)
                segments.append(name)
            records = [raw for _k, _s, raw in group]
            store.put(key, reduce_slice(key, records, writer, pre))
            written += len(records)
            for i, k in enumerate(key):
                if lo[i] is None or k < lo[i]:
                    lo[i] = k
                if hi[i] is None or k > hi[i]:
                    hi[i] = k
    finally:
        if writer is not None:
            writer.close()
    return segments, written, list(zip(lo, hi))


class BuiltTable:
    """An index plus its segment files, opened from a table directory."""

    def __init__(self, directory, meta: dict, store: IndexStore):
        self.directory = Path(directory)
        self.meta = meta
        self.store = store
        self.schema = Schema.from_json(meta["schema"], meta.get("delimiter", ","))
        self.policy = store.policy
        self.specs = parse_specs(meta.get("precompute", []))
        self.split_size = int(meta["split_size"])
        self.segment_size = int(meta.get("segment_size", DEFAULT_SEGMENT_SIZE))
        self.time_dim = meta.get("time_dim")
        self.segstore = SegmentStore(self.directory / SEGMENT_DIR)

    @property
    def segments(self) -> list[str]:
        return list(self.meta.get("segments", []))

    @property
    def record_count(self) -> int:
        return int(self.meta.get("records", 0))

    @property
    def quarantined(self) -> int:
        return int(self.meta.get("quarantined", 0))

    @property
    def index_path(self) -> Path:
        return self.directory / INDEX_FILE

    def segment_paths(self) -> list[Path]:
        return [self.segstore.path(s) for s in self.segments]

    def splits(self, files: Iterable[str] | None = None):
        names = self.segments if files is None else list(files)
        return enumerate_splits(self.segstore.sizes(names), self.split_size)

    @classmethod
    def open(cls, directory) -> "BuiltTable":
        directory = Path(directory)
        meta_path = directory / META_FILE
        if not meta_path.is_file():
            raise DataError(f"{directory} is not a table directory (no {META_FILE})")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("format") != TABLE_FORMAT:
            raise DataError(f"{meta_path}: unsupported table format {meta.get('format')!r}")
        store = IndexStore.load(directory / INDEX_FILE)
        if store.policy.to_spec() != meta["policy"]:
            raise InconsistencyError(f"{directory}: index policy does not match table metadata")
        return cls(directory, meta, store)

    def write_meta(self, meta: dict | None = None) -> None:
        if meta is not None:
            self.meta = meta
        _write_json_atomic(self.directory / META_FILE, self.meta)


def _write_json_atomic(path: Path, payload: dict):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


@contextmanager
def table_lock(directory):
    """Exclusive writer lock on a table directory (a lock file created with O_EXCL)."""
    path = Path(directory) / LOCK_FILE
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"table {directory} is locked by another writer ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(path)
        except FileNotFoundError:
            pass


def build_index(inputs: Sequence, cfg: BuildConfig, schema: Schema) -> BuiltTable:
    """Reorganize ``inputs`` into slices under ``cfg.output_dir`` and build the index.

    The table is assembled in a staging directory and renamed into place, so a
    failed build leaves nothing behind.
    """
    if cfg.output_dir is None:
        raise PolicyError("BuildConfig.output_dir is required")
    out = Path(cfg.output_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise DataError(f"output directory {out} already exists and is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.staging-", dir=out.parent))
    try:
        _build_into(staging, [Path(p) for p in inputs], cfg, schema)
        if out.exists():
            out.rmdir()
        os.replace(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return BuiltTable.open(out)


def _build_into(directory: Path, inputs: list[Path], cfg: BuildConfig, schema: Schema) -> None:
    policy = cfg.policy
    pre = Precomputer(cfg.agg_specs, schema)
    seg_dir = directory / SEGMENT_DIR
    seg_dir.mkdir()
    schema.save(directory / SCHEMA_FILE)
    quarantine = _Quarantine(directory / QUARANTINE_FILE, schema.delimiter)
    try:
        res = _map_phase(inputs, schema, policy, pre, cfg.run_size, quarantine, tmpdir=directory)
    finally:
        quarantine.close()
    try:
        _check_quarantine(res, cfg.max_quarantine_rate)
        if res.max_record_len >= cfg.split_size:
            raise PolicyError(
                f"split_size {cfg.split_size} must exceed the longest record ({res.max_record_len} bytes)")
        store = IndexStore(policy)
        segments, written, bounds = _reduce_phase(
            res.sorter.sorted(), seg_dir, 0, cfg.segment_size, pre, store, len(policy))
    finally:
        res.sorter.cleanup()
    if written + res.quarantined != res.total:
        raise InconsistencyError(f"record conservation violated: {res.total} in, "
                                 f"{written} stored, {res.quarantined} quarantined")
    if written:
        for d, (lo, hi) in zip(policy.dims, bounds):
            store.put_cell_bounds(d.name, lo, hi)
    store.persist(directory / INDEX_FILE)
    meta = {
        "format": TABLE_FORMAT,
        "schema": schema.to_json(),
        "delimiter": schema.delimiter,
        "policy": policy.to_spec(),
        "precompute": [str(s) for s in cfg.agg_specs],
        "split_size": cfg.split_size,
        "segment_size": cfg.segment_size,
        "time_dim": cfg.time_dim,
        "segments": segments,
        "sources": [str(p) for p in inputs],
        "records": written,
        "quarantined": res.quarantined,
        "max_quarantine_rate": cfg.max_quarantine_rate,
    }
    _write_json_atomic(directory / META_FILE, meta)
    log.info("built %d slices from %d records (%d quarantined)", len(store), written, res.quarantined)


def append_batch(inputs: Sequence, table: BuiltTable, *, run_size: int = 1_000_000) -> BuiltTable:
    """Add records whose time cells lie strictly after the table's current time bound.

    Existing segment files and entries are left untouched; new slices go to new
    segment files and the index is swapped in atomically.
    """
    time_dim = table.time_dim
    if time_dim is None:
        raise PolicyError("table has no time dimension; append is only defined along time")
    policy, schema = table.policy, table.schema
    t_pos = policy.position(time_dim)
    pre = Precomputer(table.specs, schema)
    with table_lock(table.directory):
        quarantine = _Quarantine(table.directory / QUARANTINE_FILE, schema.delimiter, mode="a")
        try:
            res = _map_phase([Path(p) for p in inputs], schema, policy, pre, run_size, quarantine,
                             tmpdir=table.directory)
        finally:
            quarantine.close()
        new_segments: list[str] = []
        try:
            _check_quarantine(res, float(table.meta.get("max_quarantine_rate", 0.05)))
            if res.max_record_len >= table.split_size:
                raise PolicyError(f"split_size {table.split_size} must exceed the longest record")
            items = list(res.sorter.sorted())
            if items and table.store.has_bounds():
                horizon = table.store.cell_bounds(time_dim)[1]
                for key, _seq, raw in items:
                    if key[t_pos] <= horizon or key in table.store:
                        raise StaleAppend(
                            f"out-of-order append: record {raw.decode('utf-8', 'replace').rstrip()!r} falls in "
                            f"time cell {policy.dim(time_dim).render(key[t_pos])}, not after the current bound "
                            f"{policy.dim(time_dim).render(horizon)}")
            staged = table.store.copy()
            first_seg = 1 + max((int(s[4:9]) for s in table.segments), default=-1)
            new_segments, written, bounds = _reduce_phase(
                iter(items), table.segstore.directory, first_seg, table.segment_size, pre, staged, len(policy))
            if written:
                for d, (lo, hi) in zip(policy.dims, bounds):
                    try:
                        olo, ohi = staged.cell_bounds(d.name)
                        lo, hi = min(lo, olo), max(hi, ohi)
                    except NotFound:
                        pass
                    staged.put_cell_bounds(d.name, lo, hi)
            staged.persist(table.index_path)
        except BaseException:
            res.sorter.cleanup()
            for name in new_segments:
                try:
                    os.unlink(table.segstore.path(name))
                except FileNotFoundError:
                    pass
            raise
        meta = dict(table.meta)
        meta["segments"] = table.segments + new_segments
        meta["sources"] = list(meta.get("sources", [])) + [str(p) for p in inputs]
        meta["records"] = table.record_count + written
        meta["quarantined"] = table.quarantined + res.quarantined
        table.store.swap_from(staged)
        table.write_meta(meta)
    return table


def iter_slices(table: BuiltTable) -> Iterator[tuple[GFUKey, GFUValue, list[str]]]:
    """Every entry with the decoded record lines of its slice (full rescan)."""
    for key, value in table.store.items():
        loc = value.location
        data = table.segstore.read_range(loc.file, loc.start, loc.end)
        lines = data.decode("utf-8").split("\n")
        if lines[-1] != "":
            raise InconsistencyError(f"slice {loc} does not end at a record boundary")
        lines.pop()
        yield key, value, lines


def rebuild_headers(table: BuiltTable, specs) -> BuiltTable:
    """Recompute every header for a new spec list by rescanning slices; data is not moved."""
    specs = parse_specs(specs)
    pre = Precomputer(specs, table.schema)
    with table_lock(table.directory):
        staged = table.store.copy()
        for key, value, lines in iter_slices(table):
            staged.put(key, GFUValue(pre.fold(lines), value.location), replace=True)
        staged.persist(table.index_path)
        meta = dict(table.meta)
        meta["precompute"] = [str(s) for s in specs]
        table.store.swap_from(staged)
        table.specs = specs
        table.write_meta(meta)
    return table


__all__ = [
    "BuildConfig",
    "BuiltTable",
    "ExternalSorter",
    "Mapper",
    "Precomputer",
    "append_batch",
    "build_index",
    "iter_slices",
    "map_assign",
    "rebuild_headers",
    "reduce_slice",
    "table_lock",
]
