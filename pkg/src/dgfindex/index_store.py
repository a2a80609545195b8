"""Key-value index: cell key -> (aggregate header, slice location).

File format, one record per ``\\n``-terminated UTF-8 line::

    dgfidx v1 <policy-spec>
    #bounds <dim> <min-coordinate> <max-coordinate>     (one per dimension)
    <GFUKey>\\t<serialized header>\\t<file>:<start>:<end>  (sorted by cell index)
    #end <entry-count>

``start`` and ``end`` are inclusive byte offsets.  The ``#end`` trailer lets
:meth:`IndexStore.load` detect truncation at a line boundary.
"""

from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .aggregates import Header, parse_header, serialize
from .errors import CorruptIndexFile, InconsistencyError, NotFound, PolicyError
from .grid import GFUKey, SplittingPolicy, parse_policy

MAGIC = "dgfidx"
VERSION = "v1"


@dataclass(frozen=True, order=True)
class SliceLocation:
    file: str
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid slice range {self.start}-{self.end} in {self.file}")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def __str__(self):
        return f"{self.file}:{self.start}:{self.end}"

    @classmethod
    def parse(cls, text: str) -> "SliceLocation":
        name, start, end = text.rsplit(":", 2)
        return cls(name, int(start), int(end))


@dataclass(frozen=True)
class GFUValue:
    header: Header
    location: SliceLocation


@dataclass(frozen=True)
class DimensionBounds:
    dim: str
    min_std: object
    max_std: object


class RWLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class IndexStore:
    def __init__(self, policy: SplittingPolicy):
        self.policy = policy
        self._entries: dict[GFUKey, GFUValue] = {}
        self._bounds: dict[str, tuple[int, int]] = {}  # dim -> (min cell, max cell)
        self.lock = RWLock()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return key in self._entries

    def keys(self):
        return sorted(self._entries)

    def items(self) -> list[tuple[GFUKey, GFUValue]]:
        return sorted(self._entries.items())

    def put(self, key: GFUKey, value: GFUValue, *, replace: bool = False) -> None:
        if len(key) != len(self.policy):
            raise PolicyError(f"key {key!r} does not match a {len(self.policy)}-dimensional policy")
        if not replace and key in self._entries:
            raise InconsistencyError(f"duplicate cell key {self.policy.render_key(key)}")
        self._entries[key] = value

    def get(self, key: GFUKey) -> GFUValue:
        try:
            return self._entries[key]
        except KeyError:
            raise NotFound(f"no entry for cell {self.policy.render_key(key)}") from None

    def multi_get(self, keys: Iterable[GFUKey]) -> dict[GFUKey, GFUValue]:
        entries = self._entries
        return {k: entries[k] for k in keys if k in entries}

    # bounds are kept as cell indices; the public view is coordinates

    def put_bounds(self, b: DimensionBounds) -> None:
        d = self.policy.dim(b.dim)
        lo, hi = d.cell_index(b.min_std), d.cell_index(b.max_std)
        if d.edge(lo) != b.min_std or d.edge(hi) != b.max_std:
            raise PolicyError(f"bounds for {b.dim} are not grid coordinates")
        if lo > hi:
            raise PolicyError(f"bounds for {b.dim}: min above max")
        self._bounds[b.dim] = (lo, hi)

    def put_cell_bounds(self, dim: str, lo: int, hi: int) -> None:
        self.policy.dim(dim)
        self._bounds[dim] = (lo, hi)

    def get_bounds(self, dim: str) -> DimensionBounds:
        lo, hi = self.cell_bounds(dim)
        d = self.policy.dim(dim)
        return DimensionBounds(dim, d.edge(lo), d.edge(hi))

    def cell_bounds(self, dim: str) -> tuple[int, int]:
        try:
            return self._bounds[dim]
        except KeyError:
            raise NotFound(f"no bounds stored for dimension {dim!r}") from None

    def has_bounds(self) -> bool:
        return len(self._bounds) == len(self.policy)

    def copy(self) -> "IndexStore":
        other = IndexStore(self.policy)
        other._entries = dict(self._entries)
        other._bounds = dict(self._bounds)
        return other

    def swap_from(self, other: "IndexStore") -> None:
        """Atomically replace this store's contents (writer role)."""
        with self.lock.write():
            self._entries = other._entries
            self._bounds = other._bounds

    def __eq__(self, other):
        return (
            isinstance(other, IndexStore)
            and self.policy == other.policy
            and self._entries == other._entries
            and self._bounds == other._bounds
        )

    # persistence

    def lines(self) -> Iterator[str]:
        pol = self.policy
        yield f"{MAGIC} {VERSION} {pol.to_spec()}\n"
        for d in pol.dims:
            if d.name in self._bounds:
                lo, hi = self._bounds[d.name]
                yield f"#bounds {d.name} {d.render(lo)} {d.render(hi)}\n"
        for key, value in sorted(self._entries.items()):
            yield f"{pol.render_key(key)}\t{serialize(value.header)}\t{value.location}\n"
        yield f"#end {len(self._entries)}\n"

    def persist(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(self.lines())
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "IndexStore":
        path = Path(path)
        with open(path, "r", encoding="utf-8", newline="") as f:
            return cls.parse(f, str(path))

    @classmethod
    def parse(cls, lines: Iterable[str], source: str = "<index>") -> "IndexStore":
        it = iter(lines)
        first = next(it, None)
        if first is None or not first.endswith("\n"):
            raise CorruptIndexFile(source, 1, "truncated header line")
        parts = first.rstrip("\n").split(" ", 2)
        if len(parts) != 3 or parts[0] != MAGIC:
            raise CorruptIndexFile(source, 1, "not an index file")
        if parts[1] != VERSION:
            raise CorruptIndexFile(source, 1, f"unsupported version {parts[1]!r} (expected {VERSION})")
        try:
            store = cls(parse_policy(parts[2]))
        except PolicyError as exc:
            raise CorruptIndexFile(source, 1, str(exc)) from None
        pol = store.policy
        ended = None
        line_no = 1
        files: dict[str, str] = {}
        for line_no, line in enumerate(it, 2):
            if ended is not None:
                raise CorruptIndexFile(source, line_no, "data after #end trailer")
            if not line.endswith("\n"):
                raise CorruptIndexFile(source, line_no, "truncated line")
            line = line[:-1]
            try:
                if line.startswith("#bounds "):
                    _, dim, lo, hi = line.split(" ")
                    d = pol.dim(dim)
                    store._bounds[dim] = (d.parse_coord(lo), d.parse_coord(hi))
                elif line.startswith("#end "):
                    ended = int(line[5:])
                else:
                    key_s, header_s, loc_s = line.split("\t")
                    name, start, end = loc_s.rsplit(":", 2)
                    name = files.setdefault(name, name)  # share one string per segment file
                    store.put(pol.parse_key(key_s), GFUValue(parse_header(header_s),
                                                             SliceLocation(name, int(start), int(end))))
            except CorruptIndexFile:
                raise
            except (ValueError, PolicyError, InconsistencyError) as exc:
                raise CorruptIndexFile(source, line_no, f"bad line: {exc}") from None
        if ended is None:
            raise CorruptIndexFile(source, line_no + 1, "missing #end trailer (file truncated)")
        if ended != len(store._entries):
            raise CorruptIndexFile(source, line_no, f"trailer says {ended} entries, found {len(store._entries)}")
        return store
