"""Segment files, splits and the slice-skipping reader.

Segment files are raw concatenations of newline-terminated records.  A split
is a fixed-size byte window over one file; a record belongs to the split that
holds its first byte, so when a slice crosses a split edge the cut is moved
forward to the next record start.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import InconsistencyError
from .index_store import SliceLocation

_PROBE = 4096


@dataclass(frozen=True, order=True)
class Split:
    file: str
    start: int
    end: int  # exclusive
    seq: int = 0

    @property
    def length(self) -> int:
        return self.end - self.start

    def __str__(self):
        return f"<{self.file}:{self.seq}>[{self.start},{self.end})"


SlicePlan = dict  # Split -> list[SliceLocation], fragments sorted by start


class SegmentStore:
    """A directory of immutable segment files."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, name: str) -> Path:
        return self.directory / name

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def size(self, name: str) -> int:
        try:
            return os.path.getsize(self.path(name))
        except FileNotFoundError:
            raise InconsistencyError(f"segment file {name!r} is missing from {self.directory}") from None

    def sizes(self, names: Iterable[str]) -> dict[str, int]:
        return {n: self.size(n) for n in names}

    def read_range(self, name: str, start: int, end: int) -> bytes:
        """Bytes ``[start, end]`` (inclusive)."""
        with open(self.path(name), "rb") as f:
            f.seek(start)
            return f.read(end - start + 1)

    def record_start_at_or_after(self, name: str, offset: int, size: int | None = None) -> int:
        """First record start ``>= offset`` (``size`` when there is none)."""
        if size is None:
            size = self.size(name)
        if offset <= 0:
            return 0
        if offset >= size:
            return size
        with open(self.path(name), "rb") as f:
            f.seek(offset - 1)
            pos = offset - 1
            while True:
                chunk = f.read(_PROBE)
                if not chunk:
                    return size
                i = chunk.find(b"\n")
                if i >= 0:
                    return pos + i + 1
                pos += len(chunk)


class SegmentWriter:
    """Append-only writer that reports byte offsets."""

    def __init__(self, path):
        self.path = Path(path)
        self.name = self.path.name
        self._f = open(self.path, "ab")
        self.offset = self._f.tell()

    def write(self, data: bytes) -> int:
        start = self.offset
        self._f.write(data)
        self.offset += len(data)
        return start

    def close(self):
        self._f.flush()
        os.fsync(self._f.fileno())
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def enumerate_splits(sizes: Mapping[str, int], split_size: int) -> list[Split]:
    """Cover each file with contiguous ``split_size`` windows (last one may be short)."""
    if split_size <= 0:
        raise ValueError("split_size must be positive")
    out = []
    for name, size in sizes.items():
        for seq, start in enumerate(range(0, size, split_size)):
            out.append(Split(name, start, min(start + split_size, size), seq))
    return out


def filter_splits(
    slices: Iterable[SliceLocation],
    splits: Sequence[Split],
    store: SegmentStore | None = None,
) -> tuple[list[Split], SlicePlan]:
    """Choose the splits that hold slice bytes and clip every slice to them.

    With ``store`` the clip points are moved to record starts; without it the
    clip is plain byte arithmetic (only valid when split edges fall on record
    boundaries).
    """
    by_file: dict[str, list[Split]] = {}
    for s in splits:
        by_file.setdefault(s.file, []).append(s)
    for lst in by_file.values():
        lst.sort()
    snapped: dict[tuple[str, int], int] = {}

    def snap(sp: Split, offset: int) -> int:
        if store is None:
            return offset
        key = (sp.file, offset)
        if key not in snapped:
            size = by_file[sp.file][-1].end
            snapped[key] = store.record_start_at_or_after(sp.file, offset, size)
        return snapped[key]

    plan: dict[Split, list[SliceLocation]] = {}
    for loc in slices:
        file_splits = by_file.get(loc.file)
        if not file_splits:
            raise InconsistencyError(f"slice {loc} references unknown segment file {loc.file!r}")
        if loc.end >= file_splits[-1].end:
            raise InconsistencyError(f"slice {loc} extends past end of {loc.file!r}")
        split_size = file_splits[0].end - file_splits[0].start
        first = loc.start // split_size
        last = loc.end // split_size
        for sp in file_splits[first:last + 1]:
            lo = max(loc.start, snap(sp, sp.start))
            hi = min(loc.end, snap(sp, sp.end) - 1)
            if lo <= hi:
                plan.setdefault(sp, []).append(SliceLocation(loc.file, lo, hi))
    for frags in plan.values():
        frags.sort(key=lambda x: x.start)
    chosen = sorted(plan)
    return chosen, {sp: plan[sp] for sp in chosen}


@dataclass
class ReadStats:
    records_read: int = 0
    bytes_read: int = 0
    fragments: list = field(default_factory=list)  # SliceLocations actually read

    def add(self, other: "ReadStats") -> None:
        self.records_read += other.records_read
        self.bytes_read += other.bytes_read
        self.fragments.extend(other.fragments)


class SliceReader:
    """Iterates the records of selected fragments of one split, skipping the gaps."""

    def __init__(self, store: SegmentStore, split: Split, fragments: Sequence[SliceLocation]):
        self.store = store
        self.split = split
        self.fragments = list(fragments)
        self.stats = ReadStats()
        prev_end = -1
        for frag in self.fragments:
            if frag.file != split.file or not split.start <= frag.start < split.end:
                raise ValueError(f"fragment {frag} does not start inside split {split}")
            if frag.start <= prev_end:
                raise ValueError(f"fragments of {split} overlap or are unsorted at {frag}")
            prev_end = frag.end

    def __iter__(self) -> Iterator[str]:
        for chunk in self.chunks():
            yield from chunk

    def chunks(self) -> Iterator[list[str]]:
        """One decoded line list per fragment."""
        if not self.fragments:
            return
        path = self.store.path(self.split.file)
        with open(path, "rb") as f:
            for frag in self.fragments:
                if frag.start > 0:
                    f.seek(frag.start - 1)
                    if f.read(1) != b"\n":
                        raise InconsistencyError(
                            f"corrupt slice: {self.split.file} offset {frag.start} is not a record start")
                else:
                    f.seek(0)
                data = f.read(frag.length)
                if len(data) != frag.length or not data.endswith(b"\n"):
                    raise InconsistencyError(
                        f"corrupt slice: {self.split.file} offset {frag.end} is not a record end")
                lines = data.decode("utf-8").split("\n")
                lines.pop()
                self.stats.records_read += len(lines)
                self.stats.bytes_read += frag.length
                self.stats.fragments.append(frag)
                yield lines


def read_split(store: SegmentStore, split: Split, fragments: Sequence[SliceLocation]) -> SliceReader:
    return SliceReader(store, split, fragments)


def iter_split_records(store: SegmentStore, split: Split, size: int | None = None) -> Iterator[str]:
    """All records owned by ``split`` (first byte inside it); used by full-split scans."""
    start = store.record_start_at_or_after(split.file, split.start, size)
    stop = store.record_start_at_or_after(split.file, split.end, size)
    if start >= stop:
        return
    data = store.read_range(split.file, start, stop - 1)
    lines = data.decode("utf-8").split("\n")
    lines.pop()
    yield from lines
