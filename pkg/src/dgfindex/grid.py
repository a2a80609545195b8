"""Grid geometry: splitting policies, coordinate standardization, cell keys.

A cell (grid file unit) is addressed internally by a tuple of integer cell
indices, one per policy dimension.  Cell ``k`` on a dimension covers the
half-open interval ``[edge(k), edge(k + 1))``.  The textual key is the cell's
lower-left coordinate, rendered per dimension and joined with ``_``.

Edges of non-integral grids are rounded to 6 decimals, which keeps them equal
to the decimal literals users write (``0.07`` rather than
``0.07000000000000001``) and makes the rendered keys lossless.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import BelowGridMinimum, PolicyError
from .schema import date_to_days, days_to_date

GFUKey = tuple  # tuple[int, ...] of cell indices, in policy order

_DATE_SPEC = re.compile(r"^(\d{4}-\d{2}-\d{2})_(\d+)d$")
_MIN_INTERVAL = 1e-6


def _number(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {text!r}")
    return value


@dataclass(frozen=True)
class DimensionPolicy:
    name: str
    kind: str  # "numeric" | "date"
    min: int | float
    interval: int | float
    interval_unit: int = 1  # days per interval unit; date dimensions only

    def __post_init__(self):
        object.__setattr__(self, "_integral", isinstance(self.min, int) and isinstance(self.interval, int))
        if self.kind not in ("numeric", "date"):
            raise PolicyError(f"{self.name}: unknown dimension kind {self.kind!r}")
        if not self.interval > 0:
            raise PolicyError(f"{self.name}: non-positive interval {self.interval!r}")
        if self.kind == "date":
            if not (isinstance(self.min, int) and isinstance(self.interval, int)):
                raise PolicyError(f"{self.name}: date grids need integral day offsets")
            if self.interval_unit < 1:
                raise PolicyError(f"{self.name}: interval unit must be at least one day")
        elif not self.integral:
            if self.interval < _MIN_INTERVAL:
                raise PolicyError(f"{self.name}: interval below {_MIN_INTERVAL}")
            if round(self.min, 6) != self.min:
                raise PolicyError(f"{self.name}: minimum needs at most 6 decimals")

    @property
    def integral(self) -> bool:
        return self._integral

    @property
    def step(self):
        return self.interval * self.interval_unit if self.kind == "date" else self.interval

    def edge(self, k: int):
        if self.integral:
            return self.min + k * self.step
        return round(self.min + k * self.step, 6)

    def cell_index(self, value) -> int:
        """Index of the cell containing ``value``."""
        if value < self.min:
            raise BelowGridMinimum(self.name, value, self.min)
        if self.integral:
            return int((value - self.min) // self.step)
        k = int((value - self.min) // self.step)
        while k > 0 and self.edge(k) > value:
            k -= 1
        while self.edge(k + 1) <= value:
            k += 1
        return k

    def standardize(self, value):
        return self.edge(self.cell_index(value))

    def render(self, k: int) -> str:
        coord = self.edge(k)
        if self.kind == "date":
            return days_to_date(coord)
        if self.integral:
            return str(coord)
        return f"{coord:.6f}"

    def parse_coord(self, text: str) -> int:
        try:
            value = date_to_days(text) if self.kind == "date" else float(text)
        except ValueError:
            raise PolicyError(f"{self.name}: bad coordinate {text!r}") from None
        k = round((value - self.min) / self.step)
        if k < 0 or self.render(k) != text:
            raise PolicyError(f"{self.name}: {text!r} is not a grid coordinate")
        return k

    def to_spec(self) -> str:
        if self.kind == "date":
            return f"{self.name}={days_to_date(self.min)}_{self.interval * self.interval_unit}d"
        return f"{self.name}={self.min!r}_{self.interval!r}"


class SplittingPolicy:
    """Ordered per-dimension grid definitions."""

    def __init__(self, dims: Iterable[DimensionPolicy]):
        self.dims: tuple[DimensionPolicy, ...] = tuple(dims)
        names = [d.name for d in self.dims]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise PolicyError(f"duplicate dimension name(s): {sorted(dup)}")
        if not self.dims:
            raise PolicyError("policy needs at least one dimension")
        self._pos = {d.name: i for i, d in enumerate(self.dims)}
        self._coord_cache: list[dict] = [{} for _ in self.dims]  # rendered coordinate -> cell index

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __eq__(self, other):
        return isinstance(other, SplittingPolicy) and self.dims == other.dims

    def __hash__(self):
        return hash(self.dims)

    def __repr__(self):
        return f"SplittingPolicy({self.to_spec()!r})"

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def __contains__(self, name):
        return name in self._pos

    def dim(self, name: str) -> DimensionPolicy:
        try:
            return self.dims[self._pos[name]]
        except KeyError:
            raise PolicyError(f"{name!r} is not an indexed dimension") from None

    def position(self, name: str) -> int:
        return self._pos[name]

    def to_spec(self) -> str:
        return ",".join(d.to_spec() for d in self.dims)

    def render_key(self, key: GFUKey) -> str:
        return "_".join(d.render(k) for d, k in zip(self.dims, key))

    def parse_key(self, text: str) -> GFUKey:
        parts = text.split("_")
        if len(parts) != len(self.dims):
            raise PolicyError(f"key {text!r} has {len(parts)} coordinates, policy has {len(self.dims)}")
        out = []
        for cache, d, p in zip(self._coord_cache, self.dims, parts):
            k = cache.get(p)
            if k is None:
                k = cache[p] = d.parse_coord(p)
            out.append(k)
        return tuple(out)

    def coords(self, key: GFUKey) -> tuple:
        return tuple(d.edge(k) for d, k in zip(self.dims, key))

    def cell_range(self, key: GFUKey) -> dict:
        """Per-dimension half-open ``(lo, hi)`` covered by a cell."""
        return {d.name: (d.edge(k), d.edge(k + 1)) for d, k in zip(self.dims, key)}


def parse_policy(spec: str) -> SplittingPolicy:
    """Parse ``name=min_interval(,name=min_interval)*``.

    Date dimensions are written ``name=YYYY-MM-DD_Nd`` (N days per cell).

    >>> parse_policy("A=1_3,B=11_2").to_spec()
    'A=1_3,B=11_2'
    """
    dims = []
    seen = set()
    for entry in spec.split(","):
        entry = entry.strip()
        name, sep, body = entry.partition("=")
        name = name.strip()
        if not sep or not name or not body:
            raise PolicyError(f"malformed policy entry {entry!r}")
        if name in seen:
            raise PolicyError(f"duplicate dimension {name!r} in entry {entry!r}")
        seen.add(name)
        m = _DATE_SPEC.match(body.strip())
        if m:
            try:
                start = date_to_days(m.group(1))
            except ValueError:
                raise PolicyError(f"bad date in policy entry {entry!r}") from None
            days = int(m.group(2))
            if days <= 0:
                raise PolicyError(f"non-positive interval in policy entry {entry!r}")
            dims.append(DimensionPolicy(name, "date", start, days, 1))
            continue
        lo, sep, step = body.rpartition("_")
        if not sep or not lo:
            raise PolicyError(f"malformed policy entry {entry!r}")
        try:
            lo_v, step_v = _number(lo), _number(step)
        except ValueError:
            raise PolicyError(f"malformed policy entry {entry!r}") from None
        if step_v <= 0:
            raise PolicyError(f"non-positive interval in policy entry {entry!r}")
        try:
            dims.append(DimensionPolicy(name, "numeric", lo_v, step_v))
        except PolicyError as exc:
            raise PolicyError(f"{exc} (entry {entry!r})") from None
    return SplittingPolicy(dims)


def standardize(value, dim: DimensionPolicy):
    """Lower coordinate of the interval containing ``value``."""
    return dim.standardize(value)


def gfu_key(values: Mapping[str, object] | Sequence, policy: SplittingPolicy) -> GFUKey:
    """Cell key for one record's indexed values (a mapping or a policy-ordered sequence)."""
    if isinstance(values, Mapping):
        try:
            values = [values[d.name] for d in policy.dims]
        except KeyError as exc:
            raise PolicyError(f"missing value for dimension {exc.args[0]!r}") from None
    elif len(values) != len(policy.dims):
        raise PolicyError(f"expected {len(policy.dims)} values, got {len(values)}")
    return tuple(d.cell_index(v) for d, v in zip(policy.dims, values))


@dataclass(frozen=True)
class DimSpan:
    """Cells of one dimension touched by a range: all in ``[first, last]``,
    fully covered in ``[inner_first, inner_last]`` (possibly empty)."""

    first: int
    last: int
    inner_first: int
    inner_last: int

    @property
    def count(self) -> int:
        return self.last - self.first + 1

    @property
    def inner_count(self) -> int:
        return max(0, self.inner_last - self.inner_first + 1)

    def contains(self, k: int) -> bool:
        return self.first <= k <= self.last

    def inner(self, k: int) -> bool:
        return self.inner_first <= k <= self.inner_last


def dim_span(dim: DimensionPolicy, lo, hi) -> DimSpan | None:
    """Cells intersecting ``[lo, hi)``; ``None`` when the range is empty.

    A lower bound below the grid minimum is clamped to it.
    """
    if lo < dim.min:
        lo = dim.min
    if not lo < hi:
        return None
    first = dim.cell_index(lo)
    last = dim.cell_index(hi)
    if dim.edge(last) >= hi:
        last -= 1
    inner_first = first if dim.edge(first) >= lo else first + 1
    inner_last = last if dim.edge(last + 1) <= hi else last - 1
    return DimSpan(first, last, inner_first, inner_last)


def spans_for(ranges: Mapping[str, tuple], policy: SplittingPolicy) -> list[DimSpan] | None:
    spans = []
    for d in policy.dims:
        if d.name not in ranges:
            raise PolicyError(f"predicate has no range for dimension {d.name!r}")
        lo, hi = ranges[d.name]
        s = dim_span(d, lo, hi)
        if s is None:
            return None
        spans.append(s)
    return spans


def classify(key: GFUKey, spans: Sequence[DimSpan]) -> str | None:
    """``"inner"``, ``"boundary"`` or ``None`` (cell outside the query)."""
    inner = True
    for k, s in zip(key, spans):
        if not (s.first <= k <= s.last):
            return None
        if inner and not (s.inner_first <= k <= s.inner_last):
            inner = False
    return "inner" if inner else "boundary"


def decompose(ranges: Mapping[str, tuple], policy: SplittingPolicy) -> tuple[set, set]:
    """Split the cells intersecting a complete query region into inner and boundary sets.

    ``ranges`` maps every policy dimension to a half-open ``(lo, hi)``.
    """
    spans = spans_for(ranges, policy)
    if spans is None:
        return set(), set()
    inner = set(itertools.product(*(range(s.inner_first, s.inner_last + 1) for s in spans)))
    boundary = {k for k in itertools.product(*(range(s.first, s.last + 1) for s in spans)) if k not in inner}
    return inner, boundary
