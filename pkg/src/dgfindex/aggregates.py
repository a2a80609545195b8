"""Additive aggregate headers.

A header holds one accumulator per :class:`AggregateSpec`.  Headers merge
without re-reading records, which is what lets a query answer fully covered
cells from the index alone.

Serialized form (used verbatim in the index file)::

    sum(C)=1.4;count(*)=2;min(C)=0.5;max(C)=0.9

Sums, minima and maxima are written with ``repr(float)`` so they round-trip
exactly; the literal ``empty`` marks a min/max that has seen no records.
"""

from __future__ import annotations

import re
from functools import lru_cache
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import HeaderMismatch, MalformedRecord, NotCovered, PolicyError

FUNCTIONS = ("sum", "count", "min", "max")
EMPTY = "empty"
_SPEC_RE = re.compile(r"^\s*(\w+)\s*\(\s*([^()]*?)\s*\)\s*$")


@dataclass(frozen=True)
class AggregateSpec:
    function: str
    args: tuple[str, ...] = ()  # () for count, (f,) for a field, (f, g) for f*g

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise PolicyError(f"unsupported aggregate function {self.function!r}")
        if self.function == "count":
            if self.args:
                object.__setattr__(self, "args", ())
        elif not 1 <= len(self.args) <= 2:
            raise PolicyError(f"{self.function} takes a field or a product of two fields")

    def __str__(self):
        if self.function == "count":
            return "count(*)"
        return f"{self.function}({'*'.join(self.args)})"


@lru_cache(maxsize=1024)
def parse_spec(text: str) -> AggregateSpec:
    text = text.strip()
    if text.lower() == "count":
        return AggregateSpec("count")
    m = _SPEC_RE.match(text)
    if not m:
        raise PolicyError(f"malformed aggregate {text!r}")
    fn, arg = m.group(1).lower(), m.group(2)
    if fn == "count":
        return AggregateSpec("count")
    args = tuple(a.strip() for a in arg.split("*"))
    if not all(args):
        raise PolicyError(f"malformed aggregate argument in {text!r}")
    return AggregateSpec(fn, args)


def parse_specs(text: str | Iterable[str]) -> tuple[AggregateSpec, ...]:
    if isinstance(text, str):
        items = [t for t in re.split(r"[;,]", text) if t.strip()]
    else:
        items = list(text)
    specs = tuple(s if isinstance(s, AggregateSpec) else parse_spec(s) for s in items)
    if len(set(specs)) != len(specs):
        raise PolicyError(f"duplicate aggregate specs: {[str(s) for s in specs]}")
    return specs


def _identity(spec: AggregateSpec):
    if spec.function == "sum":
        return 0.0
    if spec.function == "count":
        return 0
    return None


class Header:
    """Immutable set of accumulators; ``None`` stands for an empty min/max."""

    __slots__ = ("specs", "values")

    def __init__(self, specs: Sequence[AggregateSpec], values: Sequence | None = None):
        self.specs = tuple(specs)
        self.values = tuple(_identity(s) for s in self.specs) if values is None else tuple(values)
        if len(self.values) != len(self.specs):
            raise HeaderMismatch("value count does not match spec count")

    @classmethod
    def empty(cls, specs) -> "Header":
        return cls(specs)

    def __getitem__(self, spec):
        if isinstance(spec, str):
            spec = parse_spec(spec)
        try:
            return self.values[self.specs.index(spec)]
        except ValueError:
            raise KeyError(str(spec)) from None

    def as_dict(self) -> dict:
        return {str(s): v for s, v in zip(self.specs, self.values)}

    def __eq__(self, other):
        return isinstance(other, Header) and self.specs == other.specs and self.values == other.values

    def __hash__(self):
        return hash((self.specs, self.values))

    def __repr__(self):
        return f"Header({serialize(self)!r})"

    @property
    def is_empty(self) -> bool:
        return self == Header(self.specs)


def _arg(record: Mapping, spec: AggregateSpec):
    try:
        vals = [record[a] for a in spec.args]
    except KeyError as exc:
        raise MalformedRecord(f"record lacks field {exc.args[0]!r} for {spec}") from None
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise MalformedRecord(f"non-numeric argument {v!r} for {spec}")
    return vals[0] if len(vals) == 1 else vals[0] * vals[1]


def _step(fn, acc, x):
    if fn == "sum":
        return acc + x
    if fn == "count":
        return acc + 1
    if acc is None:
        return x
    if fn == "min":
        return x if x < acc else acc
    return x if x > acc else acc


def accumulate(h: Header, record: Mapping) -> Header:
    """Fold one record (a field-name mapping) into a header."""
    values = []
    for spec, acc in zip(h.specs, h.values):
        x = None if spec.function == "count" else _arg(record, spec)
        values.append(_step(spec.function, acc, x))
    return Header(h.specs, values)


def _combine(fn, a, b):
    if fn in ("sum", "count"):
        return a + b
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b) if fn == "min" else max(a, b)


def merge(h1: Header, h2: Header) -> Header:
    if h1.specs != h2.specs:
        raise HeaderMismatch(f"cannot merge headers over {serialize_specs(h1.specs)} and {serialize_specs(h2.specs)}")
    return Header(h1.specs, [_combine(s.function, a, b) for s, a, b in zip(h1.specs, h1.values, h2.values)])


def merge_all(specs, headers: Iterable[Header]) -> Header:
    """Fold ``merge`` over ``headers`` (left to right, so sums match the pairwise fold exactly)."""
    specs = tuple(specs)
    columns = [[] for _ in specs]
    for h in headers:
        if h.specs != specs:
            raise HeaderMismatch(f"cannot merge headers over {serialize_specs(h.specs)} and {serialize_specs(specs)}")
        for col, v in zip(columns, h.values):
            col.append(v)
    values = []
    for s, col in zip(specs, columns):
        acc = _identity(s)
        if s.function in ("sum", "count"):
            for v in col:
                acc += v
        else:
            present = [v for v in col if v is not None]
            if present:
                acc = min(present) if s.function == "min" else max(present)
        values.append(acc)
    return Header(specs, values)


def required_specs(request: str | AggregateSpec) -> tuple[AggregateSpec, ...]:
    """Stored specs needed to answer ``request`` (``avg(x)`` needs sum and count)."""
    if isinstance(request, AggregateSpec):
        return (request,)
    text = request.strip()
    m = _SPEC_RE.match(text)
    if m and m.group(1).lower() == "avg":
        args = tuple(a.strip() for a in m.group(2).split("*"))
        return (AggregateSpec("sum", args), AggregateSpec("count"))
    return (parse_spec(text),)


def covers(specs: Sequence[AggregateSpec], request) -> bool:
    return all(s in specs for s in required_specs(request))


def finalize(h: Header, request):
    """Scalar answer for ``request``; raises :class:`NotCovered` if it is not derivable."""
    needed = required_specs(request)
    missing = [str(s) for s in needed if s not in h.specs]
    if missing:
        raise NotCovered(f"{request} needs {', '.join(missing)} which the header does not store")
    if len(needed) == 2:
        total, n = h[needed[0]], h[needed[1]]
        return total / n if n else None
    return h[needed[0]]


def normalize_request(request) -> str:
    """Canonical text for a request, e.g. ``count`` -> ``count(*)``."""
    needed = required_specs(request)
    if len(needed) == 2:
        return f"avg({'*'.join(needed[0].args)})"
    return str(needed[0])


class Accumulator:
    """Mutable fold over schema-ordered record tuples (the hot path of build and scan)."""

    __slots__ = ("specs", "_fns", "_getters", "_values")

    def __init__(self, specs: Sequence[AggregateSpec], schema):
        self.specs = tuple(specs)
        getters = []
        for s in self.specs:
            idx = []
            for a in s.args:
                f = schema.field(a)
                if not f.numeric:
                    raise PolicyError(f"aggregate {s} references non-numeric field {a!r}")
                idx.append(schema.index(a))
            getters.append(tuple(idx))
        self._fns = tuple(s.function for s in self.specs)
        self._getters = tuple(getters)
        self._values = [_identity(s) for s in self.specs]

    def add(self, row: Sequence) -> None:
        vals = self._values
        for j, fn in enumerate(self._fns):
            if fn == "count":
                vals[j] += 1
                continue
            g = self._getters[j]
            x = row[g[0]] if len(g) == 1 else row[g[0]] * row[g[1]]
            if fn == "sum":
                vals[j] += x
            else:
                acc = vals[j]
                if acc is None or (x < acc if fn == "min" else x > acc):
                    vals[j] = x

    def clone(self) -> "Accumulator":
        """A fresh (empty) accumulator sharing this one's resolved layout."""
        other = object.__new__(Accumulator)
        other.specs, other._fns, other._getters = self.specs, self._fns, self._getters
        other._values = [_identity(s) for s in self.specs]
        return other

    def header(self) -> Header:
        return Header(self.specs, [float(v) if isinstance(v, int) and f != "count" else v
                                   for f, v in zip(self._fns, self._values)])


def _fmt(spec, value) -> str:
    if value is None:
        return EMPTY
    if spec.function == "count":
        return str(int(value))
    return repr(float(value))


def serialize_specs(specs) -> str:
    return ";".join(str(s) for s in specs)


def serialize(h: Header) -> str:
    return ";".join(f"{s}={_fmt(s, v)}" for s, v in zip(h.specs, h.values))


@lru_cache(maxsize=256)
def _header_specs(names: tuple[str, ...]) -> tuple[AggregateSpec, ...]:
    return tuple(parse_spec(n) for n in names)


def parse_header(text: str) -> Header:
    if text == "":
        return Header((), ())
    names, raws = [], []
    for part in text.split(";"):
        name, sep, raw = part.rpartition("=")
        if not sep:
            raise PolicyError(f"malformed header entry {part!r}")
        names.append(name)
        raws.append(raw)
    specs = _header_specs(tuple(names))
    values = []
    for spec, raw in zip(specs, raws):
        if raw == EMPTY:
            if spec.function in ("sum", "count"):
                raise PolicyError(f"{spec} cannot be empty")
            values.append(None)
        elif spec.function == "count":
            values.append(int(raw))
        else:
            values.append(float(raw))
    return Header(specs, values)
