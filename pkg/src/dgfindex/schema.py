"""Record schemas and value conversion.

A schema is declared in a sidecar file with one ``name:kind`` entry per line.
Kinds are ``int``, ``float`` (``numeric`` is accepted as an alias), ``date``
and ``text``.  Dates are carried internally as days since 1970-01-01 so that
grid arithmetic on them is plain integer arithmetic.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MalformedRecord, PolicyError

KINDS = ("int", "float", "date", "text")
_ALIASES = {"numeric": "float", "integer": "int", "string": "text", "str": "text"}
_EPOCH = _dt.date(1970, 1, 1).toordinal()


@lru_cache(maxsize=65536)
def date_to_days(text: str) -> int:
    return _dt.date.fromisoformat(text).toordinal() - _EPOCH


def days_to_date(days: int) -> str:
    return _dt.date.fromordinal(int(days) + _EPOCH).isoformat()


def _parse_int(text):
    return int(text)


_CONVERTERS = {"int": _parse_int, "float": float, "date": date_to_days, "text": str}


def normalize_kind(kind: str) -> str:
    kind = kind.strip().lower()
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise PolicyError(f"unknown field kind {kind!r}")
    return kind


@dataclass(frozen=True)
class Field:
    name: str
    kind: str

    @property
    def numeric(self) -> bool:
        return self.kind in ("int", "float")


class Schema:
    """Ordered field declarations plus a fast line parser."""

    def __init__(self, fields: Iterable[Field | tuple[str, str]], delimiter: str = ","):
        fs = []
        for f in fields:
            if not isinstance(f, Field):
                f = Field(f[0], normalize_kind(f[1]))
            fs.append(f)
        names = [f.name for f in fs]
        if len(set(names)) != len(names):
            raise PolicyError(f"duplicate field names in schema: {names}")
        if len(delimiter) != 1:
            raise PolicyError("delimiter must be a single character")
        self.fields: tuple[Field, ...] = tuple(fs)
        self.delimiter = delimiter
        self._index = {f.name: i for i, f in enumerate(fs)}
        self._converters = tuple(_CONVERTERS[f.kind] for f in fs)

    def __len__(self):
        return len(self.fields)

    def __eq__(self, other):
        return isinstance(other, Schema) and (self.fields, self.delimiter) == (other.fields, other.delimiter)

    def __repr__(self):
        return f"Schema({[(f.name, f.kind) for f in self.fields]!r})"

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise PolicyError(f"unknown field {name!r}") from None

    def field(self, name: str) -> Field:
        return self.fields[self.index(name)]

    def __contains__(self, name):
        return name in self._index

    def convert(self, name: str, text: str):
        kind = self.field(name).kind
        try:
            return _CONVERTERS[kind](text)
        except ValueError as exc:
            raise MalformedRecord(f"field {name!r}: cannot parse {text!r} as {kind}") from exc

    def coerce(self, name: str, value):
        """Convert a JSON/user-facing value into the internal representation."""
        kind = self.field(name).kind
        if kind == "date" and isinstance(value, str):
            return date_to_days(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value

    def render(self, name: str, value):
        if value is None:
            return None
        if self.field(name).kind == "date":
            return days_to_date(value)
        return value

    def split(self, line: str) -> list[str]:
        parts = line.rstrip("\r\n").split(self.delimiter)
        if len(parts) != len(self._converters):
            raise MalformedRecord(
                f"expected {len(self._converters)} fields, got {len(parts)}", reason="FIELD_COUNT"
            )
        return parts

    def parse_line(self, line: str) -> tuple:
        parts = self.split(line)
        try:
            return tuple([conv(p) for conv, p in zip(self._converters, parts)])
        except ValueError as exc:
            raise MalformedRecord(f"unparseable record {line.rstrip()!r}: {exc}") from exc

    def parser(self, names: Sequence[str] | None = None):
        """Return a function mapping a raw line to a tuple of parsed values.

        With ``names`` only the listed fields are converted, in that order.
        """
        if names is None:
            return self.parse_line
        idx = [self.index(n) for n in names]
        convs = [_CONVERTERS[self.fields[i].kind] for i in idx]
        width = len(self.fields)
        delim = self.delimiter
        pairs = list(zip(idx, convs))

        def parse(line: str) -> tuple:
            parts = line.rstrip("\r\n").split(delim)
            if len(parts) != width:
                raise MalformedRecord(f"expected {width} fields, got {len(parts)}", reason="FIELD_COUNT")
            try:
                return tuple([conv(parts[i]) for i, conv in pairs])
            except ValueError as exc:
                raise MalformedRecord(f"unparseable record {line.rstrip()!r}: {exc}") from exc

        return parse

    # persistence

    def dumps(self) -> str:
        return "".join(f"{f.name}:{f.kind}\n" for f in self.fields)

    def to_json(self) -> list:
        return [[f.name, f.kind] for f in self.fields]

    @classmethod
    def from_json(cls, data, delimiter=","):
        return cls([tuple(x) for x in data], delimiter)

    @classmethod
    def parse(cls, text: str, delimiter: str = ",") -> "Schema":
        fields = []
        for n, raw in enumerate(text.splitlines(), 1):
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            name, sep, kind = raw.partition(":")
            if not sep or not name.strip():
                raise PolicyError(f"schema line {n}: expected name:kind, got {raw!r}")
            fields.append(Field(name.strip(), normalize_kind(kind)))
        return cls(fields, delimiter)

    @classmethod
    def load(cls, path, delimiter: str = ",") -> "Schema":
        return cls.parse(Path(path).read_text(encoding="utf-8"), delimiter)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def schema_path_for(data_path) -> Path:
    """Sidecar schema location for a record file: ``<file>.schema``."""
    p = Path(data_path)
    return p.with_name(p.name + ".schema")
