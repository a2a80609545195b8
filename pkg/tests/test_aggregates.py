import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgfindex.aggregates import (
    Accumulator,
    AggregateSpec,
    Header,
    accumulate,
    covers,
    finalize,
    merge,
    merge_all,
    normalize_request,
    parse_header,
    parse_spec,
    parse_specs,
    serialize,
)
from dgfindex.errors import HeaderMismatch, NotCovered, PolicyError
from dgfindex.schema import Schema

SUM_C = parse_specs(["sum(C)"])
ALL = parse_specs(["sum(C)", "count(*)", "min(C)", "max(C)"])


def test_spec_parsing_and_rendering():
    assert str(parse_spec("SUM( C )")) == "sum(C)"
    assert str(parse_spec("count")) == "count(*)"
    assert str(parse_spec("sum(a * b)")) == "sum(a*b)"
    assert parse_specs("sum(C), count(*)") == (AggregateSpec("sum", ("C",)), AggregateSpec("count"))
    for bad in ["median(C)", "sum()", "sum(C", "avg(C)"]:
        with pytest.raises(PolicyError):
            parse_spec(bad)


def test_accumulate_single_value():
    h = accumulate(Header(SUM_C), {"C": 0.7})
    assert h["sum(C)"] == 0.7


def test_accumulate_count():
    h = accumulate(Header(parse_specs(["count(*)"])), {"C": 1.0})
    assert h["count(*)"] == 1


def test_fold_two_values():
    h = Header(SUM_C)
    for c in (0.5, 0.9):
        h = accumulate(h, {"C": c})
    assert h["sum(C)"] == pytest.approx(1.4, rel=1e-12)


def test_merge_addition_and_identity():
    a = Header(SUM_C, [1.4])
    b = Header(SUM_C, [0.7])
    assert merge(a, b)["sum(C)"] == pytest.approx(2.1)
    assert merge(a, Header(SUM_C)) == a
    assert merge(Header(SUM_C), a) == a


def test_merge_spec_mismatch():
    with pytest.raises(HeaderMismatch):
        merge(Header(SUM_C), Header(ALL))


def test_finalize():
    assert finalize(Header(SUM_C, [2.1]), "sum(C)") == 2.1
    h = Header(parse_specs(["sum(C)", "count(*)"]), [10.0, 4])
    assert finalize(h, "avg(C)") == 2.5
    assert finalize(Header(parse_specs(["sum(C)", "count(*)"])), "avg(C)") is None
    with pytest.raises(NotCovered):
        finalize(Header(SUM_C, [10.0]), "min(C)")


def test_empty_min_max_are_none():
    h = Header(ALL)
    assert h["min(C)"] is None and h["max(C)"] is None and h["count(*)"] == 0
    assert h.is_empty


def test_covers_and_normalize():
    assert covers(ALL, "avg(C)")
    assert not covers(SUM_C, "avg(C)")
    assert normalize_request("COUNT") == "count(*)"
    assert normalize_request("avg( C )") == "avg(C)"


def test_product_argument():
    schema = Schema([("p", "float"), ("d", "float")])
    acc = Accumulator(parse_specs(["sum(p*d)"]), schema)
    acc.add((100.0, 0.05))
    acc.add((10.0, 0.5))
    assert acc.header()["sum(p*d)"] == pytest.approx(10.0)


def test_accumulator_rejects_text_argument():
    with pytest.raises(PolicyError):
        Accumulator(parse_specs(["sum(name)"]), Schema([("name", "text")]))


def test_serialize_round_trip():
    h = Header(ALL, [0.1 + 0.2, 3, None, None])
    text = serialize(h)
    assert "empty" in text
    assert parse_header(text) == h
    assert parse_header(serialize(Header(()))) == Header(())


values = st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False), max_size=30)


def _fold(vals):
    h = Header(ALL)
    for v in vals:
        h = accumulate(h, {"C": v})
    return h


@settings(max_examples=300, deadline=None)
@given(values, st.data())
def test_partition_additivity(vals, data):
    """Folding any partition of a multiset and merging equals folding the whole."""
    cuts = sorted(data.draw(st.lists(st.integers(0, len(vals)), max_size=4)))
    parts, prev = [], 0
    for c in cuts + [len(vals)]:
        parts.append(vals[prev:c])
        prev = c
    whole = _fold(vals)
    merged = merge_all(ALL, (_fold(p) for p in parts))
    assert merged["count(*)"] == whole["count(*)"]
    assert merged["min(C)"] == whole["min(C)"] and merged["max(C)"] == whole["max(C)"]
    assert math.isclose(merged["sum(C)"], whole["sum(C)"], rel_tol=1e-9, abs_tol=1e-6)
