import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgfindex.errors import BelowGridMinimum, PolicyError
from dgfindex.grid import (
    DimensionPolicy,
    SplittingPolicy,
    classify,
    decompose,
    dim_span,
    gfu_key,
    parse_policy,
    spans_for,
    standardize,
)
from dgfindex.schema import date_to_days

FIG = parse_policy("A=1_3,B=11_2")


def keys(policy, names):
    return {policy.parse_key(n) for n in names}


def test_parse_policy_two_dims():
    p = parse_policy("A=1_3,B=11_2")
    assert p.names == ["A", "B"]
    assert (p.dim("A").min, p.dim("A").interval) == (1, 3)
    assert (p.dim("B").min, p.dim("B").interval) == (11, 2)
    assert p.to_spec() == "A=1_3,B=11_2"


def test_parse_policy_unit_grid():
    p = parse_policy("X=0_1")
    assert (p.dim("X").min, p.dim("X").interval) == (0, 1)


@pytest.mark.parametrize("spec", ["A=1_0", "A=1_-2", "A=1", "A=x_1", "A=1_3,A=2_2", "", "=1_2"])
def test_parse_policy_rejects(spec):
    with pytest.raises(PolicyError):
        parse_policy(spec)


def test_parse_policy_error_names_entry():
    with pytest.raises(PolicyError, match="B=3_0"):
        parse_policy("A=1_3,B=3_0")


def test_parse_policy_float_and_date():
    p = parse_policy("d=0_0.01,t=2012-12-01_7d")
    assert not p.dim("d").integral
    t = p.dim("t")
    assert t.kind == "date" and t.step == 7 and t.min == date_to_days("2012-12-01")
    assert parse_policy(p.to_spec()) == p


@pytest.mark.parametrize("value,dim,expected", [(14, "B", 13), (1, "A", 1), (5, "A", 4), (4, "A", 4), (12, "A", 10)])
def test_standardize_examples(value, dim, expected):
    assert standardize(value, FIG.dim(dim)) == expected


def test_standardize_below_minimum():
    with pytest.raises(BelowGridMinimum):
        standardize(0, FIG.dim("A"))


@pytest.mark.parametrize("rec,key", [({"A": 1, "B": 14}, "1_13"), ({"A": 7, "B": 13}, "7_13"),
                                     ({"A": 12, "B": 16}, "10_15")])
def test_gfu_key_examples(rec, key):
    assert FIG.render_key(gfu_key(rec, FIG)) == key


def test_gfu_key_sequence_and_missing():
    assert gfu_key([1, 14], FIG) == FIG.parse_key("1_13")
    with pytest.raises(PolicyError):
        gfu_key({"A": 1}, FIG)


def test_decompose_listing_query():
    inner, boundary = decompose({"A": (5, 12), "B": (12, 16)}, FIG)
    assert inner == keys(FIG, ["7_13"])
    assert boundary == keys(FIG, ["4_11", "4_13", "4_15", "7_11", "7_15", "10_11", "10_13", "10_15"])


def test_decompose_exact_cell():
    inner, boundary = decompose({"A": (1, 4), "B": (11, 13)}, FIG)
    assert inner == keys(FIG, ["1_11"]) and boundary == set()


def test_decompose_interior_subcell():
    inner, boundary = decompose({"A": (2, 3), "B": (11, 13)}, FIG)
    assert inner == set() and boundary == keys(FIG, ["1_11"])


def test_decompose_empty_range():
    assert decompose({"A": (5, 5), "B": (11, 13)}, FIG) == (set(), set())


def test_dim_span_clamps_below_minimum():
    s = dim_span(FIG.dim("A"), -100, 4)
    assert (s.first, s.last, s.inner_first, s.inner_last) == (0, 0, 0, 0)


def test_float_grid_edges_are_rounded():
    d = DimensionPolicy("x", "numeric", 0.0, 0.1)
    assert d.edge(3) == 0.3
    assert d.cell_index(0.3) == 3
    assert d.cell_index(0.29999) == 2
    assert d.render(3) == "0.300000"
    assert d.parse_coord("0.300000") == 3
    with pytest.raises(PolicyError):
        d.parse_coord("0.310000")


def test_render_and_parse_key_round_trip():
    p = parse_policy("a=-5_2,t=2012-12-01_1d,f=0.5_0.25")
    key = (3, 29, 7)
    text = p.render_key(key)
    assert text == "1_2012-12-30_2.250000"
    assert p.parse_key(text) == key


@settings(max_examples=200, deadline=None)
@given(st.integers(-50, 50), st.integers(1, 9), st.integers(-200, 200))
def test_standardize_idempotent_and_contains(lo, step, v):
    d = DimensionPolicy("x", "numeric", lo, step)
    if v < lo:
        with pytest.raises(BelowGridMinimum):
            d.standardize(v)
        return
    s = d.standardize(v)
    assert d.standardize(s) == s
    assert s <= v < s + step


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2000), st.sampled_from([0.01, 0.1, 0.25, 0.3, 1.5]))
def test_float_standardize_contains(milli, step):
    d = DimensionPolicy("x", "numeric", 0.0, step)
    v = milli / 1000
    k = d.cell_index(v)
    assert d.edge(k) <= v < d.edge(k + 1)
    assert d.standardize(d.standardize(v)) == d.standardize(v)


boxes = st.tuples(st.integers(1, 14), st.integers(0, 8), st.integers(11, 22), st.integers(0, 8))


@settings(max_examples=300, deadline=None)
@given(boxes)
def test_decompose_matches_brute_force(box):
    a_lo, a_w, b_lo, b_w = box
    ranges = {"A": (a_lo, a_lo + a_w), "B": (b_lo, b_lo + b_w)}
    inner, boundary = decompose(ranges, FIG)
    assert not inner & boundary
    grid_a, grid_b = range(1, 40), range(11, 40)
    expect_inner, expect_boundary = set(), set()
    cells = {}
    for a, b in itertools.product(grid_a, grid_b):
        cells.setdefault(gfu_key([a, b], FIG), []).append((a, b))
    for key, points in cells.items():
        hits = [ranges["A"][0] <= a < ranges["A"][1] and ranges["B"][0] <= b < ranges["B"][1] for a, b in points]
        if all(hits):
            expect_inner.add(key)
        elif any(hits):
            expect_boundary.add(key)
    inside = {k for k in inner | boundary if k in cells}
    assert {k for k in inner if k in cells} == expect_inner
    assert {k for k in boundary if k in cells} == expect_boundary
    assert inside == expect_inner | expect_boundary
    spans = spans_for(ranges, FIG)
    for key in cells:
        c = classify(key, spans) if spans else None
        assert (c == "inner") == (key in expect_inner)
        assert (c == "boundary") == (key in expect_boundary)


def test_policy_position_and_unknown_dim():
    p = SplittingPolicy([DimensionPolicy("a", "numeric", 0, 1), DimensionPolicy("b", "numeric", 0, 1)])
    assert p.position("b") == 1
    with pytest.raises(PolicyError):
        p.dim("zz")
