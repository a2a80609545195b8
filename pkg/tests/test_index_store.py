import random

import pytest

from dgfindex.aggregates import Header, parse_specs
from dgfindex.errors import CorruptIndexFile, InconsistencyError, NotFound
from dgfindex.grid import parse_policy
from dgfindex.index_store import DimensionBounds, GFUValue, IndexStore, SliceLocation

POLICY = parse_policy("A=1_3,B=11_2")
SPECS = parse_specs(["sum(C)", "count(*)"])


def value(s=1.4, n=2, f="f", start=18, end=35):
    return GFUValue(Header(SPECS, [s, n]), SliceLocation(f, start, end))


def test_put_get():
    store = IndexStore(POLICY)
    key = POLICY.parse_key("7_13")
    store.put(key, value())
    assert store.get(key) == value()
    assert store.get(key).location.length == 18


def test_get_absent():
    with pytest.raises(NotFound):
        IndexStore(POLICY).get((0, 0))


def test_duplicate_put_is_inconsistency():
    store = IndexStore(POLICY)
    store.put((2, 1), value())
    with pytest.raises(InconsistencyError):
        store.put((2, 1), value(s=9.0))
    store.put((2, 1), value(s=9.0), replace=True)
    assert store.get((2, 1)).header["sum(C)"] == 9.0


def test_persist_load_get(tmp_path):
    store = IndexStore(POLICY)
    store.put(POLICY.parse_key("7_13"), value())
    store.put_bounds(DimensionBounds("A", 1, 10))
    store.put_bounds(DimensionBounds("B", 11, 19))
    store.persist(tmp_path / "i.dgf")
    loaded = IndexStore.load(tmp_path / "i.dgf")
    assert loaded == store
    assert loaded.get(POLICY.parse_key("7_13")) == value()
    assert loaded.get_bounds("A") == DimensionBounds("A", 1, 10)


def test_multi_get():
    store = IndexStore(POLICY)
    k = POLICY.parse_key("7_13")
    store.put(k, value())
    assert store.multi_get({k, (32, 44)}) == {k: value()}
    assert store.multi_get(set()) == {}


def test_bounds_unknown_dim():
    store = IndexStore(POLICY)
    with pytest.raises(NotFound):
        store.get_bounds("Z")
    with pytest.raises(NotFound):
        store.get_bounds("A")


def test_file_format(tmp_path):
    store = IndexStore(POLICY)
    store.put(POLICY.parse_key("7_13"), value())
    store.put(POLICY.parse_key("1_11"), value(0.3, 1, "f", 0, 8))
    store.put_cell_bounds("A", 0, 2)
    store.put_cell_bounds("B", 0, 1)
    store.persist(tmp_path / "i.dgf")
    assert (tmp_path / "i.dgf").read_text().splitlines() == [
        "dgfidx v1 A=1_3,B=11_2",
        "#bounds A 1 7",
        "#bounds B 11 13",
        "1_11\tsum(C)=0.3;count(*)=1\tf:0:8",
        "7_13\tsum(C)=1.4;count(*)=2\tf:18:35",
        "#end 2",
    ]


@pytest.mark.parametrize("mutate,message", [
    (lambda t: t.replace("v1", "v9"), "unsupported version"),
    (lambda t: t.rsplit("#end", 1)[0], "truncated"),
    (lambda t: t[:-3], "truncated"),
    (lambda t: t.replace("f:18:35", "f:x:35"), "bad line"),
    (lambda t: t.replace("#end 1", "#end 5"), "trailer"),
    (lambda t: "garbage\n", "not an index"),
    (lambda t: "", "truncated"),
])
def test_corrupt_files_report_line(tmp_path, mutate, message):
    store = IndexStore(POLICY)
    store.put(POLICY.parse_key("7_13"), value())
    store.persist(tmp_path / "i.dgf")
    path = tmp_path / "i.dgf"
    path.write_text(mutate(path.read_text()))
    with pytest.raises(CorruptIndexFile, match=message) as exc:
        IndexStore.load(path)
    assert exc.value.line_no >= 1


def _random_store(rng: random.Random, n: int) -> IndexStore:
    pol = parse_policy("x=0_1,y=-3.5_0.25,t=2012-12-01_1d")
    specs = parse_specs(["sum(v)", "count(*)", "min(v)", "max(v)"])
    store = IndexStore(pol)
    offset = 0
    keys = set()
    while len(keys) < n:
        keys.add((rng.randrange(1000), rng.randrange(200), rng.randrange(400)))
    for key in keys:
        length = rng.randrange(1, 200)
        cnt = rng.randrange(0, 50)
        lo = rng.uniform(-1e3, 1e3) if cnt else None
        hdr = Header(specs, [rng.uniform(-1e9, 1e9), cnt, lo, None if lo is None else lo + rng.random()])
        store.put(key, GFUValue(hdr, SliceLocation(f"seg-{rng.randrange(3):05d}.dat", offset, offset + length - 1)))
        offset += length
    if n:
        for d in pol.dims:
            ks = [k[pol.position(d.name)] for k in keys]
            store.put_cell_bounds(d.name, min(ks), max(ks))
    return store


@pytest.mark.parametrize("n", [0, 1, 10_000])
def test_round_trip_sizes(tmp_path, n):
    store = _random_store(random.Random(n), n)
    store.persist(tmp_path / "i.dgf")
    loaded = IndexStore.load(tmp_path / "i.dgf")
    assert loaded == store
    assert len(loaded) == n
    locs = sorted(v.location for v in loaded._entries.values())
    for a, b in zip(locs, locs[1:]):
        assert a.file != b.file or a.end < b.start


def test_swap_from_replaces_contents():
    a, b = IndexStore(POLICY), IndexStore(POLICY)
    b.put((0, 0), value())
    a.swap_from(b)
    assert a == b and len(a) == 1
