import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgfindex.errors import InconsistencyError
from dgfindex.index_store import SliceLocation
from dgfindex.segstore import (
    SegmentStore,
    SegmentWriter,
    Split,
    enumerate_splits,
    filter_splits,
    iter_split_records,
    read_split,
)


def spans(splits):
    return [(s.start, s.end) for s in splits]


def test_enumerate_splits_examples():
    assert spans(enumerate_splits({"f": 90}, 64)) == [(0, 64), (64, 90)]
    assert enumerate_splits({"f": 0}, 64) == []
    assert spans(enumerate_splits({"f": 128}, 64)) == [(0, 64), (64, 128)]
    assert [s.seq for s in enumerate_splits({"f": 200}, 64)] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        enumerate_splits({"f": 1}, 0)


def test_filter_single_split_point_slices():
    slices = [SliceLocation("f", 18, 18), SliceLocation("f", 63, 63), SliceLocation("f", 72, 72)]
    chosen, plan = filter_splits(slices, enumerate_splits({"f": 100}, 128))
    assert chosen == [Split("f", 0, 100, 0)]
    assert [str(x) for x in plan[chosen[0]]] == ["f:18:18", "f:63:63", "f:72:72"]


def test_filter_clips_at_split_edge():
    chosen, plan = filter_splits([SliceLocation("f", 60, 70)], enumerate_splits({"f": 90}, 64))
    assert len(chosen) == 2
    assert plan[chosen[0]] == [SliceLocation("f", 60, 63)]
    assert plan[chosen[1]] == [SliceLocation("f", 64, 70)]


def test_filter_no_slices():
    assert filter_splits([], enumerate_splits({"f": 90}, 64)) == ([], {})


def test_filter_unknown_file():
    with pytest.raises(InconsistencyError, match="unknown segment file"):
        filter_splits([SliceLocation("g", 0, 3)], enumerate_splits({"f": 90}, 64))


def _write(tmp_path, records):
    store = SegmentStore(tmp_path)
    with SegmentWriter(tmp_path / "seg.dat") as w:
        offsets = [w.write(r.encode()) for r in records]
    return store, offsets


def test_clip_then_read_concatenates(tmp_path):
    # 9-byte records: a two-record slice at offset 18 spans bytes 18..35
    recs = [f"{i},1{i},0.{i}\n" for i in range(1, 9)]
    assert all(len(r) == 9 for r in recs)
    store, offsets = _write(tmp_path, recs)
    loc = SliceLocation("seg.dat", offsets[2], offsets[4] - 1)
    assert (loc.start, loc.end) == (18, 35)
    splits = enumerate_splits(store.sizes(["seg.dat"]), 24)
    chosen, plan = filter_splits([loc], splits, store)
    assert len(chosen) == 2
    lines = []
    for sp in chosen:
        lines.extend(read_split(store, sp, plan[sp]))
    assert lines == [recs[2].rstrip("\n"), recs[3].rstrip("\n")]


def test_reader_full_cover_and_empty(tmp_path):
    recs = ["a,1\n", "bb,2\n", "ccc,3\n"]
    store, _ = _write(tmp_path, recs)
    sp = enumerate_splits(store.sizes(["seg.dat"]), 1024)[0]
    r = read_split(store, sp, [SliceLocation("seg.dat", 0, sp.end - 1)])
    assert list(r) == [x.rstrip("\n") for x in recs]
    assert r.stats.records_read == 3 and r.stats.bytes_read == sp.end
    assert list(read_split(store, sp, [])) == []
    assert list(iter_split_records(store, sp)) == [x.rstrip("\n") for x in recs]


def test_reader_detects_misaligned_fragment(tmp_path):
    store, _ = _write(tmp_path, ["a,1\n", "bb,2\n"])
    sp = enumerate_splits(store.sizes(["seg.dat"]), 1024)[0]
    with pytest.raises(InconsistencyError, match="offset 1"):
        list(read_split(store, sp, [SliceLocation("seg.dat", 1, 3)]))
    with pytest.raises(InconsistencyError, match="record end"):
        list(read_split(store, sp, [SliceLocation("seg.dat", 0, 2)]))


def test_reader_rejects_overlapping_fragments(tmp_path):
    store, _ = _write(tmp_path, ["a,1\n", "bb,2\n"])
    sp = enumerate_splits(store.sizes(["seg.dat"]), 1024)[0]
    with pytest.raises(ValueError):
        read_split(store, sp, [SliceLocation("seg.dat", 0, 3), SliceLocation("seg.dat", 2, 8)])


layouts = st.lists(st.integers(1, 12), min_size=1, max_size=40)


@settings(max_examples=150, deadline=None)
@given(layouts, st.integers(13, 64), st.data())
def test_fragments_reconstruct_slices(tmp_path_factory, lengths, split_size, data):
    tmp = tmp_path_factory.mktemp("seg")
    recs = [("x" * (n - 1)) + "\n" for n in lengths]
    store, offsets = _write(tmp, recs)
    size = offsets[-1] + len(recs[-1])
    bounds = offsets + [size]
    # random partition of the records into contiguous slices, some of them selected
    cuts = sorted(set(data.draw(st.lists(st.integers(1, len(recs) - 1), max_size=10)))) if len(recs) > 1 else []
    edges = [0] + cuts + [len(recs)]
    slices = [SliceLocation("seg.dat", bounds[a], bounds[b] - 1) for a, b in zip(edges, edges[1:])]
    picked = [s for s in slices if data.draw(st.booleans())]
    chosen, plan = filter_splits(picked, enumerate_splits({"seg.dat": size}, split_size), store)
    got = []
    for sp in chosen:
        assert plan[sp]
        got.extend(read_split(store, sp, plan[sp]))
    expect = []
    for s in sorted(picked):
        expect.extend(store.read_range("seg.dat", s.start, s.end).decode().split("\n")[:-1])
    assert got == expect
