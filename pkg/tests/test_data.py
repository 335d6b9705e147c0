import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setmtpp.data import (DataError, Dataset, Event, ItemSet, Sequence, Vocabulary, load_sequences,
                          merge_simultaneous, save_sequences, split_dataset)

from conftest import make_seq


def write_lines(path, objs):
    path.write_text("\n".join(json.dumps(o) for o in objs) + "\n")
    return path


def test_smallest_file(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"T": 3.0, "events": [{"t": 1.0, "items": ["a"]}]}])
    d = load_sequences(p)
    assert d.vocab.K == 1 and len(d) == 1 and d.n_events() == 1


def test_empty_event_list_is_valid(tmp_path):
    d = load_sequences(write_lines(tmp_path / "d.jsonl", [{"T": 5.0, "events": []}]), Vocabulary(("a",)))
    assert len(d.sequences[0]) == 0 and d.sequences[0].t_end == 5.0


def test_event_beyond_horizon(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"T": 3.0, "events": [{"t": 4.0, "items": ["a"]}]}])
    with pytest.raises(DataError, match="event beyond horizon"):
        load_sequences(p)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"T": 1.0, "events": []}\n{not json\n')
    with pytest.raises(DataError, match="line 2"):
        load_sequences(p, Vocabulary(("a",)))


def test_unknown_label_with_vocab(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"T": 3.0, "events": [{"t": 1.0, "items": ["z"]}]}])
    with pytest.raises(DataError, match="unknown label"):
        load_sequences(p, Vocabulary(("a",)))


def test_vocab_first_appearance_order(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [
        {"T": 3.0, "events": [{"t": 1.0, "items": ["q", "b"]}]},
        {"T": 3.0, "events": [{"t": 1.0, "items": ["a", "q"]}]},
    ])
    assert load_sequences(p).vocab.labels == ("q", "b", "a")


def test_load_merges_ties_and_sorts(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"T": 3.0, "events": [
        {"t": 2.0, "items": ["a"]}, {"t": 1.0, "items": ["a"]}, {"t": 1.0, "items": ["b"]}]}])
    seq = load_sequences(p).sequences[0]
    assert seq.times.tolist() == [1.0, 2.0]
    assert seq.events[0].x.ids() == [0, 1]


def test_length_filter(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"T": 9.0, "events": [{"t": float(i + 1), "items": ["a"]} for i in range(n)]}
                                           for n in (1, 3, 6)])
    assert [len(s) for s in load_sequences(p, min_events=2, max_events=5)] == [3]


def test_merge_examples(vocab2):
    a, b = vocab2.itemset(["a"]), vocab2.itemset(["b"])
    out = merge_simultaneous([Event(1.0, a), Event(1.0, b), Event(2.0, a)])
    assert [(e.t, e.x) for e in out] == [(1.0, a | b), (2.0, a)]
    assert merge_simultaneous([Event(1.0, a)]) == [Event(1.0, a)]
    assert merge_simultaneous([Event(1.0, a), Event(1.0, a)]) == [Event(1.0, a)]


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3)), max_size=30))
def test_merge_output_strictly_increasing(raw):
    evs = sorted((Event(float(t), ItemSet.from_ids([k], 4)) for t, k in raw), key=lambda e: e.t)
    out = merge_simultaneous(evs)
    times = [e.t for e in out]
    assert times == sorted(set(times))
    for e in out:
        assert e.x == ItemSet.from_ids([k for t, k in raw if float(t) == e.t], 4)


def test_split_sizes_and_determinism():
    v = Vocabulary(("a",))
    d = Dataset(v, tuple(Sequence((), float(i + 1)) for i in range(100)))
    parts = split_dataset(d, (0.75, 0.10, 0.15), seed=0)
    assert [len(p) for p in parts] == [75, 10, 15]
    again = split_dataset(d, seed=7), split_dataset(d, seed=7)
    assert [p.sequences for p in again[0]] == [p.sequences for p in again[1]]
    with pytest.raises(ValueError):
        split_dataset(d, (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        split_dataset(Dataset(v, (Sequence((), 1.0),) * 2))


@given(st.integers(3, 60), st.integers(0, 1000))
def test_split_is_partition(n, seed):
    v = Vocabulary(("a",))
    d = Dataset(v, tuple(Sequence((), float(i + 1)) for i in range(n)))
    parts = split_dataset(d, seed=seed)
    horizons = sorted(s.t_end for p in parts for s in p)
    assert horizons == [float(i + 1) for i in range(n)]


@given(st.lists(st.lists(st.tuples(st.floats(0.01, 50, allow_nan=False), st.sets(st.integers(0, 3))), max_size=8),
                max_size=5))
def test_roundtrip(tmp_path_factory, seqs_raw):
    v = Vocabulary(("w", "x", "y", "z"))
    seqs = []
    for raw in seqs_raw:
        uniq = {}
        for t, items in raw:
            uniq.setdefault(t, items)
        evs = tuple(Event(t, ItemSet.from_ids(sorted(uniq[t]), 4)) for t in sorted(uniq))
        seqs.append(Sequence(evs, max([e.t for e in evs], default=0.0) + 1.0))
    d = Dataset(v, tuple(seqs))
    tmp = tmp_path_factory.mktemp("rt")
    save_sequences(d, tmp / "d.jsonl", tmp / "v.json")
    if not seqs:
        return
    back = load_sequences(tmp / "d.jsonl", Vocabulary.load(tmp / "v.json"))
    assert back == d


def test_itemset_ops():
    a, b = ItemSet.from_ids([0, 2], 4), ItemSet.from_ids([2, 3], 4)
    assert (a | b).ids() == [0, 2, 3] and (a & b).ids() == [2] and (a - b).ids() == [0]
    assert not a.isdisjoint(b) and ItemSet.empty(4).issubset(a)
    assert ItemSet.from_mask(a.mask()) == a
    with pytest.raises(DataError):
        ItemSet.from_ids([4], 4)


def test_sequence_invariants(vocab2):
    with pytest.raises(DataError):
        make_seq(vocab2, [(2.0, ["a"]), (1.0, ["b"])], 3.0)
    with pytest.raises(DataError):
        Event(-1.0, ItemSet.empty(2))
    s = make_seq(vocab2, [(1.0, ["a"]), (2.0, []), (2.5, ["b"])], 3.0)
    assert s.prefix(2).t_end == 2.0 and len(s.prefix(2)) == 2
    assert [e.t for e in s.window(1.0, 2.5)] == [2.0, 2.5]
