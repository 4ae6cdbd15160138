import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwellrec.data import (
    PAD_ID,
    UNK_ID,
    DataError,
    ImpressionRecord,
    UserHistory,
    Vocabulary,
    build_samples,
    chronological_split,
    decode_news,
    encode_news,
    history_snapshots,
    prepare_dataset,
    resample_negatives,
    split_history,
    tokenize,
)

from .conftest import news_rows


@pytest.mark.parametrize(
    "text, tokens",
    [
        ("Hello, World!", ["hello", "world"]),
        ("", []),
        ("Oscars 2019: 'The Favourite'", ["oscars", "2019", "the", "favourite"]),
        ("snake_case and   tabs\tok", ["snake", "case", "and", "tabs", "ok"]),
    ],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_vocabulary_ids_are_dense_and_bijective():
    vocab = Vocabulary.build(["a b c a b a", "b d"], min_freq=2)
    assert vocab.itos[:2] == ["<pad>", "<unk>"]
    assert vocab.itos[2:] == ["a", "b"]  # c and d fall under the cutoff
    assert sorted(vocab.stoi.values()) == list(range(len(vocab)))
    assert all(vocab.stoi[t] == i for i, t in enumerate(vocab.itos))
    assert vocab.encode(["a", "zzz"]) == [2, UNK_ID]
    assert Vocabulary.from_json(vocab.to_json()).itos == vocab.itos
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])


def test_encode_round_trip_keeps_leading_tokens():
    words = [f"w{i}" for i in range(250)]
    vocab = Vocabulary(words)
    rec = encode_news("n1", " ".join(words[:40]), " ".join(words), "t", vocab)
    assert rec.title_len == 30 and rec.body_len == 200
    assert len(rec.title_ids) == 30 and len(rec.body_ids) == 200
    title, body = decode_news(rec, vocab)
    assert title == words[:30] and body == words[:200]

    short = encode_news("n2", "w1 w2", "", "t", vocab)
    assert short.title_ids[2:] == (PAD_ID,) * 28 and short.body_len == 0
    with pytest.raises(DataError):
        encode_news("n3", "!!!", "body", "t", vocab)


def test_split_history_examples():
    h = split_history([("a", 3), ("b", 220)], 10)
    assert h == UserHistory(positive=("b",), negative=("a",))
    assert split_history([("a", 10)], 10).positive == ("a",)
    clicks = [(f"n{i}", 60.0) for i in range(60)]
    h = split_history(clicks, 10, pos_cap=50)
    assert h.positive == tuple(f"n{i}" for i in range(10, 60))


dwell_clicks = st.lists(
    st.tuples(st.sampled_from("abcdefgh"), st.floats(0, 600, allow_nan=False)), max_size=40
)


@settings(max_examples=200, deadline=None)
@given(dwell_clicks, st.floats(0, 600), st.floats(0, 600))
def test_split_history_partition_and_monotonicity(clicks, t1, t2):
    lo, hi = sorted((t1, t2))
    big = len(clicks) + 1
    h = split_history(clicks, lo, pos_cap=big, neg_cap=big)
    # multiset partition: every click lands in exactly one list, order preserved
    assert sorted(h.positive + h.negative) == sorted(n for n, _ in clicks)
    assert list(h.positive) == [n for n, t in clicks if t >= lo]
    assert list(h.negative) == [n for n, t in clicks if t < lo]
    pos_lo = {i for i, (_, t) in enumerate(clicks) if t >= lo}
    pos_hi = {i for i, (_, t) in enumerate(clicks) if t >= hi}
    assert pos_hi <= pos_lo


def imp(user, ts, displayed, clicked, dwell):
    return ImpressionRecord(user, ts, tuple(displayed), tuple(clicked), dict(dwell))


def test_history_snapshots_exclude_own_and_later_clicks():
    imps = [
        imp("u", 2, ["c", "d"], ["c"], {"c": 3}),
        imp("u", 1, ["a", "b"], ["a", "b"], {"a": 30, "b": 4}),
        imp("v", 0, ["a"], ["a"], {"a": 50}),
    ]
    hs = history_snapshots(imps, 10)
    assert hs[1] == UserHistory((), ())
    assert hs[0] == UserHistory(("a",), ("b",))
    assert hs[2] == UserHistory((), ())
    routed = history_snapshots(imps, 10, route_all_positive=True)
    assert routed[0] == UserHistory(("a", "b"), ())


def test_build_samples_cases():
    empty = UserHistory((), ())
    imps = [
        imp("u", 0, ["p", "n1", "n2", "n3", "n4", "n5"], ["p"], {"p": 20}),
        imp("u", 1, ["p", "q", "n1", "n2", "n3"], ["p", "q"], {"p": 20, "q": 5}),
        imp("u", 2, ["p", "n1", "n2"], ["p"], {"p": 20}),
        imp("u", 3, ["p", "q"], ["p", "q"], {"p": 20, "q": 20}),
        imp("u", 4, ["n1", "n2"], [], {}),
    ]
    samples, report = build_samples(imps, [empty] * len(imps), q=4, seed=3)
    assert [s.positive for s in samples] == ["p", "p", "q", "p"]
    first = samples[0].negatives
    assert len(first) == 4 and len(set(first)) == 4 and set(first) <= {"n1", "n2", "n3", "n4", "n5"}
    for s in samples[1:3]:
        assert set(s.negatives) <= {"n1", "n2", "n3"} and "p" not in s.negatives
    last = samples[3].negatives
    assert len(last) == 4 and set(last) <= {"n1", "n2"}
    assert report.samples == 4
    assert report.drawn_with_replacement == 3  # two clicks of impression 1 and the last one
    assert report.skipped_no_negatives == 2


def test_build_samples_draws_do_not_depend_on_neighbours():
    empty = UserHistory((), ())
    a = imp("u", 0, ["p", *"abcdefg"], ["p"], {"p": 20})
    b = imp("u", 1, ["p", *"hijklmn"], ["p"], {"p": 20})
    both, _ = build_samples([a, b], [empty] * 2, seed=9)
    alone, _ = build_samples([a], [empty], seed=9)
    assert both[0] == alone[0]
    again, _ = build_samples([a, b], [empty] * 2, seed=9)
    assert again == both


def test_chronological_split():
    sessions = [SimpleNamespace(timestamp=10 - i, i=i) for i in range(10)]
    tr, va, te = chronological_split(sessions)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert [s.timestamp for s in tr + va + te] == list(range(1, 11))

    flat = [SimpleNamespace(timestamp=0, i=i) for i in range(20)]
    tr, va, te = chronological_split(flat)
    assert [s.i for s in tr + va + te] == list(range(20))
    assert (len(tr), len(va), len(te)) == (16, 2, 2)

    big = [SimpleNamespace(timestamp=0)] * 500_000
    assert tuple(map(len, chronological_split(big))) == (400_000, 50_000, 50_000)
    with pytest.raises(ValueError):
        chronological_split(flat[:9])


def test_impression_record_validation():
    with pytest.raises(DataError):
        imp("u", 0, ["a"], ["b"], {"b": 3})
    with pytest.raises(DataError):
        imp("u", 0, ["a"], ["a"], {})
    with pytest.raises(DataError):
        imp("u", 0, ["a"], ["a"], {"a": -1})
    with pytest.raises(DataError):
        ImpressionRecord.from_dict({"user_id": "u"})
    rec = imp("u", 5, ["a", "b"], ["a"], {"a": 12.5})
    assert ImpressionRecord.from_dict(json.loads(rec.to_json())) == rec


def test_prepare_dataset_shapes(small_data, small_dataset):
    ds = small_dataset
    s = ds.settings
    assert ds.title.shape == (ds.num_news, s["title_len"])
    assert ds.body.shape == (ds.num_news, 32)
    assert ds.train.candidates.shape[1] == s["q"] + 1
    assert ds.train.hist_pos.shape == (len(ds.train), s["pos_cap"])
    assert ds.train.hist_neg.shape == (len(ds.train), s["neg_cap"])
    n = len(small_data.impressions)
    assert len(ds.train_impressions) == n * 8 // 10
    assert len(ds.valid) + len(ds.test) == n - n * 8 // 10
    # clicked news first, negatives never the clicked one
    assert np.all(ds.train.candidates[:, 1:] != ds.train.candidates[:, :1])
    for c, l in zip(ds.valid.candidates, ds.valid.labels):
        assert len(c) == len(l)


def test_prepare_dataset_vocabulary_from_training_split_only(small_data):
    rows = news_rows(small_data)
    rows.append({"news_id": "unseen", "title": "zebra zebra", "body": "zebra", "topic": "x"})
    ds = prepare_dataset(rows, small_data.impressions, body_len=32)
    assert "zebra" not in ds.vocab.stoi


def test_prepare_dataset_is_deterministic(small_data):
    a = prepare_dataset(news_rows(small_data), small_data.impressions, body_len=32, seed=4)
    b = prepare_dataset(news_rows(small_data), small_data.impressions, body_len=32, seed=4)
    assert [s.to_json() for s in a.samples] == [s.to_json() for s in b.samples]
    np.testing.assert_array_equal(a.train.candidates, b.train.candidates)


def test_resample_negatives_keeps_clicks_and_histories(small_dataset):
    ds = small_dataset
    redrawn = resample_negatives(ds, 0, epoch=1)
    np.testing.assert_array_equal(redrawn.candidates[:, 0], ds.train.candidates[:, 0])
    assert not np.array_equal(redrawn.candidates, ds.train.candidates)
    assert redrawn.hist_pos is ds.train.hist_pos


def test_prepare_dataset_rejects_unknown_news(small_data):
    rows = news_rows(small_data)[1:]
    with pytest.raises(DataError):
        prepare_dataset(rows, small_data.impressions)
