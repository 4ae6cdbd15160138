"""Ingestion of news and impression logs into model-ready arrays.

File formats (UTF-8, one JSON object per line):

``news.jsonl``
    ``{"news_id": str, "title": str, "body": str, "topic": str}``
``impressions.jsonl``
    ``{"user_id": str, "timestamp": int, "displayed": [news_id, ...],
    "clicked": [news_id, ...], "dwell": {news_id: seconds, ...}}``
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

NEWS_FILE = "news.jsonl"
IMPRESSIONS_FILE = "impressions.jsonl"

_TOKEN_RE = re.compile(r"[^\W_]+")


class DataError(ValueError):
    """Malformed input record."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; punctuation is dropped."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense token ids; 0 is padding and 1 is the unknown token."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text))
        kept = [t for t, c in counts.items() if c >= min_freq and t not in (PAD_TOKEN, UNK_TOKEN)]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids if i != PAD_ID]

    def to_json(self) -> str:
        return json.dumps(self.itos[2:], ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))


@dataclass(frozen=True)
class NewsRecord:
    news_id: str
    title_ids: tuple[int, ...]
    body_ids: tuple[int, ...]
    title_len: int
    body_len: int
    topic: str

    def __post_init__(self):
        if not 1 <= self.title_len <= len(self.title_ids):
            raise DataError(f"news {self.news_id}: title length {self.title_len} out of range")
        if not 0 <= self.body_len <= len(self.body_ids):
            raise DataError(f"news {self.news_id}: body length {self.body_len} out of range")
        if any(self.title_ids[self.title_len :]) or any(self.body_ids[self.body_len :]):
            raise DataError(f"news {self.news_id}: non-padding id past the true length")


def _pad(ids: list[int], max_len: int) -> tuple[tuple[int, ...], int]:
    ids = ids[:max_len]
    return tuple(ids) + (PAD_ID,) * (max_len - len(ids)), len(ids)


def encode_news(
    news_id: str,
    title: str,
    body: str,
    topic: str,
    vocab: Vocabulary,
    title_len: int = 30,
    body_len: int = 200,
) -> NewsRecord:
    t_ids, t_len = _pad(vocab.encode(tokenize(title)), title_len)
    if t_len == 0:
        raise DataError(f"news {news_id}: title has no tokens")
    b_ids, b_len = _pad(vocab.encode(tokenize(body)), body_len)
    return NewsRecord(news_id, t_ids, b_ids, t_len, b_len, topic)


def decode_news(record: NewsRecord, vocab: Vocabulary) -> tuple[list[str], list[str]]:
    return (
        vocab.decode(record.title_ids[: record.title_len]),
        vocab.decode(record.body_ids[: record.body_len]),
    )


@dataclass(frozen=True)
class ImpressionRecord:
    user_id: str
    timestamp: int
    displayed: tuple[str, ...]
    clicked: tuple[str, ...]
    dwell: dict = field(hash=False)

    def __post_init__(self):
        shown = set(self.displayed)
        for nid in self.clicked:
            if nid not in shown:
                raise DataError(f"user {self.user_id}: clicked {nid} was not displayed")
            if nid not in self.dwell:
                raise DataError(f"user {self.user_id}: clicked {nid} has no dwell time")
            if self.dwell[nid] < 0:
                raise DataError(f"user {self.user_id}: negative dwell for {nid}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "user_id": self.user_id,
                "timestamp": self.timestamp,
                "displayed": list(self.displayed),
                "clicked": list(self.clicked),
                "dwell": {k: self.dwell[k] for k in self.clicked},
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ImpressionRecord":
        try:
            return cls(
                str(d["user_id"]),
                int(d["timestamp"]),
                tuple(d["displayed"]),
                tuple(d["clicked"]),
                {str(k): float(v) for k, v in d["dwell"].items()},
            )
        except KeyError as e:
            raise DataError(f"impression record missing field {e}") from None


@dataclass(frozen=True)
class UserHistory:
    positive: tuple[str, ...]
    negative: tuple[str, ...]


def split_history(
    clicks: Sequence[tuple[str, float]], threshold: float, pos_cap: int = 50, neg_cap: int = 20
) -> UserHistory:
    """Route clicks with dwell < threshold to the negative list, the rest to positive.

    Order is preserved (most recent last); each list keeps its most recent
    ``cap`` entries.
    """
    pos = [nid for nid, t in clicks if t >= threshold]
    neg = [nid for nid, t in clicks if t < threshold]
    return UserHistory(tuple(pos[-pos_cap:] if pos_cap else []), tuple(neg[-neg_cap:] if neg_cap else []))


def history_snapshots(
    impressions: Sequence[ImpressionRecord],
    threshold: float,
    pos_cap: int = 50,
    neg_cap: int = 20,
    route_all_positive: bool = False,
) -> list[UserHistory]:
    """History of each impression's user as of that impression's time.

    Only clicks from strictly earlier impressions of the same user count
    (ties in timestamp fall back to input order), so a snapshot never contains
    the clicks it is used to predict. With ``route_all_positive`` every click
    lands in the positive list regardless of dwell.
    """
    order = sorted(range(len(impressions)), key=lambda i: impressions[i].timestamp)
    pos: dict[str, list[str]] = {}
    neg: dict[str, list[str]] = {}
    out: list[UserHistory | None] = [None] * len(impressions)
    for i in order:
        imp = impressions[i]
        p = pos.setdefault(imp.user_id, [])
        n = neg.setdefault(imp.user_id, [])
        out[i] = UserHistory(tuple(p[-pos_cap:]) if pos_cap else (), tuple(n[-neg_cap:]) if neg_cap else ())
        for nid in imp.clicked:
            if route_all_positive or imp.dwell[nid] >= threshold:
                p.append(nid)
            else:
                n.append(nid)
            # bound memory; only the tail is ever read
            if len(p) > 2 * pos_cap + 64:
                del p[: len(p) - pos_cap]
            if len(n) > 2 * neg_cap + 64:
                del n[: len(n) - neg_cap]
    return out


@dataclass(frozen=True)
class TrainingSample:
    history: UserHistory
    positive: str
    negatives: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "positive": self.positive,
                "negatives": list(self.negatives),
                "history_pos": list(self.history.positive),
                "history_neg": list(self.history.negative),
            },
            ensure_ascii=False,
        )


@dataclass
class SampleReport:
    samples: int = 0
    skipped_no_negatives: int = 0
    drawn_with_replacement: int = 0


def impression_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-derived generator so per-impression draws do not depend on processing order."""
    return np.random.default_rng([seed, index])


def build_samples(
    impressions: Sequence[ImpressionRecord],
    histories: Sequence[UserHistory],
    q: int = 4,
    seed: int = 0,
    epoch: int = 0,
) -> tuple[list[TrainingSample], SampleReport]:
    """One sample per click with ``q`` non-clicked negatives from the same impression.

    Negatives are drawn without replacement when the impression has at least
    ``q`` non-clicked news, otherwise with replacement. Impressions with no
    non-clicked news are skipped and counted.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    samples: list[TrainingSample] = []
    report = SampleReport()
    for i, (imp, hist) in enumerate(zip(impressions, histories)):
        if not imp.clicked:
            continue
        clicked = set(imp.clicked)
        pool = [nid for nid in imp.displayed if nid not in clicked]
        if not pool:
            report.skipped_no_negatives += len(imp.clicked)
            continue
        rng = impression_rng(seed, i) if epoch == 0 else np.random.default_rng([seed, i, epoch])
        for nid in imp.clicked:
            replace = len(pool) < q
            report.drawn_with_replacement += replace
            idx = rng.choice(len(pool), size=q, replace=replace)
            samples.append(TrainingSample(hist, nid, tuple(pool[j] for j in idx)))
    report.samples = len(samples)
    return samples, report


def chronological_split(sessions: Sequence) -> tuple[list, list, list]:
    """Stable sort by ``timestamp`` and cut 80/10/10 by count."""
    n = len(sessions)
    if n < 10:
        raise ValueError(f"need at least 10 sessions to split, got {n}")
    ordered = sorted(sessions, key=lambda s: s.timestamp)
    a, b = n * 8 // 10, n * 9 // 10
    return ordered[:a], ordered[a:b], ordered[b:]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: {e.msg}") from None
    return out


def read_news(path) -> list[dict]:
    rows = read_jsonl(path)
    for r in rows:
        missing = {"news_id", "title", "body", "topic"} - r.keys()
        if missing:
            raise DataError(f"news record missing fields {sorted(missing)}")
    return rows


def read_impressions(path) -> list[ImpressionRecord]:
    return [ImpressionRecord.from_dict(d) for d in read_jsonl(path)]


def write_jsonl(path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Model-ready dataset
# ---------------------------------------------------------------------------


@dataclass
class SampleArrays:
    """Index form of training samples; history rows are padded with -1."""

    candidates: np.ndarray  # [S, q+1], clicked news first
    hist_pos: np.ndarray  # [S, pos_cap]
    hist_neg: np.ndarray  # [S, neg_cap]

    def __len__(self) -> int:
        return len(self.candidates)

    def subset(self, idx) -> "SampleArrays":
        return SampleArrays(self.candidates[idx], self.hist_pos[idx], self.hist_neg[idx])


@dataclass
class EvalImpressions:
    """Index form of evaluation impressions (variable candidate counts)."""

    candidates: list[np.ndarray]
    labels: list[np.ndarray]
    hist_pos: np.ndarray
    hist_neg: np.ndarray

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class Dataset:
    vocab: Vocabulary
    news_ids: list[str]
    topics: list[str]
    title: np.ndarray  # [N, title_len] int32
    title_len: np.ndarray
    body: np.ndarray  # [N, body_len] int32
    body_len: np.ndarray
    train: SampleArrays
    valid: EvalImpressions
    test: EvalImpressions
    train_impressions: list[ImpressionRecord]
    samples: list[TrainingSample]
    report: SampleReport
    settings: dict
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_news(self) -> int:
        return len(self.news_ids)


def _pad_rows(lists: Sequence[Sequence[int]], width: int) -> np.ndarray:
    out = np.full((len(lists), max(width, 1)), -1, dtype=np.int64)
    for i, row in enumerate(lists):
        if row:
            out[i, : len(row)] = row
    return out


def load_raw(data_dir) -> tuple[list[dict], list[ImpressionRecord]]:
    data_dir = Path(data_dir)
    for name in (NEWS_FILE, IMPRESSIONS_FILE):
        if not (data_dir / name).is_file():
            raise FileNotFoundError(f"missing input file: {data_dir / name}")
    return read_news(data_dir / NEWS_FILE), read_impressions(data_dir / IMPRESSIONS_FILE)


def prepare_dataset(
    news_rows: Sequence[dict],
    impressions: Sequence[ImpressionRecord],
    *,
    title_len: int = 30,
    body_len: int = 200,
    pos_cap: int = 50,
    neg_cap: int = 20,
    threshold: float = 10.0,
    q: int = 4,
    seed: int = 0,
    min_freq: int = 2,
    route_all_positive: bool = False,
) -> Dataset:
    """Split, tokenize and index a raw log.

    The vocabulary comes from news displayed in the training split only.
    Impressions of all splits feed the history snapshots, so evaluation users
    see every click made before the evaluated impression.
    """
    train_imp, valid_imp, test_imp = chronological_split(list(impressions))
    by_id = {r["news_id"]: r for r in news_rows}
    seen_train = {nid for imp in train_imp for nid in imp.displayed}
    vocab = Vocabulary.build(
        (
            by_id[nid][k]
            for nid in sorted(seen_train)
            if nid in by_id
            for k in ("title", "body")
        ),
        min_freq=min_freq,
    )
    news_ids = [r["news_id"] for r in news_rows]
    index = {nid: i for i, nid in enumerate(news_ids)}
    if len(index) != len(news_ids):
        raise DataError("duplicate news_id in news file")
    records = [
        encode_news(r["news_id"], r["title"], r["body"], r["topic"], vocab, title_len, body_len)
        for r in news_rows
    ]
    for imp in impressions:
        for nid in imp.displayed:
            if nid not in index:
                raise DataError(f"impression references unknown news {nid}")

    ordered = train_imp + valid_imp + test_imp
    hists = history_snapshots(ordered, threshold, pos_cap, neg_cap, route_all_positive)
    n_tr, n_va = len(train_imp), len(valid_imp)

    samples, report = build_samples(train_imp, hists[:n_tr], q=q, seed=seed)
    train = SampleArrays(
        np.array([[index[s.positive]] + [index[x] for x in s.negatives] for s in samples], dtype=np.int64).reshape(-1, q + 1),
        _pad_rows([[index[x] for x in s.history.positive] for s in samples], pos_cap),
        _pad_rows([[index[x] for x in s.history.negative] for s in samples], neg_cap),
    )

    def eval_split(imps, hs):
        cands, labels = [], []
        for imp in imps:
            clicked = set(imp.clicked)
            cands.append(np.array([index[x] for x in imp.displayed], dtype=np.int64))
            labels.append(np.array([x in clicked for x in imp.displayed], dtype=np.int64))
        return EvalImpressions(
            cands,
            labels,
            _pad_rows([[index[x] for x in h.positive] for h in hs], pos_cap),
            _pad_rows([[index[x] for x in h.negative] for h in hs], neg_cap),
        )

    return Dataset(
        vocab=vocab,
        news_ids=news_ids,
        topics=[r.topic for r in records],
        title=np.array([r.title_ids for r in records], dtype=np.int64).reshape(-1, title_len),
        title_len=np.array([r.title_len for r in records], dtype=np.int64),
        body=np.array([r.body_ids for r in records], dtype=np.int64).reshape(-1, body_len),
        body_len=np.array([r.body_len for r in records], dtype=np.int64),
        train=train,
        valid=eval_split(valid_imp, hists[n_tr : n_tr + n_va]),
        test=eval_split(test_imp, hists[n_tr + n_va :]),
        train_impressions=train_imp,
        samples=samples,
        report=report,
        settings=dict(
            title_len=title_len,
            body_len=body_len,
            pos_cap=pos_cap,
            neg_cap=neg_cap,
            threshold=threshold,
            q=q,
            seed=seed,
            min_freq=min_freq,
            route_all_positive=route_all_positive,
        ),
    )


def resample_negatives(ds: Dataset, samples_seed: int, epoch: int) -> SampleArrays:
    """Redraw training negatives for one epoch (counter-derived per impression)."""
    index = {nid: i for i, nid in enumerate(ds.news_ids)}
    s = ds.settings
    hists = history_snapshots(ds.train_impressions, s["threshold"], s["pos_cap"], s["neg_cap"], s["route_all_positive"])
    samples, _ = build_samples(ds.train_impressions, hists, q=s["q"], seed=samples_seed, epoch=epoch)
    cand = np.array([[index[x.positive]] + [index[y] for y in x.negatives] for x in samples], dtype=np.int64)
    return SampleArrays(cand.reshape(-1, s["q"] + 1), ds.train.hist_pos, ds.train.hist_neg)
