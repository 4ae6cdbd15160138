"""Synthetic news corpus and impression log with planted ground truth.

Users prefer topics; clicks follow the title topic, dwell follows the body
topic. A clickbait article has a body topic different from its title topic,
so it attracts clicks from title-topic fans who then leave quickly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import IMPRESSIONS_FILE, NEWS_FILE, ImpressionRecord, write_jsonl

GROUND_TRUTH_FILE = "ground_truth.jsonl"
USERS_FILE = "users.jsonl"

TOPIC_NAMES = (
    "sports", "finance", "video", "lifestyle", "food", "travel", "health", "autos",
    "music", "movies", "tv", "weather", "politics", "science", "kids", "games",
    "news", "style", "home", "pets",
)  # fmt: skip


@dataclass
class GeneratorConfig:
    users: int = 1000
    news: int = 5000
    sessions: int = 20000
    displayed: int = 10
    topics: int = 8
    words_per_topic: int = 150
    common_words: int = 200
    common_word_share: float = 0.3
    title_mean_len: int = 10
    body_mean_len: int = 100
    clickbait_rate: float = 0.3
    # (median seconds, log-space sigma)
    long_dwell: tuple[float, float] = (120.0, 1.0)
    short_dwell: tuple[float, float] = (4.0, math.log(2.5) / 1.2815515655446004)
    temperature: float = 0.5
    click_rate: float = 0.15
    preference_concentration: float = 0.2
    horizon_seconds: int = 90 * 86400
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.clickbait_rate <= 1.0:
            raise ValueError(f"clickbait_rate must be in [0, 1], got {self.clickbait_rate}")
        for name in ("users", "news", "displayed", "topics", "words_per_topic"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sessions < 0:
            raise ValueError("sessions must be non-negative")
        if self.news < self.displayed:
            raise ValueError("news pool must hold at least one impression's worth of items")
        if self.clickbait_rate > 0 and self.topics < 2:
            raise ValueError("clickbait needs at least two topics")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        self.long_dwell = tuple(self.long_dwell)
        self.short_dwell = tuple(self.short_dwell)


@dataclass
class TopicModel:
    names: list[str]
    vocabulary: list[str]
    distributions: np.ndarray  # [K, V], rows sum to 1

    @property
    def k(self) -> int:
        return len(self.names)

    def sample(self, topic: int, n: int, rng: np.random.Generator) -> list[str]:
        ids = rng.choice(len(self.vocabulary), size=n, p=self.distributions[topic])
        return [self.vocabulary[i] for i in ids]


def topic_name(i: int) -> str:
    base = TOPIC_NAMES[i % len(TOPIC_NAMES)]
    return base if i < len(TOPIC_NAMES) else f"{base}{i // len(TOPIC_NAMES)}"


def make_topic_model(config: GeneratorConfig) -> TopicModel:
    """Each topic mixes its own word block with a shared Zipfian background."""
    rng = np.random.default_rng([config.seed, 0])
    k, w, c = config.topics, config.words_per_topic, config.common_words
    names = [topic_name(i) for i in range(k)]
    vocab = [f"{names[t]}{j}" for t in range(k) for j in range(w)] + [f"w{j}" for j in range(c)]
    common = 1.0 / np.arange(1, c + 1) if c else np.zeros(0)
    if c:
        common /= common.sum()
    share = config.common_word_share if c else 0.0
    dists = np.zeros((k, k * w + c))
    for t in range(k):
        own = rng.dirichlet(np.ones(w))
        dists[t, t * w : (t + 1) * w] = (1 - share) * own
        dists[t, k * w :] = share * common
        dists[t] /= dists[t].sum()
    return TopicModel(names, vocab, dists)


@dataclass
class SyntheticNews:
    news_id: str
    title: str
    body: str
    title_topic: int
    body_topic: int
    is_clickbait: bool


def generate_corpus(config: GeneratorConfig, topics: TopicModel) -> list[SyntheticNews]:
    rng = np.random.default_rng([config.seed, 1])
    out = []
    width = len(str(config.news))
    for i in range(config.news):
        t_topic = int(rng.integers(topics.k))
        bait = bool(rng.random() < config.clickbait_rate)
        if bait:
            b_topic = int(rng.integers(topics.k - 1))
            b_topic += b_topic >= t_topic
        else:
            b_topic = t_topic
        t_len = int(min(30, max(3, rng.poisson(config.title_mean_len))))
        b_len = int(max(1, rng.poisson(config.body_mean_len)))
        out.append(
            SyntheticNews(
                f"N{i:0{width}d}",
                " ".join(topics.sample(t_topic, t_len, rng)),
                " ".join(topics.sample(b_topic, b_len, rng)),
                t_topic,
                b_topic,
                bait,
            )
        )
    return out


@dataclass
class SyntheticUser:
    user_id: str
    preference: np.ndarray
    sessions: int

    @property
    def liked(self) -> np.ndarray:
        """Topics whose affinity is strictly above the user's median affinity."""
        return self.preference > np.median(self.preference)


def generate_users(config: GeneratorConfig, k: int) -> list[SyntheticUser]:
    rng = np.random.default_rng([config.seed, 2])
    base, extra = divmod(config.sessions, config.users)
    width = len(str(config.users))
    users = []
    for u in range(config.users):
        pref = rng.dirichlet(np.full(k, config.preference_concentration))
        users.append(SyntheticUser(f"U{u:0{width}d}", pref, base + (u < extra)))
    return users


def lognormal_cdf(x: float, median: float, sigma: float) -> float:
    if x <= 0:
        return 0.0
    return 0.5 * (1 + math.erf((math.log(x) - math.log(median)) / (sigma * math.sqrt(2))))


def click_probabilities(user: SyntheticUser, title_topics: np.ndarray, config: GeneratorConfig) -> np.ndarray:
    affinity = user.preference[title_topics]
    z = affinity / config.temperature
    w = np.exp(z - z.max())
    return np.minimum(1.0, config.click_rate * len(title_topics) * w / w.sum())


def simulate_session(
    user: SyntheticUser,
    corpus: Sequence[SyntheticNews],
    timestamp: int,
    config: GeneratorConfig,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> ImpressionRecord:
    """One impression with at least one click; empty draws are regenerated."""
    n = config.displayed
    if len(corpus) < n:
        raise ValueError("candidate pool smaller than the impression size")
    liked = user.liked
    for _ in range(max_tries):
        shown = rng.choice(len(corpus), size=n, replace=False)
        titles = np.array([corpus[i].title_topic for i in shown])
        hits = rng.random(n) < click_probabilities(user, titles, config)
        if hits.any():
            break
    else:
        raise RuntimeError(f"no click after {max_tries} draws for user {user.user_id}")
    dwell = {}
    for i in shown[hits]:
        item = corpus[i]
        median, sigma = config.long_dwell if liked[item.body_topic] else config.short_dwell
        dwell[item.news_id] = round(float(median * math.exp(sigma * rng.standard_normal())), 3)
    return ImpressionRecord(
        user.user_id,
        int(timestamp),
        tuple(corpus[i].news_id for i in shown),
        tuple(corpus[i].news_id for i in shown[hits]),
        dwell,
    )


def simulate_user(user: SyntheticUser, index: int, corpus, config: GeneratorConfig) -> list[ImpressionRecord]:
    rng = np.random.default_rng([config.seed, 3, index])
    times = np.sort(rng.integers(0, config.horizon_seconds, size=user.sessions))
    return [simulate_session(user, corpus, t, config, rng) for t in times]


@dataclass
class SyntheticData:
    config: GeneratorConfig
    topics: TopicModel
    corpus: list[SyntheticNews]
    users: list[SyntheticUser]
    impressions: list[ImpressionRecord] = field(default_factory=list)


def generate(config: GeneratorConfig) -> SyntheticData:
    topics = make_topic_model(config)
    corpus = generate_corpus(config, topics)
    users = generate_users(config, topics.k)
    impressions = []
    for u, user in enumerate(users):
        impressions.extend(simulate_user(user, u, corpus, config))
    return SyntheticData(config, topics, corpus, users, impressions)


def emit_dataset(data: SyntheticData, out_dir) -> Path:
    """Write news, impressions, ground-truth and user sidecars to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = data.topics.names
    write_jsonl(
        out / NEWS_FILE,
        (
            json.dumps({"news_id": n.news_id, "title": n.title, "body": n.body, "topic": names[n.title_topic]})
            for n in data.corpus
        ),
    )
    write_jsonl(out / IMPRESSIONS_FILE, (imp.to_json() for imp in data.impressions))
    write_jsonl(
        out / GROUND_TRUTH_FILE,
        (
            json.dumps(
                {
                    "news_id": n.news_id,
                    "title_topic": names[n.title_topic],
                    "body_topic": names[n.body_topic],
                    "is_clickbait": n.is_clickbait,
                }
            )
            for n in data.corpus
        ),
    )
    write_jsonl(
        out / USERS_FILE,
        (json.dumps({"user_id": u.user_id, "preference": [round(float(p), 6) for p in u.preference]}) for u in data.users),
    )
    cfg = asdict(data.config)
    (out / "generator_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return out


def read_ground_truth(path) -> dict[str, dict]:
    from .data import read_jsonl

    return {r["news_id"]: r for r in read_jsonl(path)}
