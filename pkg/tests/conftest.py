import numpy as np
import pytest

from dwellrec import tensor as T
from dwellrec.config import desk_config, merge
from dwellrec.data import prepare_dataset
from dwellrec.synth import GeneratorConfig, generate


def news_rows(data):
    names = data.topics.names
    return [
        {"news_id": n.news_id, "title": n.title, "body": n.body, "topic": names[n.title_topic]}
        for n in data.corpus
    ]


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = coords if coords is not None else np.ndindex(x.shape)
    for ix in it:
        old = x[ix]
        x[ix] = old + h
        up = f()
        x[ix] = old - h
        down = f()
        x[ix] = old
        g[ix] = (up - down) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def double():
    with T.precision("double"):
        yield


@pytest.fixture(scope="session")
def small_data():
    """A few hundred impressions; enough for every split and for sampling."""
    return generate(GeneratorConfig(users=40, news=300, sessions=400, seed=7))


@pytest.fixture(scope="session")
def small_dataset(small_data):
    return prepare_dataset(news_rows(small_data), small_data.impressions, body_len=32)


@pytest.fixture(scope="session")
def tiny_config():
    """Very small model for fast tests and finite-difference checks."""
    return merge(
        desk_config(),
        {
            "data": {"body_len": 32},
            "model": {"word_dim": 8, "heads": 2, "head_dim": 4, "attn_hidden": 8, "dropout": 0.0},
            "train": {"epochs": 1},
        },
    )
