"""News encoder, dwell-split user encoder and the two-score click predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .nn import EVAL, AdditiveAttention, Context, Encoder, Linear, Module, masked_mean
from .tensor import DimensionError, Parameter, Tensor


@dataclass
class NewsEmbedding:
    """Unified news vectors ``r`` with the parts they were summed from.

    Parts a configuration does not compute are ``None``.
    """

    r: Tensor
    r_t: Tensor | None = None
    r_b: Tensor | None = None
    c_t: Tensor | None = None
    c_b: Tensor | None = None


@dataclass
class UserEmbeddingPair:
    u_p: Tensor
    u_n: Tensor
    positive_empty: np.ndarray
    negative_empty: np.ndarray


def _trim(ids: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cut padding columns beyond the longest row; returns ids, mask, has-content flags."""
    width = max(int(lengths.max(initial=0)), 1)
    ids = ids[:, :width]
    mask = np.arange(width)[None, :] < lengths[:, None]
    has = lengths > 0
    if not has.all():
        mask = mask.copy()
        mask[~has, 0] = True
    return ids, mask, has


class TextSide(Module):
    """Word+position embedding, projection and transformer for one text field."""

    def __init__(self, cfg: ModelConfig, max_len: int, rng: np.random.Generator):
        d = cfg.d_model
        self.position = Parameter(rng.normal(0, cfg.embed_std, size=(max_len, cfg.word_dim)))
        self.proj = Linear(cfg.word_dim, d, rng)
        self.encoder = Encoder(d, cfg.heads, rng, cfg.dropout, cfg.blocks)
        self.pool = AdditiveAttention(d, cfg.attn_hidden, rng)
        self.dropout = cfg.dropout
        self.max_len = max_len

    def embed(self, words: Parameter, ids: np.ndarray) -> Tensor:
        length = ids.shape[1]
        if length > self.max_len:
            raise DimensionError(f"sequence length {length} exceeds {self.max_len}")
        return T.embedding_lookup(words, ids) + self.position[:length]

    def __call__(self, words: Parameter, ids, mask, ctx: Context, word_attention: bool):
        e = T.dropout(self.embed(words, ids), self.dropout, ctx.rng, ctx.training)
        h = self.encoder(self.proj(e), mask, ctx)
        pooled = self.pool(h, mask) if word_attention else masked_mean(h, mask)
        return h, pooled


class NewsEncoder(Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int, title_len: int, body_len: int, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.words = Parameter(rng.normal(0, cfg.embed_std, size=(vocab_size, cfg.word_dim)))
        self.words.data[0] = 0.0
        self.title = TextSide(cfg, title_len, rng)
        self.body = TextSide(cfg, body_len, rng)
        # c_b: title summary attends over body words; c_t: body summary over title words
        self.body_by_title = AdditiveAttention(d, cfg.attn_hidden, rng, d_query=d)
        self.title_by_body = AdditiveAttention(d, cfg.attn_hidden, rng, d_query=d)

    def __call__(self, title_ids, title_len, body_ids, body_len, ctx: Context = EVAL) -> NewsEmbedding:
        cfg = self.cfg
        title_len = np.asarray(title_len)
        body_len = np.asarray(body_len)
        use_title = cfg.views in ("title", "both")
        use_body = cfg.views in ("body", "both")
        r_t = r_b = c_t = c_b = None
        if use_title:
            if (title_len < 1).any():
                raise T.DegenerateInputError("every title needs at least one token")
            t_ids, t_mask, _ = _trim(np.asarray(title_ids), title_len)
            h_t, r_t = self.title(self.words, t_ids, t_mask, ctx, cfg.word_attention)
        if use_body:
            b_ids, b_mask, has_body = _trim(np.asarray(body_ids), body_len)
            h_b, r_b = self.body(self.words, b_ids, b_mask, ctx, cfg.word_attention)
            body_gate = None
            if not has_body.all():
                body_gate = Tensor(has_body.astype(T.default_dtype())[:, None])
                r_b = r_b * body_gate
        if cfg.views == "title":
            return NewsEmbedding(r_t, r_t=r_t)
        if cfg.views == "body":
            return NewsEmbedding(r_b, r_b=r_b)
        r = r_t + r_b
        if cfg.interactive:
            c_b = self.body_by_title(h_b, b_mask, r_t)
            if body_gate is not None:
                c_b = c_b * body_gate
            if cfg.interactive_swapped:
                c_t = self.title_by_body(h_b, b_mask, r_t)
                if body_gate is not None:
                    c_t = c_t * body_gate
            else:
                c_t = self.title_by_body(h_t, t_mask, r_b)
            r = r + c_t + c_b
        return NewsEmbedding(r, r_t, r_b, c_t, c_b)


class ViewEncoder(Module):
    """Clicked-news sequence -> one user vector (position embedding, transformer, attention)."""

    def __init__(self, cfg: ModelConfig, cap: int, rng: np.random.Generator):
        d = cfg.d_model
        self.position = Parameter(rng.normal(0, cfg.embed_std, size=(cap, d)))
        self.encoder = Encoder(d, cfg.heads, rng, cfg.dropout, cfg.blocks)
        self.pool = AdditiveAttention(d, cfg.attn_hidden, rng)
        self.news_attention = cfg.news_attention
        self.cap = cap

    def __call__(self, news: Tensor, history: np.ndarray, ctx: Context = EVAL) -> tuple[Tensor, np.ndarray]:
        """``news`` [U, d] rows indexed by ``history`` [B, N] (-1 = padding).

        Returns the user vectors [B, d] and a flag per user whose view was empty;
        empty views map to exact zero vectors.
        """
        history = np.asarray(history)
        b = history.shape[0]
        d = news.shape[-1]
        lengths = (history >= 0).sum(axis=1)
        empty = lengths == 0
        if lengths.max(initial=0) > self.cap:
            raise DimensionError(f"history longer than the cap of {self.cap}")
        if empty.all():
            return Tensor(np.zeros((b, d))), empty
        idx, mask, has = _trim(history, lengths)
        x = T.embedding_lookup(news, np.where(idx >= 0, idx, 0)) + self.position[: idx.shape[1]]
        h = self.encoder(x, mask, ctx)
        u = self.pool(h, mask) if self.news_attention else masked_mean(h, mask)
        if empty.any():
            u = u * Tensor(has.astype(T.default_dtype())[:, None])
        return u, empty


def click_score(r_c: Tensor, u: UserEmbeddingPair, w_p: Tensor, w_n: Tensor):
    """(ŷ, ŷ_p, ŷ_n) for one candidate vector against one user pair."""
    if r_c.shape != u.u_p.shape or r_c.shape != u.u_n.shape:
        raise DimensionError(f"candidate {r_c.shape} vs user {u.u_p.shape}/{u.u_n.shape}")
    y_p = T.dot(r_c, u.u_p)
    y_n = T.dot(r_c, u.u_n)
    return T.reshape(y_p * w_p + y_n * w_n, ()), y_p, y_n


def softmax_nll(scores: Tensor) -> Tensor:
    """Per-row -log p of column 0 (the clicked news) under a softmax over the row."""
    return -T.log_softmax(scores, axis=-1)[:, 0]


class Recommender(Module):
    def __init__(
        self,
        cfg: ModelConfig,
        vocab_size: int,
        rng: np.random.Generator,
        title_len: int = 30,
        body_len: int = 200,
        pos_cap: int = 50,
        neg_cap: int = 20,
        init_weights: tuple[float, float] | None = None,
    ):
        self.cfg = cfg
        self.news_encoder = NewsEncoder(cfg, vocab_size, title_len, body_len, rng)
        self.positive_view = ViewEncoder(cfg, max(pos_cap, neg_cap) if cfg.share_view_params else pos_cap, rng)
        self.negative_view = None if cfg.share_view_params else ViewEncoder(cfg, neg_cap, rng)
        w = rng.uniform(-0.1, 0.1, size=2) if init_weights is None else np.asarray(init_weights, dtype=float)
        self.w_p = Parameter(w[:1].copy(), name="w_p")
        self.w_n = Parameter(w[1:].copy(), name="w_n")

    @property
    def _neg_view(self) -> ViewEncoder:
        return self.positive_view if self.negative_view is None else self.negative_view

    def encode_news(self, news_idx: np.ndarray, arrays, ctx: Context = EVAL) -> NewsEmbedding:
        return self.news_encoder(
            arrays.title[news_idx], arrays.title_len[news_idx], arrays.body[news_idx], arrays.body_len[news_idx], ctx
        )

    def encode_users(self, news: Tensor, hist_pos, hist_neg, ctx: Context = EVAL) -> UserEmbeddingPair:
        u_p, pos_empty = self.positive_view(news, hist_pos, ctx)
        if self.cfg.negative_feedback:
            u_n, neg_empty = self._neg_view(news, hist_neg, ctx)
        else:
            u_n, neg_empty = Tensor(np.zeros(u_p.shape)), np.ones(len(hist_pos), dtype=bool)
        return UserEmbeddingPair(u_p, u_n, pos_empty, neg_empty)

    def score(self, cand: Tensor, users: UserEmbeddingPair) -> tuple[Tensor, Tensor, Tensor | None]:
        """Scores for candidate vectors ``cand`` [B, C, d] -> (ŷ, ŷ_p, ŷ_n), each [B, C]."""
        b, c, d = cand.shape
        y_p = T.reshape(T.matmul(cand, T.reshape(users.u_p, (b, d, 1))), (b, c))
        y = y_p * self.w_p
        y_n = None
        if self.cfg.negative_feedback and not users.negative_empty.all():
            y_n = T.reshape(T.matmul(cand, T.reshape(users.u_n, (b, d, 1))), (b, c))
            y = y + y_n * self.w_n
        return y, y_p, y_n

    def batch_scores(self, arrays, candidates, hist_pos, hist_neg, ctx: Context = EVAL):
        """Encode every news a batch touches once, then score ``candidates`` [B, C]."""
        used = [candidates.reshape(-1), hist_pos[hist_pos >= 0]]
        if self.cfg.negative_feedback:
            used.append(hist_neg[hist_neg >= 0])
        uniq = np.unique(np.concatenate(used))
        local = lambda a: np.where(a >= 0, np.searchsorted(uniq, np.maximum(a, 0)), -1)  # noqa: E731
        news = self.encode_news(uniq, arrays, ctx).r
        users = self.encode_users(news, local(hist_pos), local(hist_neg), ctx)
        cand = T.embedding_lookup(news, local(candidates))
        return self.score(cand, users)

    def loss(self, arrays, batch, ctx: Context = EVAL) -> Tensor:
        """Mean (Q+1)-way softmax negative log-likelihood of the clicked news."""
        scores, _, _ = self.batch_scores(arrays, batch.candidates, batch.hist_pos, batch.hist_neg, ctx)
        return T.mean(softmax_nll(scores))
