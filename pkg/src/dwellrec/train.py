"""Mini-batch Adam training with validation-AUC model selection.

Random draws come from one generator seeded with ``train.seed``, consumed in
this order: parameter initialisation (module construction order), then for
each epoch the sample shuffle followed by dropout masks in forward order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Dataset, EvalImpressions, resample_negatives
from .metrics import RankedImpression, evaluate_impressions
from .model import Recommender
from .nn import EVAL, Context
from .pretrain import cooccurrence_embeddings
from .optim import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainResult:
    model: Recommender
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("-inf")


def build_model(cfg: RunConfig, ds: Dataset, rng: np.random.Generator, init_weights=None) -> Recommender:
    d = cfg.data
    model = Recommender(
        cfg.model,
        len(ds.vocab),
        rng,
        title_len=d.title_len,
        body_len=d.body_len,
        pos_cap=d.pos_cap,
        neg_cap=d.neg_cap,
        init_weights=init_weights,
    )
    if cfg.model.word_init == "cooccurrence":
        # the random draw above still happens so both modes consume the same stream
        words = model.news_encoder.words
        words.data[...] = cooccurrence_embeddings(ds, cfg.model.word_dim, cfg.model.embed_std)
    return model


def news_table(model: Recommender, ds: Dataset, chunk: int = 512) -> T.Tensor:
    """Evaluation-mode embeddings of every news in the corpus, as a constant."""
    parts = [
        model.encode_news(np.arange(s, min(s + chunk, ds.num_news)), ds, EVAL).r.data
        for s in range(0, ds.num_news, chunk)
    ]
    return T.Tensor(np.concatenate(parts, axis=0))


def score_impressions(model: Recommender, ds: Dataset, split: EvalImpressions, batch: int = 256) -> list[RankedImpression]:
    table = news_table(model, ds)
    out = []
    for s in range(0, len(split), batch):
        sl = slice(s, min(s + batch, len(split)))
        cands = split.candidates[sl]
        width = max(len(c) for c in cands)
        padded = np.zeros((len(cands), width), dtype=np.int64)
        for i, c in enumerate(cands):
            padded[i, : len(c)] = c
        users = model.encode_users(table, split.hist_pos[sl], split.hist_neg[sl], EVAL)
        scores, _, _ = model.score(T.embedding_lookup(table, padded), users)
        for i, c in enumerate(cands):
            out.append(RankedImpression(scores.data[i, : len(c)].astype(np.float64), split.labels[sl][i]))
    return out


def evaluate(model: Recommender, ds: Dataset, split: EvalImpressions, batch: int = 256) -> dict:
    return evaluate_impressions(score_impressions(model, ds, split, batch))


def train(
    ds: Dataset,
    cfg: RunConfig,
    on_epoch: Callable[[dict], None] | None = None,
    init_weights=None,
) -> TrainResult:
    tc = cfg.train
    if len(ds.train) == 0:
        raise ValueError("training split has no samples")
    with T.precision(tc.precision):
        rng = np.random.default_rng(tc.seed)
        model = build_model(cfg, ds, rng, init_weights)
        params = model.parameters()
        model.zero_grad()
        state = AdamState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
        result = TrainResult(model)
        best_state, stale = None, 0
        for epoch in range(1, tc.epochs + 1):
            started = time.perf_counter()
            samples = ds.train
            if tc.redraw_negatives and epoch > 1:
                samples = resample_negatives(ds, cfg.data.sample_seed, epoch - 1)
            order = rng.permutation(len(samples))
            losses = []
            for b, start in enumerate(range(0, len(order), tc.batch_size)):
                batch = samples.subset(order[start : start + tc.batch_size])
                ctx = Context(training=True, rng=rng)
                # per-op finiteness checks cost ~15%; a non-finite value anywhere reaches the loss
                with T.no_finite_check(), T.Tape() as tape:
                    loss = model.loss(ds, batch, ctx)
                    if not np.isfinite(loss.data):
                        raise TrainingDiverged(epoch, b, f"loss {loss.item()}")
                    tape.backward(loss)
                clip_grad_norm(params, tc.clip_norm)
                adam_step(params, state)
                losses.append(loss.item())
            val = evaluate(model, ds, ds.valid, tc.eval_batch)
            record = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_auc": val["auc"],
                "val_mrr": val["mrr"],
                "val_ndcg5": val["ndcg5"],
                "val_ndcg10": val["ndcg10"],
                "w_p": float(model.w_p.data[0]),
                "w_n": float(model.w_n.data[0]),
                "wall_seconds": round(time.perf_counter() - started, 3),
            }
            result.log.append(record)
            log.info("epoch %d loss %.4f val_auc %.4f", epoch, record["train_loss"], val["auc"])
            if on_epoch:
                on_epoch(record)
            if val["auc"] > result.best_val_auc:
                result.best_val_auc = val["auc"]
                result.best_epoch = epoch
                best_state = model.state_dict()
                stale = 0
            else:
                stale += 1
                if stale >= tc.patience:
                    break
        if best_state is not None:
            model.load_state_dict(best_state)
    return result
