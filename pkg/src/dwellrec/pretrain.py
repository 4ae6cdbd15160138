"""Unsupervised word vectors from document co-occurrence (latent semantic analysis).

Stands in for pretrained embeddings: words that share documents get nearby
vectors before any click is seen. Cost is O(V^2 * docs), fine for
vocabularies of a few thousand words.
"""

from __future__ import annotations

import numpy as np

from .data import PAD_ID, Dataset


def term_document_matrix(ds: Dataset) -> np.ndarray:
    """[V, D] log-count x idf over the news displayed in the training split."""
    index = {nid: i for i, nid in enumerate(ds.news_ids)}
    docs = sorted({index[n] for imp in ds.train_impressions for n in imp.displayed})
    counts = np.zeros((len(ds.vocab), len(docs)))
    for j, i in enumerate(docs):
        ids = np.concatenate([ds.title[i, : ds.title_len[i]], ds.body[i, : ds.body_len[i]]])
        np.add.at(counts[:, j], ids[ids != PAD_ID], 1.0)
    df = (counts > 0).sum(axis=1, keepdims=True)
    return np.log1p(counts) * np.log((len(docs) + 1) / (df + 1))


def cooccurrence_embeddings(ds: Dataset, dim: int, std: float) -> np.ndarray:
    """Top-``dim`` left singular vectors scaled by singular values, rescaled to ``std``.

    Signs are fixed so each column's largest-magnitude entry is positive, which
    makes the result independent of the eigensolver's sign choice. The padding
    row is zero. Cached on the dataset per (dim, std).
    """
    key = ("cooccurrence", dim, std)
    if key in ds.cache:
        return ds.cache[key].copy()
    x = term_document_matrix(ds)
    vals, vecs = np.linalg.eigh(x @ x.T)
    top = np.argsort(vals)[::-1][:dim]
    emb = vecs[:, top] * np.sqrt(np.maximum(vals[top], 0.0))
    if emb.shape[1] < dim:
        emb = np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))
    flip = np.sign(emb[np.abs(emb).argmax(axis=0), np.arange(dim)])
    emb *= np.where(flip == 0, 1.0, flip)
    emb[PAD_ID] = 0.0
    spread = emb[PAD_ID + 1 :].std()
    if spread > 0:
        emb *= std / spread
    ds.cache[key] = emb
    return emb.copy()
