"""Parameter containers and the attention layers shared by news and user encoders."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Parameter, Tensor


@dataclass
class Context:
    """Forward-pass mode. ``rng`` feeds dropout masks and is only read in training."""

    training: bool = False
    rng: np.random.Generator | None = None


EVAL = Context()


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


def _float_mask(mask: np.ndarray) -> Tensor:
    return Tensor(mask.astype(T.default_dtype()))


def masked_mean(keys: Tensor, mask: np.ndarray) -> Tensor:
    """Average of the unmasked rows of ``keys`` [B, L, d]."""
    m = mask.astype(T.default_dtype())
    counts = m.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise T.DegenerateInputError("mean pooling over a fully masked sequence")
    b, l, d = keys.shape
    w = Tensor((m / counts).reshape(b, 1, l))
    return T.reshape(T.matmul(w, keys), (b, d))


class TransformerBlock(Module):
    """Post-norm encoder block: masked multi-head self-attention then a ReLU FFN.

    Rows whose own position is masked come out as zeros.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.2, ffn_mult: int = 4):
        if d % heads:
            raise DimensionError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.dropout = dropout
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff1 = Linear(d, ffn_mult * d, rng)
        self.ff2 = Linear(ffn_mult * d, d, rng)
        self.norm2 = LayerNorm(d)
        self.last_attention: np.ndarray | None = None

    def _heads(self, x: Tensor, b: int, l: int) -> Tensor:
        return T.permute(T.reshape(x, (b, l, self.heads, -1)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray, ctx: Context = EVAL) -> Tensor:
        b, l, d = x.shape
        dk = d // self.heads
        q = self._heads(self.q(x), b, l)
        k = self._heads(self.k(x), b, l)
        v = self._heads(self.v(x), b, l)
        scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(dk))
        attn = T.softmax(scores, mask[:, None, None, :])
        self.last_attention = attn.data
        ctx_vec = T.reshape(T.permute(T.matmul(attn, v), (0, 2, 1, 3)), (b, l, d))
        h = self.norm1(x + T.dropout(self.o(ctx_vec), self.dropout, ctx.rng, ctx.training))
        f = self.ff2(T.relu(self.ff1(h)))
        out = self.norm2(h + T.dropout(f, self.dropout, ctx.rng, ctx.training))
        return out * _float_mask(mask[:, :, None])


class Encoder(Module):
    """A stack of ``blocks`` transformer blocks."""

    def __init__(self, d: int, heads: int, rng, dropout: float = 0.2, blocks: int = 1):
        for i in range(blocks):
            setattr(self, f"block{i}", TransformerBlock(d, heads, rng, dropout))
        self.blocks = blocks

    def __call__(self, x: Tensor, mask: np.ndarray, ctx: Context = EVAL) -> Tensor:
        for i in range(self.blocks):
            x = getattr(self, f"block{i}")(x, mask, ctx)
        return x


class AdditiveAttention(Module):
    """score_i = v·tanh(W k_i + b + U q); output is the softmax-weighted sum of keys.

    Without ``d_query`` the query is a learned constant and ``U q`` folds into ``b``.
    """

    def __init__(self, d_key: int, hidden: int, rng: np.random.Generator, d_query: int | None = None):
        self.proj = Linear(d_key, hidden, rng)
        self.query_proj = Linear(d_query, hidden, rng, bias=False) if d_query else None
        self.v = Parameter(xavier(rng, hidden, 1))
        self.last_weights: np.ndarray | None = None

    def __call__(self, keys: Tensor, mask: np.ndarray, query: Tensor | None = None) -> Tensor:
        b, l, d = keys.shape
        h = self.proj(keys)
        if query is not None:
            if self.query_proj is None:
                raise ValueError("this attention layer takes no query")
            h = h + T.reshape(self.query_proj(query), (b, 1, -1))
        scores = T.reshape(T.matmul(T.tanh(h), self.v), (b, l))
        weights = T.softmax(scores, mask)
        self.last_weights = weights.data
        return T.reshape(T.matmul(T.reshape(weights, (b, 1, l)), keys), (b, d))
