"""Self-attention encoder and autoregressive decoder.

Shapes follow the ``(batch, length, width)`` convention throughout. Boolean
masks are ``True`` where a position may be attended to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError, DimensionError, LengthError
from .nn import Embedding, LayerNorm, Linear, Module, xavier


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    d_model: int = 128
    d_ff: int = 512
    heads: int = 4
    max_len: int = 256
    # "d_k" scales attention logits by sqrt(per-head width); "d_model" by sqrt(d_model)
    attn_scale: str = "d_k"
    prenorm: bool = False
    dropout: float = 0.0
    eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.attn_scale not in ("d_k", "d_model"):
            raise ConfigError(f"attn_scale must be d_k or d_model, got {self.attn_scale!r}")
        if min(self.layers, self.d_model, self.d_ff, self.heads, self.vocab_size, self.max_len) < 1:
            raise ConfigError("model dimensions must be positive")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def sinusoid_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


def positional_encode(embeddings: Tensor, table: np.ndarray) -> Tensor:
    """Add fixed sinusoidal rows 0..J-1 along the second-to-last axis."""
    j = embeddings.shape[-2]
    if j > table.shape[0]:
        raise LengthError(f"sequence length {j} exceeds max_len {table.shape[0]}")
    return embeddings + table[:j]


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def attention_mask(key_valid: np.ndarray, q_len: int, causal: bool = False) -> np.ndarray:
    """(B, 1, q_len, k_len) mask from a (B, k_len) key validity array."""
    m = key_valid[:, None, None, :]
    if causal:
        m = m & causal_mask(key_valid.shape[1])[None, None, -q_len:, :]
    return np.broadcast_to(m, (key_valid.shape[0], 1, q_len, key_valid.shape[1]))


def self_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
                   scale: float | None = None) -> tuple[Tensor, Tensor]:
    """Softmax(q k^T / sqrt(scale)) v. Returns the output and attention weights."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scale = q.shape[-1] if scale is None else scale
    scores = (q @ ad.transpose(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(scale))
    if mask is not None:
        mask = np.broadcast_to(mask, scores.shape)
        if not mask.any(axis=-1).all():
            raise ContractError("attention row with every key masked")
    probs = ad.softmax(scores, axis=-1, mask=mask)
    return probs @ v, probs


def _swap_last(ndim: int) -> tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


class MultiHeadAttention(Module):
    """Per-head projections stored side by side: column block h of ``wq`` is W_h^Q."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, attn_scale: str = "d_k"):
        if d_model % heads:
            raise DimensionError("d_model must be divisible by heads")
        self.heads = heads
        self.d_k = d_model // heads
        self.scale = self.d_k if attn_scale == "d_k" else d_model
        self.wq = Parameter(xavier(rng, d_model, d_model))
        self.wk = Parameter(xavier(rng, d_model, d_model))
        self.wv = Parameter(xavier(rng, d_model, d_model))
        self.wo = Parameter(xavier(rng, d_model, d_model))

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return ad.transpose(x.reshape(b, n, self.heads, self.d_k), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        if query.shape[-1] != self.wq.shape[0] or memory.shape[-1] != self.wk.shape[0]:
            raise DimensionError(f"input width {query.shape[-1]}/{memory.shape[-1]} != {self.wq.shape[0]}")
        q = self._split(query @ self.wq)
        k = self._split(memory @ self.wk)
        v = self._split(memory @ self.wv)
        heads, probs = self_attention(q, k, v, mask, self.scale)
        b, _, n, _ = heads.shape
        merged = ad.transpose(heads, (0, 2, 1, 3)).reshape(b, n, self.heads * self.d_k)
        return merged @ self.wo, probs


def multi_head(q: Tensor, k: Tensor, v: Tensor, mask, weights: dict, heads: int,
               scale: str = "d_k") -> Tensor:
    """Functional multi-head attention on unbatched matrices.

    ``weights`` holds lists ``wq``, ``wk``, ``wv`` of per-head projection
    matrices and the output matrix ``wo``.
    """
    if not (len(weights["wq"]) == len(weights["wk"]) == len(weights["wv"]) == heads):
        raise DimensionError("one projection per head required")
    outs = []
    for wq, wk, wv in zip(weights["wq"], weights["wk"], weights["wv"]):
        d_k = wq.shape[-1]
        if wk.shape[-1] != d_k:
            raise DimensionError("query/key head widths differ")
        s = d_k if scale == "d_k" else q.shape[-1]
        out, _ = self_attention(q @ wq, k @ wk, v @ wv, mask, s)
        outs.append(out)
    cat = ad.concat(outs, axis=-1)
    if cat.shape[-1] != weights["wo"].shape[0]:
        raise DimensionError("concatenated heads do not match output projection")
    return cat @ weights["wo"]


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ad.gelu(self.inner(x)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln1 = LayerNorm(cfg.d_model, cfg.eps)
        self.ln2 = LayerNorm(cfg.d_model, cfg.eps)
        self.prenorm = cfg.prenorm

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if self.prenorm:
            h = self.ln1(x)
            x = x + self.attn(h, h, mask)[0]
            return x + self.ffn(self.ln2(x))
        x = self.ln1(x + self.attn(x, x, mask)[0])
        return self.ln2(x + self.ffn(x))


@dataclass
class EncoderState:
    hidden: Tensor  # (B, J, d)
    ids: np.ndarray  # (B, J)
    mask: np.ndarray  # (B, J) True on real tokens
    inputs: Tensor  # embedded + positional input rows


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, embed: Embedding, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = embed
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.final_ln = LayerNorm(cfg.d_model, cfg.eps) if cfg.prenorm else None
        self._table = sinusoid_table(cfg.max_len, cfg.d_model)

    def embed_inputs(self, ids: np.ndarray) -> Tensor:
        x = self.embed(ids) * math.sqrt(self.cfg.d_model)
        return positional_encode(x, self._table)

    def __call__(self, ids, mask=None) -> EncoderState:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] == 0:
            raise ContractError("cannot encode an empty sequence")
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ContractError("cannot encode an empty sequence")
        inputs = self.embed_inputs(ids)
        x = inputs
        att = attention_mask(mask, ids.shape[1])
        for layer in self.layers:
            x = layer(x, att)
        if self.final_ln is not None:
            x = self.final_ln(x)
        return EncoderState(x, ids, mask, inputs)


class DecoderLayer(Module):
    """Masked self-attention gives H_tgt; cross-attention plus FFN gives the
    context c; the layer output is norm(H_tgt + c).

    ``fusion`` is an optional callable ``(h_tgt, aux, aux_mask, c) -> c'``
    that merges a second memory into the context.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln1 = LayerNorm(cfg.d_model, cfg.eps)
        self.ln2 = LayerNorm(cfg.d_model, cfg.eps)
        self.prenorm = cfg.prenorm
        self.fusion = None

    def __call__(self, y, self_mask, memory, mem_mask, aux=None, aux_mask=None):
        if self.prenorm:
            h = y + self.self_attn(self.ln1(y), self.ln1(y), self_mask)[0]
            q = self.ln2(h)
        else:
            h = self.ln1(y + self.self_attn(y, y, self_mask)[0])
            q = h
        attn_out, probs = self.cross_attn(q, memory, mem_mask)
        c = self.ffn(attn_out)
        if self.fusion is not None and aux is not None:
            c = self.fusion(q, aux, aux_mask, c)
        out = h + c if self.prenorm else self.ln2(h + c)
        return out, c, probs


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, embed: Embedding, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = embed
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.final_ln = LayerNorm(cfg.d_model, cfg.eps) if cfg.prenorm else None
        self._table = sinusoid_table(cfg.max_len, cfg.d_model)
        self.passes = 0

    def __call__(self, ids, mask, memory: Tensor, mem_mask: np.ndarray,
                 aux: Tensor | None = None, aux_mask: np.ndarray | None = None, detach_inputs: bool = False):
        """Run every decoder layer once over the whole prefix.

        Returns the top-layer outputs o, top-layer contexts c, and the
        top-layer cross-attention weights averaged over heads.
        """
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] > self.cfg.max_len:
            raise LengthError(f"prefix length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        self.passes += 1
        x = self.embed(ids)
        if detach_inputs:
            x = x.detach()
        x = positional_encode(x * math.sqrt(self.cfg.d_model), self._table)
        n = ids.shape[1]
        self_mask = attention_mask(np.asarray(mask, dtype=bool), n, causal=True)
        cross_mask = attention_mask(mem_mask, n)
        aux_att = None if aux is None else attention_mask(aux_mask, n)
        c = probs = None
        for layer in self.layers:
            x, c, probs = layer(x, self_mask, memory, cross_mask, aux, aux_att)
        if self.final_ln is not None:
            x = self.final_ln(x)
        return x, c, probs.data.mean(axis=1)


class OutputHead(Module):
    """Next-token logits L_o GeLU(L_w o)."""

    def __init__(self, d_model: int, vocab_size: int, rng: np.random.Generator):
        self.proj = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, vocab_size, rng)

    def __call__(self, o: Tensor) -> Tensor:
        return self.out(ad.gelu(self.proj(o)))
