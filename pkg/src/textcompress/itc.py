"""Implicit compression: fertility scoring, top-K source filtering and a
single-pass non-autoregressive decoder producing compressed feature rows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import EOS, pad_batch
from .errors import ContractError
from .nn import LayerNorm, Linear, Module
from .ratio import compressed_length
from .transformer import EncoderState, FeedForward, ModelConfig, MultiHeadAttention, OutputHead, attention_mask


class NATLayer(Module):
    """Unmasked self-attention over the selected copies (each query sees itself),
    then attention over the full encoder output."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn1 = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln1 = LayerNorm(cfg.d_model, cfg.eps)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn2 = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln2 = LayerNorm(cfg.d_model, cfg.eps)

    def __call__(self, s: Tensor, s_mask, memory: Tensor, mem_mask) -> Tensor:
        h = self.ln1(s + self.ffn1(self.self_attn(s, s, s_mask)[0]))
        return self.ln2(h + self.ffn2(self.cross_attn(h, memory, mem_mask)[0]))


def _identity_like(d_in: int, d_out: int) -> np.ndarray:
    w = np.zeros((d_in, d_out))
    n = min(d_in, d_out)
    w[np.arange(n), np.arange(n)] = 1.0
    return w


class Bridge(Module):
    def __init__(self, d_in: int, d_out: int):
        self.weight = Parameter(_identity_like(d_in, d_out))
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


def select_top_k(p_f: Sequence[float], gamma: float) -> np.ndarray:
    """Indices of the K = max(1, ceil(gamma |x|)) highest scores, in source order.

    Ties go to the smaller position.
    """
    p_f = np.asarray(p_f, dtype=np.float64)
    if p_f.size == 0:
        raise ContractError("select_top_k on an empty sequence")
    k = compressed_length(p_f.size, gamma)
    order = np.lexsort((np.arange(p_f.size), -p_f))
    return np.sort(order[:k])


@dataclass
class ITCOutput:
    hc: Tensor  # (B, K, d_downstream)
    hc_mask: np.ndarray  # (B, K)
    fert_logits: Tensor  # (B, J)
    p_f: np.ndarray  # (B, J)
    indices: list[np.ndarray]
    nat_hidden: Tensor  # (B, K, d_nat), before the output bridge
    x_mask: np.ndarray  # (B, J)


class CompressionLogProb(NamedTuple):
    fertility: Tensor
    conditional: Tensor

    @property
    def total(self) -> Tensor:
        return self.fertility + self.conditional


class ITCModule(Module):
    def __init__(self, cfg: ModelConfig, d_downstream: int, rng: np.random.Generator, zero_fertility: bool = False):
        self.cfg = cfg
        self.fertility = Linear(d_downstream, 1, rng)
        if zero_fertility:
            self.fertility.zero_()
        self.layers = [NATLayer(cfg, rng) for _ in range(cfg.layers)]
        self.predictor = OutputHead(cfg.d_model, cfg.vocab_size, rng)
        if cfg.d_model != d_downstream:
            self.bridge_in = Bridge(d_downstream, cfg.d_model)
            self.bridge_out = Bridge(cfg.d_model, d_downstream)
        else:
            self.bridge_in = self.bridge_out = None
        self.passes = 0

    def predict_fertility(self, h_x: Tensor) -> tuple[Tensor, np.ndarray]:
        """Logits and probabilities p_f = sigmoid(affine(H_x)) per source row."""
        if h_x.shape[-2] == 0:
            raise ContractError("fertility of an empty sequence")
        logits = self.fertility(h_x)
        logits = logits.reshape(logits.shape[:-1])
        return logits, ad.sigmoid(logits).data

    def nat_decode(self, inputs: Tensor, in_mask: np.ndarray, h_x: Tensor, x_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """One decoder pass over all K positions. Returns (downstream-width, NAT-width) rows."""
        if inputs.shape[-2] < 1:
            raise ContractError("NAT decoder needs K >= 1")
        self.passes += 1
        s, memory = inputs, h_x
        if self.bridge_in is not None:
            s, memory = self.bridge_in(s), self.bridge_in(memory)
        k = inputs.shape[-2]
        s_att = attention_mask(in_mask, k)
        m_att = attention_mask(x_mask, k)
        for layer in self.layers:
            s = layer(s, s_att, memory, m_att)
        out = self.bridge_out(s) if self.bridge_out is not None else s
        return out, s

    def __call__(self, state: EncoderState, gamma: float) -> ITCOutput:
        logits, p_f = self.predict_fertility(state.hidden)
        lengths = state.mask.sum(axis=1)
        indices = [select_top_k(p_f[b, : lengths[b]], gamma) for b in range(len(lengths))]
        kmax = max(len(ix) for ix in indices)
        rows = np.zeros((len(indices), kmax), dtype=np.int64)
        k_mask = np.zeros((len(indices), kmax), dtype=bool)
        for b, ix in enumerate(indices):
            rows[b, : len(ix)] = ix
            k_mask[b, : len(ix)] = True
        batch = np.arange(len(indices))[:, None]
        copies = state.inputs[batch, rows]
        hc, nat = self.nat_decode(copies, k_mask, state.hidden, state.mask)
        return ITCOutput(hc, k_mask, logits, p_f, indices, nat, state.mask)

    def prediction_logits(self, out: ITCOutput) -> Tensor:
        return self.predictor(out.nat_hidden)


def membership_labels(x_ids: np.ndarray, targets: Sequence[Sequence[int]]) -> np.ndarray:
    """1 where the source token occurs anywhere in that row's target compression."""
    labels = np.zeros(x_ids.shape)
    for b, tgt in enumerate(targets):
        labels[b] = np.isin(x_ids[b], np.asarray(list(tgt), dtype=np.int64))
    return labels


def align_target(target: Sequence[int], k: int) -> list[int]:
    """Truncate or EOS-pad a target compression to exactly k tokens."""
    target = list(target)[:k]
    return target + [EOS] * (k - len(target))


def compression_logprob(itc: ITCModule, out: ITCOutput, targets: Sequence[Sequence[int]]) -> CompressionLogProb:
    """Single-term approximation of log p(y^c | x): the log-probability of the
    selected fertility pattern plus the conditional token log-likelihood."""
    for ix, tgt in zip(out.indices, targets):
        if len(tgt) != len(ix):
            raise ContractError(f"target length {len(tgt)} != selected K {len(ix)}")
    b, j = out.p_f.shape
    selected = np.zeros((b, j))
    for row, ix in enumerate(out.indices):
        selected[row, ix] = 1.0
    n_src = float(out.x_mask.sum())
    fert = ad.bce_with_logits(out.fert_logits, selected, out.x_mask) * (-n_src)
    logp = ad.log_softmax(itc.prediction_logits(out), axis=-1)
    tgt = np.zeros(out.hc_mask.shape, dtype=np.int64)
    for row, t in enumerate(targets):
        tgt[row, : len(t)] = t
    picked = logp[np.arange(b)[:, None], np.arange(tgt.shape[1])[None, :], tgt]
    cond = (picked * out.hc_mask.astype(np.float64)).sum()
    return CompressionLogProb(fert, cond)


def itc_pretrain_loss(encoder, itc: ITCModule, sources: Sequence[Sequence[int]],
                      targets: Sequence[Sequence[int]], gamma: float) -> Tensor:
    """Fertility BCE against membership labels plus the predictor's token NLL."""
    if len(sources) == 0:
        raise ContractError("empty pretraining batch")
    ids, mask = pad_batch(sources)
    out = itc(encoder(ids, mask), gamma)
    bce = ad.bce_with_logits(out.fert_logits, membership_labels(ids, targets), mask)
    aligned, _ = pad_batch([align_target(t, len(ix)) for t, ix in zip(targets, out.indices)])
    nll = ad.cross_entropy(itc.prediction_logits(out), aligned, out.hc_mask)
    return bce + nll


def itc_pretrain_step(encoder, itc: ITCModule, optimizer, sources, targets, gamma: float) -> float:
    optimizer.zero_grad()
    loss = itc_pretrain_loss(encoder, itc, sources, targets, gamma)
    ad.backward(loss)
    optimizer.step()
    return loss.item()
