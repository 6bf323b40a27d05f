"""Explicit compression with a seq2seq model.

Pipeline mode decodes hard token sequences with a ratio-capped beam search
scored by length normalisation and a coverage penalty. Joint mode decodes
greedily to the batch cap and hands the decoder hidden states downstream.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BOS, CLS, EOS, PAD, SEP, UNK
from .errors import ConfigError, ContractError
from .ratio import compressed_length

COVERAGE_FLOOR = 1e-10
DEFAULT_BANNED = (PAD, BOS, UNK, CLS, SEP)


@dataclass
class BeamConfig:
    beam_size: int = 5
    alpha: float = 0.5
    beta: float = 0.2
    gamma: float = 0.6

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logprob: float
    attn_mass: np.ndarray
    finished: bool = False


@dataclass
class BeamResult:
    best: BeamHypothesis
    completed: list[BeamHypothesis] = field(default_factory=list)
    passes: int = 0

    @property
    def tokens(self) -> list[int]:
        return self.best.tokens


def len_norm(length: int, alpha: float) -> float:
    if length < 1:
        raise ContractError("length normalisation needs length >= 1")
    return (5.0 + length) ** alpha / 6.0**alpha


def coverage_penalty(attn_mass, beta: float) -> float:
    """beta * sum_i log(min(mass_i, 1)), with mass floored to keep the log finite."""
    if beta == 0:
        return 0.0
    mass = np.minimum(np.asarray(attn_mass, dtype=np.float64), 1.0)
    return float(beta * np.log(np.maximum(mass, COVERAGE_FLOOR)).sum())


def hypothesis_score(h: BeamHypothesis, cfg: BeamConfig) -> float:
    if not h.tokens:
        raise ContractError("cannot score an empty hypothesis")
    return h.logprob / len_norm(len(h.tokens), cfg.alpha) + coverage_penalty(h.attn_mass, cfg.beta)


def _mask_step(logp: np.ndarray, step: int, banned, eos: int) -> np.ndarray:
    logp = logp.copy()
    if banned:
        logp[:, list(banned)] = -np.inf
    if step == 0:
        logp[:, eos] = -np.inf  # at least one output token
    return logp


def beam_search(x: Sequence[int], model, cfg: BeamConfig, banned=DEFAULT_BANNED,
                bos: int = BOS, eos: int = EOS) -> BeamResult:
    """Ratio-capped beam search; never emits more than compressed_length(|x|, gamma) tokens."""
    x = list(x)
    if not x:
        raise ContractError("cannot compress an empty sequence")
    cap = compressed_length(len(x), cfg.gamma)
    with ad.no_grad():
        ctx = model.source_context([x])
    alive = [BeamHypothesis([], 0.0, np.zeros(len(x)))]
    completed: list[BeamHypothesis] = []
    passes = 0
    for step in range(cap):
        prefixes = np.array([[bos] + h.tokens for h in alive], dtype=np.int64)
        logp, attn = model.next_token_logprobs(ctx, prefixes)
        passes += 1
        logp = _mask_step(logp, step, banned, eos)
        candidates = []
        for row, h in enumerate(alive):
            mass = h.attn_mass + attn[row]
            ranked = np.argsort(-logp[row], kind="stable")[: cfg.beam_size]
            for tok in ranked:
                tok = int(tok)
                if not np.isfinite(logp[row, tok]):
                    continue
                ended = tok == eos
                tokens = h.tokens if ended else h.tokens + [tok]
                cand = BeamHypothesis(tokens, h.logprob + float(logp[row, tok]), mass, ended)
                if len(tokens) >= cap:
                    cand.finished = True
                candidates.append(cand)
        scores = np.array([hypothesis_score(c, cfg) for c in candidates])
        alive = []
        for i in np.argsort(-scores, kind="stable")[: cfg.beam_size]:
            (completed if candidates[i].finished else alive).append(candidates[i])
        if not alive:
            break
    if not completed:
        completed = alive
    scores = [hypothesis_score(h, cfg) for h in completed]
    return BeamResult(completed[int(np.argmax(scores))], completed, passes)


def beam_search_compress(x: Sequence[int], model, cfg: BeamConfig, **kwargs) -> list[int]:
    return beam_search(x, model, cfg, **kwargs).tokens


def greedy_compress(x: Sequence[int], model, gamma: float, banned=DEFAULT_BANNED,
                    bos: int = BOS, eos: int = EOS) -> list[int]:
    """Argmax decoding under the same cap and minimum-length rules as the beam."""
    x = list(x)
    cap = compressed_length(len(x), gamma)
    with ad.no_grad():
        ctx = model.source_context([x])
    out: list[int] = []
    for step in range(cap):
        logp, _ = model.next_token_logprobs(ctx, np.array([[bos] + out], dtype=np.int64))
        tok = int(np.argmax(_mask_step(logp, step, banned, eos)[0]))
        if tok == eos:
            break
        out.append(tok)
    return out


@dataclass
class JointCompression:
    hidden: Tensor  # (B, T, d) decoder outputs, T = batch-max cap
    mask: np.ndarray  # (B, T) True inside each row's own cap
    tokens: np.ndarray  # (B, T) greedy choices
    passes: int


def joint_greedy_compress(model, ids, mask, gamma: float, banned=DEFAULT_BANNED) -> JointCompression:
    """Greedy decode to the batch-max cap; return hidden states, not tokens.

    Token choices are argmax decisions with detached embeddings, so no gradient
    crosses them. Only the final pass records a graph: by causality its output
    rows are the hidden states of every generated position.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    caps = np.array([compressed_length(int(n), gamma) for n in mask.sum(axis=1)])
    steps = int(caps.max())
    with ad.no_grad():
        ctx = model.source_context(ids, mask)
    seqs = np.full((ids.shape[0], 1), BOS, dtype=np.int64)
    passes = 0
    hidden = None
    for t in range(steps):
        last = t == steps - 1
        with contextlib.nullcontext() if last else ad.no_grad():
            o, _, _ = model.decode(ctx, seqs, detach_inputs=True)
        passes += 1
        with ad.no_grad():
            logits = model.logits(ad.Tensor(o.data[:, -1])).data.copy()
        if banned:
            logits[:, list(banned)] = -np.inf
        nxt = logits.argmax(axis=1)
        if last:
            hidden = o
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    out_mask = np.arange(steps)[None, :] < caps[:, None]
    return JointCompression(hidden, out_mask, seqs[:, 1:], passes)


def baseline_compress(x: Sequence, mode: str, gamma: float = 0.6, rng: np.random.Generator | None = None) -> list:
    """AllText (identity), F8W (first eight tokens) or RandSample (ordered random subset)."""
    x = list(x)
    if not x:
        raise ContractError("cannot compress an empty sequence")
    if mode == "alltext":
        return x
    if mode == "f8w":
        return x[:8]
    if mode == "randsample":
        if rng is None:
            raise ContractError("randsample needs an rng")
        k = compressed_length(len(x), gamma)
        return [x[int(i)] for i in np.sort(rng.choice(len(x), size=k, replace=False))]
    raise ConfigError(f"unknown baseline {mode!r}; expected alltext|f8w|randsample")
