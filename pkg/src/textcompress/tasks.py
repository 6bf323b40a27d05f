"""Downstream heads: translation on the encoder-decoder, span extraction and
multiple choice on an encoder-classifier, with their input templates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import CLS, EOS, SEP, pad_batch
from .errors import ContractError, LengthError
from .fusion import BEFLayer, FusionMode, check_task_compat
from .itc import ITCModule
from .nn import Embedding, Linear, Module
from .transformer import Encoder, ModelConfig

MAX_SPAN = 30


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def _fit_passage(p: Sequence[int], fixed: int, max_len: int | None) -> list[int]:
    p = list(p)
    if max_len is None or len(p) + fixed <= max_len:
        return p
    room = max_len - fixed
    if room < 1:
        raise LengthError("question and options alone exceed max_len")
    return p[:room]


def build_span_input(passage: Sequence[int], question: Sequence[int], max_len: int | None = None) -> list[int]:
    """[CLS] P [SEP] Q [SEP]; an overlong input loses passage tokens from the right."""
    if not passage or not question:
        raise ContractError("passage and question must be non-empty")
    p = _fit_passage(passage, len(question) + 3, max_len)
    return [CLS, *p, SEP, *question, SEP]


def build_choice_input(passage: Sequence[int], question: Sequence[int], option: Sequence[int],
                       max_len: int | None = None) -> list[int]:
    """[CLS] P Q [SEP] O [SEP]."""
    if not option:
        raise ContractError("option must be non-empty")
    p = _fit_passage(passage, len(question) + len(option) + 3, max_len)
    return [CLS, *p, *question, SEP, *option, SEP]


def parse_span_input(ids: Sequence[int]) -> tuple[list[int], list[int]]:
    ids = list(ids)
    first = ids.index(SEP)
    return ids[1:first], ids[first + 1 : -1]


def parse_choice_input(ids: Sequence[int], passage_len: int) -> tuple[list[int], list[int], list[int]]:
    ids = list(ids)
    first = ids.index(SEP)
    return ids[1 : 1 + passage_len], ids[1 + passage_len : first], ids[first + 1 : -1]


# ---------------------------------------------------------------------------
# encoder-classifier
# ---------------------------------------------------------------------------


class EncoderClassifier(Module):
    def __init__(self, cfg: ModelConfig, fusion="none", seed: int = 0, itc_cfg: ModelConfig | None = None,
                 zero_verifier: bool = False):
        self.cfg = cfg
        self.fusion_mode = FusionMode.parse(fusion)
        check_task_compat(self.fusion_mode, encoder_decoder=False)
        base = np.random.default_rng([seed, 0])
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, base)
        self.encoder = Encoder(cfg, self.embed, base)
        self.bef = BEFLayer(cfg, np.random.default_rng([seed, 1])) if self.fusion_mode.encoder_side else None
        self.itc = ITCModule(itc_cfg, cfg.d_model, np.random.default_rng([seed, 2])) if itc_cfg else None
        heads = np.random.default_rng([seed, 4])
        self.start = Linear(cfg.d_model, 1, heads)
        self.end = Linear(cfg.d_model, 1, heads)
        self.verifier = Linear(cfg.d_model, 1, heads)
        if zero_verifier:
            self.verifier.zero_()
        self.choice_hidden = Linear(cfg.d_model, cfg.d_model, heads)
        self.choice_out = Linear(cfg.d_model, 1, heads)

    def hidden(self, ids, mask=None, hc: Tensor | None = None, hc_mask=None, gamma: float | None = None) -> Tensor:
        state = self.encoder(ids, mask)
        if self.fusion_mode is FusionMode.NONE:
            return state.hidden
        if hc is None:
            if self.itc is None:
                raise ContractError("BEF needs compressed features")
            out = self.itc(state, gamma)
            hc, hc_mask = out.hc, out.hc_mask
        return self.bef(state.hidden, hc, hc_mask)

    def span_logits(self, h: Tensor) -> tuple[Tensor, Tensor]:
        s = self.start(h)
        e = self.end(h)
        return s.reshape(s.shape[:-1]), e.reshape(e.shape[:-1])

    def verifier_logit(self, h: Tensor) -> Tensor:
        v = self.verifier(h[:, 0])
        return v.reshape(v.shape[:-1])

    def choice_logit(self, h: Tensor) -> Tensor:
        s = self.choice_out(ad.gelu(self.choice_hidden(h[:, 0])))
        return s.reshape(s.shape[:-1])


@dataclass
class SpanPrediction:
    start_probs: np.ndarray
    end_probs: np.ndarray
    start: int
    end: int


def best_span(start_logp: np.ndarray, end_logp: np.ndarray, max_span: int = MAX_SPAN) -> tuple[int, int]:
    """argmax over s <= e < s + max_span of start_logp[s] + end_logp[e]."""
    n = len(start_logp)
    total = start_logp[:, None] + end_logp[None, :]
    s, e = np.indices((n, n))
    total = np.where((e >= s) & (e - s < max_span), total, -np.inf)
    flat = int(np.argmax(total))
    return flat // n, flat % n


def span_predict(model: EncoderClassifier, h: Tensor, valid: np.ndarray, max_span: int = MAX_SPAN) -> list[SpanPrediction]:
    """Start/end pointer distributions and the best joint span per row.

    Positions where ``valid`` is False get probability zero. (0, 0) is the
    unanswerable prediction.
    """
    with ad.no_grad():
        s_logit, e_logit = model.span_logits(h)
        s_p = ad.softmax(s_logit, axis=-1, mask=valid).data
        e_p = ad.softmax(e_logit, axis=-1, mask=valid).data
    out = []
    with np.errstate(divide="ignore"):
        for row in range(s_p.shape[0]):
            s, e = best_span(np.log(s_p[row]), np.log(e_p[row]), max_span)
            out.append(SpanPrediction(s_p[row], e_p[row], s, e))
    return out


def span_loss(model: EncoderClassifier, h: Tensor, valid: np.ndarray, starts, ends) -> Tensor:
    s_logit, e_logit = model.span_logits(h)
    s_logit = ad.masked_fill(s_logit, ~valid, -1e4)
    e_logit = ad.masked_fill(e_logit, ~valid, -1e4)
    return (ad.cross_entropy(s_logit, np.asarray(starts)) + ad.cross_entropy(e_logit, np.asarray(ends))) * 0.5


def answerability_verify(model: EncoderClassifier, h: Tensor) -> np.ndarray:
    """Probability that each question is answerable, read off the [CLS] row."""
    with ad.no_grad():
        return ad.sigmoid(model.verifier_logit(h)).data


def choice_scores(model: EncoderClassifier, passages, questions, options, max_len=None, **kw) -> Tensor:
    """Unnormalised (B, n_options) scores. Every item must have the same option count."""
    n_opt = {len(o) for o in options}
    if len(n_opt) != 1:
        raise ContractError("items must share an option count")
    n_opt = n_opt.pop()
    if n_opt < 2:
        raise ContractError("multiple choice needs at least two options")
    rows = [build_choice_input(p, q, o, max_len) for p, q, opts in zip(passages, questions, options) for o in opts]
    ids, mask = pad_batch(rows)
    scores = model.choice_logit(model.hidden(ids, mask, **kw))
    return scores.reshape(len(passages), n_opt)


def choice_predict(model: EncoderClassifier, passages, questions, options, max_len=None, **kw) -> np.ndarray:
    with ad.no_grad():
        return ad.softmax(choice_scores(model, passages, questions, options, max_len, **kw), axis=-1).data


# ---------------------------------------------------------------------------
# translation
# ---------------------------------------------------------------------------

FeatureFn = Callable[[np.ndarray, np.ndarray], tuple]


def translate(sources: Sequence[Sequence[int]], model, features: FeatureFn | None = None,
              gamma: float | None = None, max_len: int | None = None, banned=()) -> list[list[int]]:
    """Greedy decoding of each source with the model's fusion mode.

    ``features`` maps a padded source batch to compressed features
    ``(hc, hc_mask)``; it is not needed for unfused or ITC models.
    """
    ids, mask = pad_batch([list(s) for s in sources])
    with ad.no_grad():
        hc, hc_mask = features(ids, mask) if features is not None else (None, None)
        ctx = model.source_context(ids, mask, hc, hc_mask, gamma)
        limit = max_len or min(model.cfg.max_len - 1, 2 * ids.shape[1] + 2)
        return model.greedy_decode(ctx, limit, banned)


def strip_eos(seq: Sequence[int]) -> list[int]:
    seq = list(seq)
    return seq[: seq.index(EOS)] if EOS in seq else seq
