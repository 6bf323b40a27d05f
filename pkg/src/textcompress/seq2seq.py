"""Encoder-decoder model used both as the explicit compressor and as the
translation task model with optional backbone fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BOS, EOS, pad_batch
from .errors import ContractError
from .fusion import BEFLayer, FusionBranch, FusionMode
from .itc import ITCModule, ITCOutput
from .nn import Embedding, Module
from .transformer import Decoder, Encoder, EncoderState, ModelConfig, OutputHead


@dataclass
class SourceContext:
    """Everything the decoder attends to for one batch."""

    state: EncoderState
    memory: Tensor
    mem_mask: np.ndarray
    aux: Tensor | None = None
    aux_mask: np.ndarray | None = None
    itc: ITCOutput | None = None

    def expand(self, n: int) -> "SourceContext":
        """Repeat a single-sequence context n times (beam rows)."""
        rep = lambda t: None if t is None else ad.Tensor(np.repeat(t.data, n, axis=0))
        repm = lambda m: None if m is None else np.repeat(m, n, axis=0)
        return SourceContext(self.state, rep(self.memory), repm(self.mem_mask), rep(self.aux), repm(self.aux_mask))


@dataclass
class DecodeStep:
    context: np.ndarray  # c_i (after any gating)
    output: np.ndarray  # o_i
    distribution: np.ndarray  # next-token probabilities
    attention: np.ndarray  # cross-attention row p_{i, .}


class Seq2SeqModel(Module):
    """Parameter groups draw from separate seeded streams, so the base
    weights are identical whatever fusion or compression parts are attached."""

    def __init__(self, cfg: ModelConfig, fusion="none", seed: int = 0,
                 itc_cfg: ModelConfig | None = None, independent_encoder: bool = False):
        self.cfg = cfg
        self.fusion_mode = FusionMode.parse(fusion)
        base = np.random.default_rng([seed, 0])
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, base)
        self.encoder = Encoder(cfg, self.embed, base)
        self.decoder = Decoder(cfg, self.embed, base)
        self.head = OutputHead(cfg.d_model, cfg.vocab_size, base)

        frng = np.random.default_rng([seed, 1])
        self.bef = BEFLayer(cfg, frng) if self.fusion_mode.encoder_side else None
        if self.fusion_mode.decoder_side:
            for layer in self.decoder.layers:
                layer.fusion = FusionBranch(cfg, frng)
        self.branches = [layer.fusion for layer in self.decoder.layers if layer.fusion is not None]

        self.itc = ITCModule(itc_cfg, cfg.d_model, np.random.default_rng([seed, 2])) if itc_cfg else None
        self.aux_encoder = (Encoder(cfg, self.embed, np.random.default_rng([seed, 3]))
                            if independent_encoder else None)

    # -- encoding ---------------------------------------------------------

    def encode(self, ids, mask=None) -> EncoderState:
        return self.encoder(ids, mask)

    def encode_compressed(self, ids, mask=None) -> Tensor:
        """Re-encode explicit compressions with the shared (or independent) encoder."""
        enc = self.aux_encoder or self.encoder
        return enc(ids, mask).hidden

    def source_context(self, ids, mask=None, hc: Tensor | None = None, hc_mask=None,
                       gamma: float | None = None, fusion=None) -> SourceContext:
        mode = self.fusion_mode if fusion is None else FusionMode.parse(fusion)
        state = self.encode(ids, mask)
        itc_out = None
        if mode is not FusionMode.NONE and hc is None:
            if self.itc is None:
                raise ContractError(f"fusion {mode.value} needs compressed features")
            itc_out = self.itc(state, gamma)
            hc, hc_mask = itc_out.hc, itc_out.hc_mask
        if hc is not None and hc_mask is None:
            hc_mask = np.ones(hc.shape[:2], dtype=bool)
        h_x, x_mask = state.hidden, state.mask
        if mode is FusionMode.NONE:
            return SourceContext(state, h_x, x_mask, itc=itc_out)
        if mode is FusionMode.BEF:
            return SourceContext(state, self.bef(h_x, hc, hc_mask), x_mask, itc=itc_out)
        if mode is FusionMode.BDF:
            return SourceContext(state, h_x, x_mask, hc, hc_mask, itc=itc_out)
        return SourceContext(state, h_x, x_mask, self.bef(h_x, hc, hc_mask), x_mask, itc=itc_out)

    # -- decoding ---------------------------------------------------------

    def decode(self, ctx: SourceContext, tgt_ids, tgt_mask=None, detach_inputs: bool = False):
        tgt_ids = np.atleast_2d(np.asarray(tgt_ids, dtype=np.int64))
        if tgt_mask is None:
            tgt_mask = np.ones(tgt_ids.shape, dtype=bool)
        return self.decoder(tgt_ids, tgt_mask, ctx.memory, ctx.mem_mask, ctx.aux, ctx.aux_mask, detach_inputs)

    def logits(self, o: Tensor) -> Tensor:
        return self.head(o)

    def decode_step(self, prefix, ctx: SourceContext) -> DecodeStep:
        """Context, output, next-token distribution and cross-attention for the last prefix position."""
        prefix = list(prefix)
        if not prefix or prefix[0] != BOS:
            raise ContractError("prefix must start with BOS")
        with ad.no_grad():
            o, c, attn = self.decode(ctx, [prefix])
            probs = ad.softmax(self.logits(o[:, -1]), axis=-1).data[0]
        return DecodeStep(c.data[0, -1], o.data[0, -1], probs, attn[0, -1])

    def next_token_logprobs(self, ctx: SourceContext, prefixes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-probabilities and cross-attention rows for the last position of each prefix row."""
        with ad.no_grad():
            o, _, attn = self.decode(ctx.expand(len(prefixes)) if ctx.memory.shape[0] == 1 else ctx, prefixes)
            logp = ad.log_softmax(self.logits(o[:, -1]), axis=-1).data
        return logp, attn[:, -1]

    def teacher_forced_loss(self, ctx: SourceContext, targets) -> Tensor:
        tgt_in, tgt_mask = pad_batch([[BOS] + list(t) for t in targets])
        tgt_out, _ = pad_batch([list(t) + [EOS] for t in targets])
        o, _, _ = self.decode(ctx, tgt_in, tgt_mask)
        return ad.cross_entropy(self.logits(o), tgt_out, tgt_mask)

    def greedy_decode(self, ctx: SourceContext, max_len: int, banned=()) -> list[list[int]]:
        """Batched greedy decoding; stops per row at EOS."""
        n = ctx.memory.shape[0]
        seqs = np.full((n, 1), BOS, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        with ad.no_grad():
            for _ in range(max_len):
                o, _, _ = self.decode(ctx, seqs)
                logits = self.logits(o[:, -1]).data.copy()
                if banned:
                    logits[:, list(banned)] = -np.inf
                nxt = logits.argmax(axis=1)
                nxt[done] = EOS
                seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
                done |= nxt == EOS
                if done.all():
                    break
        out = []
        for row in seqs[:, 1:]:
            toks = list(row)
            out.append([int(t) for t in toks[: toks.index(EOS)]] if EOS in toks else [int(t) for t in toks])
        return out

    # -- fusion helpers ---------------------------------------------------

    def neutralize_fusion(self) -> None:
        """Zero every fusion output projection and pin gates to the original context."""
        if self.bef is not None:
            self.bef.neutralize()
        for branch in self.branches:
            branch.neutralize()
