"""Backbone fusion: encoder-side (BEF), decoder-side gated (BDF), both-side (BBF)."""

from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Linear, Module
from .transformer import DecoderLayer, FeedForward, ModelConfig, MultiHeadAttention, attention_mask

# sigmoid(40) rounds to exactly 1.0 in float64
GATE_SATURATION = 40.0


class FusionMode(str, enum.Enum):
    NONE = "none"
    BEF = "bef"
    BDF = "bdf"
    BBF = "bbf"

    @classmethod
    def parse(cls, value) -> "FusionMode":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown fusion mode {value!r}; expected none|bef|bdf|bbf") from None

    @property
    def encoder_side(self) -> bool:
        return self in (FusionMode.BEF, FusionMode.BBF)

    @property
    def decoder_side(self) -> bool:
        return self in (FusionMode.BDF, FusionMode.BBF)


def check_task_compat(mode: FusionMode, encoder_decoder: bool) -> None:
    if mode.decoder_side and not encoder_decoder:
        raise ConfigError(f"fusion {mode.value} needs an encoder-decoder task")


class ContextGate(Module):
    """c' = g * c + (1 - g) * b with g = sigmoid(affine([c; b])), per dimension."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.proj = Linear(2 * d_model, d_model, rng)

    def gate(self, c: Tensor, b: Tensor) -> Tensor:
        return ad.sigmoid(self.proj(ad.concat([c, b], axis=-1)))

    def __call__(self, c: Tensor, b: Tensor) -> Tensor:
        g = self.gate(c, b)
        return g * c + (1.0 - g) * b

    def saturate(self, toward: str = "context") -> None:
        """Pin the gate at 1 (keep c) or 0 (keep b) regardless of input."""
        self.proj.weight.data[...] = 0.0
        self.proj.bias.data[...] = GATE_SATURATION if toward == "context" else -GATE_SATURATION


def context_gate(c: Tensor, b: Tensor, gate: ContextGate) -> Tensor:
    if c.shape[-1] != b.shape[-1]:
        raise DimensionError("context widths differ")
    return gate(c, b)


class FusionBranch(Module):
    """Extra decoder inter-attention over a second memory, merged through the gate."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.gate = ContextGate(cfg.d_model, rng)

    def context(self, h_tgt: Tensor, aux: Tensor, aux_mask) -> Tensor:
        return self.ffn(self.attn(h_tgt, aux, aux_mask)[0])

    def __call__(self, h_tgt: Tensor, aux: Tensor, aux_mask, c: Tensor) -> Tensor:
        return self.gate(c, self.context(h_tgt, aux, aux_mask))

    def neutralize(self) -> None:
        self.ffn.outer.zero_()
        self.gate.saturate("context")


class BEFLayer(Module):
    """H_x' = H_x + FFN(MultiHead(H_x, H_c, H_c))."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, cfg.attn_scale)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)

    def __call__(self, h_x: Tensor, h_c: Tensor, c_mask: np.ndarray | None = None) -> Tensor:
        if h_x.shape[-1] != h_c.shape[-1]:
            raise DimensionError(f"BEF width mismatch {h_x.shape[-1]} vs {h_c.shape[-1]}")
        mask = None
        if c_mask is not None:
            mask = attention_mask(np.asarray(c_mask, dtype=bool), h_x.shape[-2])
        return h_x + self.ffn(self.attn(h_x, h_c, mask)[0])

    def neutralize(self) -> None:
        self.ffn.outer.zero_()


def fuse_bef(h_x: Tensor, h_c: Tensor, layer: BEFLayer, c_mask=None) -> Tensor:
    return layer(h_x, h_c, c_mask)


def _original_context(layer: DecoderLayer, h_tgt: Tensor, h_x: Tensor, x_mask) -> Tensor:
    return layer.ffn(layer.cross_attn(h_tgt, h_x, x_mask)[0])


def decoder_context_bdf(layer: DecoderLayer, h_tgt: Tensor, h_x: Tensor, h_c: Tensor,
                        x_mask=None, c_mask=None) -> Tensor:
    """Gated merge of the source context and the compressed-sequence context."""
    c = _original_context(layer, h_tgt, h_x, x_mask)
    return layer.fusion(h_tgt, h_c, c_mask, c)


def decoder_context_bbf(layer: DecoderLayer, h_tgt: Tensor, h_x: Tensor, h_x_fused: Tensor,
                        x_mask=None) -> Tensor:
    """Gated merge of the source context and the context over the BEF-fused memory."""
    c = _original_context(layer, h_tgt, h_x, x_mask)
    return layer.fusion(h_tgt, h_x_fused, x_mask, c)
