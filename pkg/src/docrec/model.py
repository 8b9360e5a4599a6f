"""Encoder-decoder model for whole-document text and layout recognition.

A strided-convolution encoder turns the page image into a feature map with a
fixed (vertical, horizontal) downsampling ratio; the feature map plus a 2D
sinusoidal positional encoding is flattened into a sequence that a stack of
transformer decoder layers attends over while emitting characters, layout
tags and the end-of-transcription token one at a time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    conv2d,
    cross_entropy,
    dropout,
    embedding,
    matmul,
    mul,
    no_grad,
    normalize,
    relu,
    reshape,
    softmax,
    transpose,
)
from .grammar import LayoutGrammar
from .tokens import EOT, SOT, Token, TokenSequence, begin, char, end


class EmptyImage(ValueError):
    pass


class InputTooSmall(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class AllMasked(ValueError):
    """An attention query row has no unmasked key to attend to."""


class PrefixTooLong(ValueError):
    pass


class UnknownTokenId(KeyError):
    pass


class CheckpointError(ValueError):
    pass


# -- vocabulary -----------------------------------------------------------------


class Vocabulary:
    """Bijection between tokens and integer ids.

    Output ids cover characters, layout begin/end tokens and the final
    end-of-transcription id; the start-of-transcription token is input-only
    and lives one id past the output range (it has an embedding row but no
    logit column).
    """

    def __init__(self, tokens: Sequence[Token]):
        toks = list(tokens)
        if toks and toks[-1] == EOT:
            toks = toks[:-1]
        if any(t in (SOT, EOT) for t in toks):
            raise ValueError("sentinels are placed automatically")
        self.tokens: tuple[Token, ...] = tuple(toks) + (EOT,)
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_grammar(cls, grammar: LayoutGrammar) -> "Vocabulary":
        toks: list[Token] = [char(c) for c in sorted(grammar.alphabet)]
        for cid in grammar.class_ids:
            toks.append(begin(cid))
            toks.append(end(cid))
        return cls(toks)

    @property
    def size(self) -> int:
        """Number of output ids (characters + layout tokens + end marker)."""
        return len(self.tokens)

    @property
    def eot_id(self) -> int:
        return len(self.tokens) - 1

    @property
    def sot_id(self) -> int:
        return len(self.tokens)

    @property
    def embedding_rows(self) -> int:
        return len(self.tokens) + 1  # + start-of-transcription

    def char_tokens(self) -> tuple[Token, ...]:
        return tuple(t for t in self.tokens if t.is_char)

    def token_id(self, token: Token) -> int:
        if token == SOT:
            return self.sot_id
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownTokenId(f"token {token!r} not in vocabulary")

    def id_token(self, i: int) -> Token:
        if i == self.sot_id:
            return SOT
        if 0 <= i < len(self.tokens):
            return self.tokens[i]
        raise UnknownTokenId(f"id {i} outside vocabulary of size {self.size}")

    def encode(self, seq: TokenSequence) -> np.ndarray:
        return np.array([self.token_id(t) for t in seq], dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> TokenSequence:
        return TokenSequence(self.id_token(int(i)) for i in ids
                             if int(i) not in (self.eot_id, self.sot_id))

    # checkpoint-friendly form
    def to_strings(self) -> list[str]:
        out = []
        for t in self.tokens[:-1]:
            if t.is_char:
                out.append("c:" + t.value)
            elif t.is_begin:
                out.append("b:" + t.value)
            else:
                out.append("e:" + t.value)
        return out

    @classmethod
    def from_strings(cls, items: Sequence[str]) -> "Vocabulary":
        toks = []
        for s in items:
            kind, _, value = s.partition(":")
            toks.append({"c": char, "b": begin, "e": end}[kind](value))
        return cls(toks)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; defaults follow the reference full-scale setting."""

    vocab_size: int
    d_model: int = 256
    decoder_layers: int = 8
    heads: int = 4
    ff_dim: int = 0  # 0 means "same as d_model"
    dropout: float = 0.10
    window: int = 100
    l_max: int = 3000
    strides: tuple[tuple[int, int], ...] = ((2, 2), (2, 2), (2, 2), (2, 1), (2, 1))
    in_channels: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if self.ff_dim == 0:
            object.__setattr__(self, "ff_dim", self.d_model)
        object.__setattr__(self, "strides", tuple(tuple(s) for s in self.strides))
        if self.vocab_size < 2:
            raise ValueError("vocabulary needs at least one token plus the end marker")
        if self.d_model % 4 != 0:
            raise ValueError("d_model must be divisible by 4 (positional encoding quarters)")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by the head count")
        if self.window < 1:
            raise ValueError("attention window must be >= 1")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if not self.strides:
            raise ValueError("encoder needs at least one block")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def v_stride(self) -> int:
        out = 1
        for sv, _ in self.strides:
            out *= sv
        return out

    @property
    def h_stride(self) -> int:
        out = 1
        for _, sh in self.strides:
            out *= sh
        return out

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @classmethod
    def desk_scale(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Small profile that trains in minutes on one core."""
        base = dict(d_model=64, decoder_layers=2, heads=2, window=100, l_max=400)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    @classmethod
    def tiny(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Minimal profile for gradient checks (double precision, 4x2 stride)."""
        base = dict(d_model=8, decoder_layers=1, heads=1, window=100, l_max=50,
                    strides=((2, 2), (2, 1)), dtype="float64")
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model,
            "decoder_layers": self.decoder_layers, "heads": self.heads,
            "ff_dim": self.ff_dim, "dropout": self.dropout, "window": self.window,
            "l_max": self.l_max, "strides": [list(s) for s in self.strides],
            "in_channels": self.in_channels, "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["strides"] = tuple(tuple(s) for s in d["strides"])
        return cls(**d)


# -- positional encodings -----------------------------------------------------------


def pe_1d(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal encoding over sequence positions: channel 2k holds
    sin(w_k * i), channel 2k+1 holds cos(w_k * i), w_k = 10000^(-2k/d)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(d_model // 2, dtype=np.float64)[None, :]
    w = 10000.0 ** (-2.0 * k / d_model)
    pe = np.empty((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(w * pos)
    pe[:, 1::2] = np.cos(w * pos)
    return pe.astype(dtype)


def pe_2d(h: int, w: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """2D sinusoidal encoding: the first d/2 channels encode the vertical
    position, the second d/2 the horizontal one, sharing the pe_1d
    frequencies (so each axis uses d/4 sin/cos pairs)."""
    if d_model % 4 != 0:
        raise ValueError("d_model must be divisible by 4")
    quarter = d_model // 4
    k = np.arange(quarter, dtype=np.float64)
    wk = 10000.0 ** (-2.0 * k / d_model)
    ys = wk * np.arange(h, dtype=np.float64)[:, None]  # (h, quarter)
    xs = wk * np.arange(w, dtype=np.float64)[:, None]  # (w, quarter)
    pe = np.empty((h, w, d_model), dtype=np.float64)
    half = d_model // 2
    pe[:, :, 0:half:2] = np.sin(ys)[:, None, :]
    pe[:, :, 1:half:2] = np.cos(ys)[:, None, :]
    pe[:, :, half::2] = np.sin(xs)[None, :, :]
    pe[:, :, half + 1::2] = np.cos(xs)[None, :, :]
    return pe.astype(dtype)


# -- image preprocessing --------------------------------------------------------------


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers (an exact 2x downscale
    averages each 2x2 block)."""
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def preprocess_image(raw: np.ndarray, source_dpi: float = 150.0,
                     target_dpi: float = 150.0,
                     mean: float | None = None,
                     std: float | None = None) -> np.ndarray:
    """Grayscale float32 image rescaled to the target resolution and
    normalized to zero mean / unit variance.

    Without explicit ``mean``/``std`` (training-set statistics), the image's
    own statistics are used; a constant image then becomes all zeros.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])  # luminance
    if arr.ndim != 2:
        raise EmptyImage(f"expected a 2D or 3-channel raster, got shape {arr.shape}")
    if source_dpi <= 0 or target_dpi <= 0:
        raise ValueError("dpi values must be positive")
    scale = target_dpi / source_dpi
    if scale != 1.0:
        oh = max(1, round(arr.shape[0] * scale))
        ow = max(1, round(arr.shape[1] * scale))
        arr = bilinear_resize(arr, oh, ow)
    m = arr.mean() if mean is None else mean
    s = arr.std() if std is None else std
    if s == 0:
        s = 1.0
    return ((arr - m) / s).astype(np.float32)


# -- attention -------------------------------------------------------------------------


def causal_window_mask(t: int, window: int) -> np.ndarray:
    """Boolean (t, t) mask: query i may attend to keys [i-window+1, i]."""
    i = np.arange(t)[:, None]
    j = np.arange(t)[None, :]
    return (j <= i) & (j > i - window)


class MultiHeadAttention:
    """Scaled dot-product attention with per-head splits of d_model."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype):
        if d_model % heads != 0:
            raise ValueError("d_model must be divisible by heads")
        self.d_model, self.heads = d_model, heads
        self.d_head = d_model // heads
        std = (2.0 / (2 * d_model)) ** 0.5
        def w():
            return Tensor(rng.normal(0.0, std, (d_model, d_model)).astype(dtype),
                          requires_grad=True)
        def b():
            return Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)
        self.wq, self.wk, self.wv, self.wo = w(), w(), w(), w()
        self.bq, self.bk, self.bv, self.bo = b(), b(), b(), b()

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{n}": getattr(self, n)
                for n in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                 mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        lq, d = q_in.shape
        lk = k_in.shape[0]
        if d != self.d_model or k_in.shape[1] != d or v_in.shape != k_in.shape:
            raise ShapeMismatch(
                f"expected (*, {self.d_model}) queries/keys/values, got "
                f"{q_in.shape}, {k_in.shape}, {v_in.shape}")
        if mask is not None:
            if mask.shape != (lq, lk):
                raise ShapeMismatch(f"mask shape {mask.shape} != ({lq}, {lk})")
            if not mask.any(axis=1).all():
                raise AllMasked("some query has every key masked out")

        def split(x: Tensor) -> Tensor:  # (L, d) -> (heads, L, d_head)
            return transpose(reshape(x, (x.shape[0], self.heads, self.d_head)), (1, 0, 2))

        q = split(add(matmul(q_in, self.wq), self.bq))
        k = split(add(matmul(k_in, self.wk), self.bk))
        v = split(add(matmul(v_in, self.wv), self.bv))
        scores = mul(matmul(q, transpose(k, (0, 2, 1))),
                     Tensor(np.asarray(self.d_head ** -0.5, dtype=q_in.dtype)))
        if mask is not None:
            # -inf before the softmax max-shift so masked weights are exactly 0
            bias = np.where(mask, 0.0, -np.inf).astype(q_in.dtype)
            scores = add(scores, Tensor(bias))
        weights = softmax(scores, axis=-1)  # (heads, lq, lk)
        ctx = matmul(weights, v)
        ctx = reshape(transpose(ctx, (1, 0, 2)), (lq, self.d_model))
        out = add(matmul(ctx, self.wo), self.bo)
        return out, weights.data.copy()


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None,
                         layer: MultiHeadAttention) -> tuple[Tensor, np.ndarray]:
    """Functional façade over :class:`MultiHeadAttention`."""
    return layer(q, k, v, mask)


# -- decoder layer ----------------------------------------------------------------------


class _LayerNorm:
    def __init__(self, d_model: int, dtype):
        self.gamma = Tensor(np.ones(d_model, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.g": self.gamma, f"{prefix}.b": self.beta}

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(normalize(x, axes=-1), self.gamma), self.beta)


class DecoderLayer:
    """Post-norm transformer decoder layer: windowed causal self-attention,
    mutual attention over the flattened image features, then a ReLU
    feed-forward block; dropout applies to each sublayer output."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dtype = cfg.np_dtype
        self.cfg = cfg
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype)
        self.mutual_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype)
        std1 = (2.0 / (cfg.d_model + cfg.ff_dim)) ** 0.5
        self.ff_w1 = Tensor(rng.normal(0.0, std1, (cfg.d_model, cfg.ff_dim)).astype(dtype),
                            requires_grad=True)
        self.ff_b1 = Tensor(np.zeros(cfg.ff_dim, dtype=dtype), requires_grad=True)
        self.ff_w2 = Tensor(rng.normal(0.0, std1, (cfg.ff_dim, cfg.d_model)).astype(dtype),
                            requires_grad=True)
        self.ff_b2 = Tensor(np.zeros(cfg.d_model, dtype=dtype), requires_grad=True)
        self.norm1 = _LayerNorm(cfg.d_model, dtype)
        self.norm2 = _LayerNorm(cfg.d_model, dtype)
        self.norm3 = _LayerNorm(cfg.d_model, dtype)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.self_attn.parameters(f"{prefix}.self"))
        params.update(self.mutual_attn.parameters(f"{prefix}.mutual"))
        params.update({f"{prefix}.ff.w1": self.ff_w1, f"{prefix}.ff.b1": self.ff_b1,
                       f"{prefix}.ff.w2": self.ff_w2, f"{prefix}.ff.b2": self.ff_b2})
        params.update(self.norm1.parameters(f"{prefix}.norm1"))
        params.update(self.norm2.parameters(f"{prefix}.norm2"))
        params.update(self.norm3.parameters(f"{prefix}.norm3"))
        return params

    def __call__(self, x: Tensor, f1d: Tensor, self_mask: np.ndarray,
                 rng: np.random.Generator | None, training: bool,
                 drop_rate: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
        def drop(t: Tensor) -> Tensor:
            if training and rng is not None:
                return dropout(t, drop_rate, rng, training=True)
            return t

        a, self_w = self.self_attn(x, x, x, self_mask)
        x = self.norm1(add(x, drop(a)))
        m, mutual_w = self.mutual_attn(x, f1d, f1d, None)
        x = self.norm2(add(x, drop(m)))
        h = add(matmul(relu(add(matmul(x, self.ff_w1), self.ff_b1)), self.ff_w2), self.ff_b2)
        x = self.norm3(add(x, drop(h)))
        return x, self_w, mutual_w


# -- encoder ---------------------------------------------------------------------------


def encoder_channel_plan(cfg: ModelConfig) -> list[int]:
    """Channel widths for the encoder blocks, doubling up to d_model."""
    n = len(cfg.strides)
    return [max(2, cfg.d_model >> (n - 1 - i)) for i in range(n - 1)] + [cfg.d_model]


def apply_encoder_stack(x: Tensor, convs: Sequence[tuple[Tensor, Tensor]],
                        norms: Sequence[tuple[Tensor, Tensor]],
                        strides: Sequence[tuple[int, int]],
                        drop_rate: float = 0.0,
                        rng: np.random.Generator | None = None,
                        training: bool = False) -> Tensor:
    """Shared strided-conv feature extractor: conv, instance norm, ReLU,
    dropout per block.  Instance statistics are skipped once a block's
    spatial extent collapses to a single position."""
    for (cw, cb), (g, bt), stride in zip(convs, norms, strides):
        x = conv2d(x, cw, cb, stride=stride, padding=(1, 1))
        if x.shape[2] * x.shape[3] > 1:
            x = add(mul(normalize(x, axes=(-2, -1)), g), bt)
        x = relu(x)
        if training and rng is not None and drop_rate > 0:
            x = dropout(x, drop_rate, rng, training=True)
    return x


def init_encoder_stack(config: ModelConfig, rng: np.random.Generator
                       ) -> tuple[list[tuple[Tensor, Tensor]], list[tuple[Tensor, Tensor]]]:
    """Fresh conv and instance-norm parameters for the encoder blocks."""
    dtype = config.np_dtype
    convs: list[tuple[Tensor, Tensor]] = []
    norms: list[tuple[Tensor, Tensor]] = []
    c_prev = config.in_channels
    for c_out in encoder_channel_plan(config):
        std = (2.0 / (c_prev * 9)) ** 0.5
        w = Tensor(rng.normal(0.0, std, (c_out, c_prev, 3, 3)).astype(dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        g = Tensor(np.ones((c_out, 1, 1), dtype=dtype), requires_grad=True)
        bt = Tensor(np.zeros((c_out, 1, 1), dtype=dtype), requires_grad=True)
        convs.append((w, b))
        norms.append((g, bt))
        c_prev = c_out
    return convs, norms


def encoder_parameters(convs, norms) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for i, ((w, b), (g, bt)) in enumerate(zip(convs, norms)):
        params[f"enc.block{i}.w"] = w
        params[f"enc.block{i}.b"] = b
        params[f"enc.block{i}.norm.g"] = g
        params[f"enc.block{i}.norm.b"] = bt
    return params


@dataclass
class EncoderOutput:
    """Feature map of one document image, shaped (H_f, W_f, C_f)."""

    f2d: Tensor

    @property
    def h_f(self) -> int:
        return self.f2d.shape[0]

    @property
    def w_f(self) -> int:
        return self.f2d.shape[1]

    @property
    def c_f(self) -> int:
        return self.f2d.shape[2]


def flatten_with_pe(enc: EncoderOutput) -> Tensor:
    """Rows ordered j = y * W_f + x, each f2d[y, x] + pe_2d[y, x]."""
    f2d = enc.f2d if isinstance(enc, EncoderOutput) else enc
    h, w, d = f2d.shape
    pe = Tensor(pe_2d(h, w, d, f2d.dtype))
    return reshape(add(f2d, pe), (h * w, d))


# -- the model --------------------------------------------------------------------------


class RecognitionModel:
    """Document image in, token sequence out."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        if config.vocab_size != vocab.size:
            raise ShapeMismatch(
                f"config expects vocabulary of {config.vocab_size}, got {vocab.size}")
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype

        self.enc_convs, self.enc_norms = init_encoder_stack(config, rng)

        self.embed = Tensor(
            rng.normal(0.0, config.d_model ** -0.5,
                       (vocab.embedding_rows, config.d_model)).astype(dtype),
            requires_grad=True)
        layer_rng = np.random.default_rng(rng.integers(2**63))
        self.layers = [DecoderLayer(config, layer_rng) for _ in range(config.decoder_layers)]
        std_out = (2.0 / (config.d_model + vocab.size)) ** 0.5
        self.out_w = Tensor(rng.normal(0.0, std_out, (config.d_model, vocab.size)).astype(dtype),
                            requires_grad=True)
        self.out_b = Tensor(np.zeros(vocab.size, dtype=dtype), requires_grad=True)

    # -- parameters ----------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        params = encoder_parameters(self.enc_convs, self.enc_norms)
        params["dec.embed"] = self.embed
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"dec.layer{i}"))
        params["dec.out.w"] = self.out_w
        params["dec.out.b"] = self.out_b
        return params

    # -- encoder -------------------------------------------------------------

    def encode_batch(self, x: Tensor, rng: np.random.Generator | None = None,
                     training: bool = False,
                     drop_rate: float | None = None) -> Tensor:
        """(N, C, H, W) image batch to (N, d_model, H_f, W_f) features."""
        n, c, h, w = x.shape
        if h < self.config.v_stride or w < self.config.h_stride:
            raise InputTooSmall(
                f"image {h}x{w} smaller than the encoder stride "
                f"{self.config.v_stride}x{self.config.h_stride}")
        rate = self.config.dropout if drop_rate is None else drop_rate
        return apply_encoder_stack(x, self.enc_convs, self.enc_norms,
                                   self.config.strides, rate, rng, training)

    def encode(self, image: np.ndarray, rng: np.random.Generator | None = None,
               training: bool = False,
               drop_rate: float | None = None) -> EncoderOutput:
        """Single grayscale image (H, W) to an (H_f, W_f, C_f) feature map."""
        arr = np.asarray(image, dtype=self.config.np_dtype)
        if arr.ndim != 2:
            raise ShapeMismatch(f"expected a 2D grayscale image, got shape {arr.shape}")
        x = Tensor(arr[None, None, :, :])
        feats = self.encode_batch(x, rng=rng, training=training, drop_rate=drop_rate)
        return EncoderOutput(transpose(reshape(feats, feats.shape[1:]), (1, 2, 0)))

    # -- decoder -------------------------------------------------------------

    def embed_queries(self, prefix_ids: Sequence[int]) -> Tensor:
        ids = np.asarray(list(prefix_ids), dtype=np.int64)
        if ids.size == 0 or ids[0] != self.vocab.sot_id:
            raise ValueError("decoder prefix must start with the start-of-transcription id")
        if ids.min() < 0 or ids.max() >= self.vocab.embedding_rows:
            raise UnknownTokenId(f"prefix ids outside [0, {self.vocab.embedding_rows})")
        e = embedding(self.embed, ids)
        return add(e, Tensor(pe_1d(len(ids), self.config.d_model, self.config.np_dtype)))

    def decoder_forward(self, f1d: Tensor, prefix_ids: Sequence[int],
                        rng: np.random.Generator | None = None,
                        training: bool = False,
                        collect_attention: bool = False,
                        drop_rate: float | None = None):
        """Logits (t, vocab) for every position of the prefix.

        When ``collect_attention`` is true, also returns the per-layer self
        and mutual attention weight arrays.
        """
        ids = list(prefix_ids)
        if len(ids) > self.config.l_max:
            raise PrefixTooLong(f"prefix of {len(ids)} exceeds L_max={self.config.l_max}")
        rate = self.config.dropout if drop_rate is None else drop_rate
        x = self.embed_queries(ids)
        mask = causal_window_mask(len(ids), self.config.window)
        self_maps, mutual_maps = [], []
        for layer in self.layers:
            x, sw, mw = layer(x, f1d, mask, rng, training, rate)
            self_maps.append(sw)
            mutual_maps.append(mw)
        logits = add(matmul(x, self.out_w), self.out_b)
        if collect_attention:
            return logits, self_maps, mutual_maps
        return logits

    def loss(self, logits: Tensor, target: TokenSequence) -> Tensor:
        """Summed cross-entropy over the target tokens plus the end marker."""
        ids = np.concatenate([self.vocab.encode(target), [self.vocab.eot_id]])
        if logits.shape[0] != len(ids):
            raise ShapeMismatch(
                f"{logits.shape[0]} logit rows for {len(ids)} target steps")
        return cross_entropy(logits, ids)

    def sequence_loss(self, image: np.ndarray, target: TokenSequence,
                      rng: np.random.Generator | None = None,
                      training: bool = False,
                      prefix: TokenSequence | None = None,
                      drop_rate: float | None = None) -> Tensor:
        """Teacher-forced loss on one document; ``prefix`` (defaults to the
        target) is the possibly error-injected input sequence."""
        fed = target if prefix is None else prefix
        if len(fed) != len(target):
            raise ShapeMismatch("teacher-forcing prefix must match the target length")
        enc = self.encode(image, rng=rng, training=training, drop_rate=drop_rate)
        f1d = flatten_with_pe(enc)
        ids = [self.vocab.sot_id] + list(self.vocab.encode(fed))
        logits = self.decoder_forward(f1d, ids, rng=rng, training=training,
                                      drop_rate=drop_rate)
        return self.loss(logits, target)

    # -- inference -------------------------------------------------------------

    def decode_autoregressive(self, image: np.ndarray | None = None, *,
                              f1d: Tensor | None = None,
                              feature_hw: tuple[int, int] | None = None,
                              max_len: int | None = None):
        """Greedy decoding until the end marker or the length cap.

        Returns the emitted tokens (sentinels stripped), one probability
        vector per step (the end-marker step included), and one final-layer
        mutual-attention map per step, reshaped to (H_f, W_f) and averaged
        over heads.
        """
        with no_grad():
            if f1d is None:
                if image is None:
                    raise ValueError("provide an image or precomputed features")
                enc = self.encode(image)
                feature_hw = (enc.h_f, enc.w_f)
                f1d = flatten_with_pe(enc)
            cap = min(self.config.l_max, max_len) if max_len else self.config.l_max
            ids = [self.vocab.sot_id]
            probs: list[np.ndarray] = []
            attn: list[np.ndarray] = []
            while len(ids) - 1 < cap:
                logits, _, mutual = self.decoder_forward(f1d, ids, collect_attention=True)
                row = logits.data[-1]
                p = np.exp(row - row.max())
                p /= p.sum()
                probs.append(p.astype(np.float64))
                step_map = mutual[-1][:, -1, :].mean(axis=0)  # heads x keys -> keys
                if feature_hw is not None:
                    step_map = step_map.reshape(feature_hw)
                attn.append(step_map)
                nxt = int(p.argmax())
                if nxt == self.vocab.eot_id:
                    break
                ids.append(nxt)
        return self.vocab.decode(ids[1:]), probs, attn


# -- teacher forcing --------------------------------------------------------------------


def inject_errors(gt: TokenSequence, rate: float, rng: np.random.Generator,
                  vocab: Vocabulary) -> TokenSequence:
    """Replace each token independently with probability ``rate`` by a token
    drawn uniformly from the non-sentinel vocabulary (possibly itself)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("error rate must be in [0, 1]")
    pool = vocab.tokens[:-1]  # everything except the end marker
    out = [pool[rng.integers(len(pool))] if rng.random() < rate else t for t in gt]
    return TokenSequence(out)


# -- checkpoints --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DRWT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, model: RecognitionModel, extra: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON header (model config,
    vocabulary, free-form extras), then named float32 tensor records."""
    params = model.parameters()
    header = json.dumps({
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_strings(),
        "extra": extra or {},
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        out = blob[off:off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(hlen).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocabulary.from_strings(header["vocab"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}")
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * n_items), dtype="<f4").reshape(shape)
        tensors[name] = data.copy()
    if off != len(blob):
        raise CheckpointError("trailing bytes after the last tensor record")
    return Checkpoint(config=config, vocab=vocab, tensors=tensors,
                      extra=header.get("extra", {}))


def restore_model(ckpt: Checkpoint) -> RecognitionModel:
    model = RecognitionModel(ckpt.config, ckpt.vocab, seed=0)
    params = model.parameters()
    missing = set(params) - set(ckpt.tensors)
    unexpected = set(ckpt.tensors) - set(params)
    if missing or unexpected:
        raise CheckpointError(
            f"parameter names do not match (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(unexpected)[:3]})")
    for name, tensor in params.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {stored.shape} vs {tensor.data.shape}")
        tensor.data = stored.astype(ckpt.config.np_dtype)
    return model


# -- attention export ------------------------------------------------------------------------


def attention_overlay(attn: np.ndarray, image_shape: tuple[int, int],
                      v_stride: int = 32, h_stride: int = 8,
                      clamp: tuple[float, float] = (0.02, 0.25)) -> np.ndarray:
    """Upsample one (H_f, W_f) attention map to image size as a uint8 raster.

    Values are displayed between the clamp bounds: everything at or below the
    lower bound maps to 0 and everything at or above the upper bound to 255.
    """
    lo, hi = clamp
    if hi <= lo:
        raise ValueError("clamp upper bound must exceed the lower bound")
    up = np.repeat(np.repeat(attn, v_stride, axis=0), h_stride, axis=1)
    h, w = image_shape
    if up.shape[0] < h or up.shape[1] < w:
        raise ShapeMismatch(
            f"attention map {attn.shape} too small for image {image_shape}")
    up = up[:h, :w]
    intensity = np.clip((up - lo) / (hi - lo), 0.0, 1.0)
    return np.round(intensity * 255).astype(np.uint8)
