"""Transformer encoder over the generated tokens plus a learnable class token.

Pre-normalization blocks with configurable positional encoding (sinusoidal,
rotary, none), normalization (layer_norm, rms_norm) and feed-forward
(gelu, swiglu). Every layer state is recorded so intermediate layers can be
read out; a final normalization is applied only when reading the last layer.
Params are immutable after construction; forward passes over distinct
series may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .numcore import Tensor, broadcast_to, concat, gelu, normalize, silu, softmax_rows
from .numcore.tensor import matmul, reshape, transpose
from .tokenizer import (
    TokenizerConfig,
    TokenizerParams,
    tokenize_batch,
    tokenizer_param_schema,
)

HEAD_DIM_CHOICES = (32, 64, 128, 256)
AGGREGATIONS = ("cls", "mean", "cls_mean_concat")


@dataclass(frozen=True)
class EncoderConfig:
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    num_layers: int = 6
    num_heads: int = 8
    head_dim: int = 128
    pos_encoding: str = "sinusoidal"  # sinusoidal | rope | none
    norm: str = "layer_norm"  # layer_norm | rms_norm
    ffn: str = "gelu"  # gelu | swiglu
    ffn_hidden: int = 0  # 0 -> default (4q for gelu, 672 for swiglu at q=256)
    resize_length: int = 512
    final_norm: bool = True

    def __post_init__(self):
        if self.pos_encoding not in ("sinusoidal", "rope", "none"):
            raise ConfigError(f"unknown pos_encoding {self.pos_encoding!r}")
        if self.norm not in ("layer_norm", "rms_norm"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.ffn not in ("gelu", "swiglu"):
            raise ConfigError(f"unknown ffn {self.ffn!r}")
        if self.pos_encoding == "rope" and self.head_dim % 2 != 0:
            raise ConfigError("rope requires an even head_dim")

    @property
    def q(self) -> int:
        return self.tokenizer.token_dim

    @property
    def hidden(self) -> int:
        if self.ffn_hidden:
            return self.ffn_hidden
        if self.ffn == "gelu":
            return 4 * self.q
        # parameter-matched SwiGLU sizing: ~2/3 * 4q rounded to a multiple of 32
        return max(32, int(round(2 * 4 * self.q / 3 / 32)) * 32)

    @property
    def seq_len(self) -> int:
        return self.tokenizer.num_tokens + 1  # class token at index 0


def encoder_param_schema(config: EncoderConfig):
    """Ordered (name, shape) list for every learnable scalar group."""
    q, h = config.q, config.hidden
    hd = config.num_heads * config.head_dim
    schema = list(tokenizer_param_schema(config.tokenizer, config.resize_length))
    schema.append(("encoder.cls_token", (q,)))
    for i in range(config.num_layers):
        pre = f"encoder.layer{i}."
        schema.append((pre + "attn_norm.gain", (q,)))
        if config.norm == "layer_norm":
            schema.append((pre + "attn_norm.shift", (q,)))
        for proj in ("q", "k", "v"):
            schema.append((pre + f"attn.{proj}.weight", (q, hd)))
            schema.append((pre + f"attn.{proj}.bias", (hd,)))
        schema.append((pre + "attn.out.weight", (hd, q)))
        schema.append((pre + "attn.out.bias", (q,)))
        schema.append((pre + "ffn_norm.gain", (q,)))
        if config.norm == "layer_norm":
            schema.append((pre + "ffn_norm.shift", (q,)))
        if config.ffn == "gelu":
            schema.append((pre + "ffn.w1", (q, h)))
            schema.append((pre + "ffn.b1", (h,)))
            schema.append((pre + "ffn.w2", (h, q)))
            schema.append((pre + "ffn.b2", (q,)))
        else:
            schema.append((pre + "ffn.gate", (q, h)))
            schema.append((pre + "ffn.value", (q, h)))
            schema.append((pre + "ffn.down", (h, q)))
    if config.final_norm:
        schema.append(("encoder.final_norm.gain", (q,)))
        if config.norm == "layer_norm":
            schema.append(("encoder.final_norm.shift", (q,)))
    return schema


def param_count(config: EncoderConfig) -> int:
    """Exact learnable-scalar count for the configuration."""
    return sum(int(np.prod(shape)) for _, shape in encoder_param_schema(config))


def _truncated_normal(rng, shape, std=0.02):
    # resample anything outside +-2 std
    out = rng.standard_normal(shape) * std
    mask = np.abs(out) > 2 * std
    while mask.any():
        out[mask] = rng.standard_normal(int(mask.sum())) * std
        mask = np.abs(out) > 2 * std
    return out.astype(np.float32)


def init_encoder_params(config: EncoderConfig, seed: int = 0, dtype=np.float32):
    """Fresh EncoderParams; weights truncated-normal(0.02), norms 1, biases 0."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7365]))
    tensors = {}
    for name, shape in encoder_param_schema(config):
        if name.endswith(("norm_gain", "norm.gain", ".gain")):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith(("norm_shift", "norm.shift", ".shift", ".bias", ".b1", ".b2")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape)
        tensors[name] = Tensor.param(data.astype(dtype), dtype=dtype, name=name)
    return EncoderParams(tensors=tensors, config=config)


@dataclass
class EncoderParams:
    """All learnable weights (tokenizer + transformer), keyed by schema name."""

    tensors: dict
    config: EncoderConfig

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def tokenizer(self) -> TokenizerParams:
        return TokenizerParams(
            tensors={k: v for k, v in self.tensors.items() if k.startswith("tokenizer.")}
        )

    def named(self):
        return [(name, self.tensors[name]) for name, _ in encoder_param_schema(self.config)]

    def as_list(self):
        return [t for _, t in self.named()]

    def count(self) -> int:
        return sum(t.size for t in self.as_list())


@dataclass
class LayerStates:
    """Per-layer token matrices (num_tokens+1, q); index 0 is the class token.

    states[0] is the embedded input, states[i] the output of block i.
    `final` holds the last state after the final normalization when the
    config carries one (used when reading layer == num_layers).
    """

    states: list
    final: np.ndarray | None = None

    @property
    def num_layers(self) -> int:
        return len(self.states) - 1


def sinusoidal_table(seq_len: int, dim: int) -> np.ndarray:
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


def _rope_tables(seq_len: int, head_dim: int, dtype):
    half = head_dim // 2
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = pos * freqs[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def apply_rope(q_or_k: Tensor, positions=None) -> Tensor:
    """Rotate (query or key) pairs; position 0 is the identity rotation.

    Accepts (heads, tokens, head_dim) or (n, heads, tokens, head_dim).
    """
    x = q_or_k
    head_dim = x.shape[-1]
    seq_len = x.shape[-2]
    if head_dim % 2 != 0:
        raise ConfigError(f"rope requires an even head_dim, got {head_dim}")
    if positions is None:
        cos, sin = _rope_tables(seq_len, head_dim, x.dtype)
    else:
        positions = np.asarray(positions, dtype=np.float64)
        half = head_dim // 2
        freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) * 2.0 / head_dim)
        angles = positions[:, None] * freqs[None, :]
        cos, sin = np.cos(angles).astype(x.dtype), np.sin(angles).astype(x.dtype)
    pair_shape = x.shape[:-1] + (head_dim // 2, 2)
    folded = reshape(x, pair_shape)
    a = folded[..., 0]
    b = folded[..., 1]
    cos_t, sin_t = Tensor.constant(cos), Tensor.constant(sin)
    ra = a * cos_t - b * sin_t
    rb = a * sin_t + b * cos_t
    stacked = concat(
        [reshape(ra, ra.shape + (1,)), reshape(rb, rb.shape + (1,))], axis=-1
    )
    return reshape(stacked, x.shape)


def _heads_split(x: Tensor, n: int, t: int, heads: int, hd: int) -> Tensor:
    return transpose(reshape(x, (n, t, heads, hd)), (0, 2, 1, 3))


def transformer_states(tokens: Tensor, config: EncoderConfig, params: EncoderParams):
    """Run the block stack on (n, num_tokens, q) tokens.

    Returns (states, final): lists of Tensors (n, seq, q) per layer and the
    final-normalized last state (or None).
    """
    n = tokens.shape[0]
    q = config.q
    heads, hd = config.num_heads, config.head_dim
    scale = 1.0 / math.sqrt(hd)

    cls = broadcast_to(reshape(params["encoder.cls_token"], (1, 1, q)), (n, 1, q))
    x = concat([cls, tokens], axis=1)
    t = x.shape[1]
    if config.pos_encoding == "sinusoidal":
        x = x + Tensor.constant(sinusoidal_table(t, q)[None])
    states = [x]
    for i in range(config.num_layers):
        pre = f"encoder.layer{i}."
        h = _norm(x, config, params, pre + "attn_norm")
        qp = _heads_split(h @ params[pre + "attn.q.weight"] + params[pre + "attn.q.bias"], n, t, heads, hd)
        kp = _heads_split(h @ params[pre + "attn.k.weight"] + params[pre + "attn.k.bias"], n, t, heads, hd)
        vp = _heads_split(h @ params[pre + "attn.v.weight"] + params[pre + "attn.v.bias"], n, t, heads, hd)
        if config.pos_encoding == "rope":
            qp = apply_rope(qp)
            kp = apply_rope(kp)
        scores = matmul(qp, transpose(kp, (0, 1, 3, 2))) * Tensor.constant(
            np.asarray(scale, dtype=x.dtype)
        )
        attn = softmax_rows(scores)
        ctx = matmul(attn, vp)  # (n, heads, t, hd)
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, heads * hd))
        x = x + (merged @ params[pre + "attn.out.weight"] + params[pre + "attn.out.bias"])
        h2 = _norm(x, config, params, pre + "ffn_norm")
        if config.ffn == "gelu":
            f = gelu(h2 @ params[pre + "ffn.w1"] + params[pre + "ffn.b1"])
            f = f @ params[pre + "ffn.w2"] + params[pre + "ffn.b2"]
        else:
            f = silu(h2 @ params[pre + "ffn.gate"]) * (h2 @ params[pre + "ffn.value"])
            f = f @ params[pre + "ffn.down"]
        x = x + f
        if not np.isfinite(x.data).all():
            raise NumericError(f"non-finite state after transformer layer {i + 1}")
        states.append(x)
    final = _norm(x, config, params, "encoder.final_norm") if config.final_norm else None
    return states, final


def _norm(x: Tensor, config: EncoderConfig, params: EncoderParams, prefix: str) -> Tensor:
    if config.norm == "layer_norm":
        return normalize(x, "layer_norm", params[prefix + ".gain"], params[prefix + ".shift"])
    return normalize(x, "rms_norm", params[prefix + ".gain"])


def forward_batch(series: np.ndarray, config: EncoderConfig, params: EncoderParams):
    """(n, t) resized series -> (states, final) as Tensors (n, seq, q)."""
    tokens = tokenize_batch(series, config.tokenizer, params.tokenizer)
    return transformer_states(tokens, config, params)


def forward(series, config: EncoderConfig, params: EncoderParams) -> LayerStates:
    """One resized series -> LayerStates of num_layers+1 matrices (seq, q)."""
    x = np.asarray(series, dtype=np.float32)
    if x.ndim != 1:
        raise ShapeError(f"forward expects a single series, got shape {x.shape}")
    states, final = forward_batch(x[None], config, params)
    return LayerStates(
        states=[s.data[0] for s in states],
        final=None if final is None else final.data[0],
    )


def embedding_of(states: LayerStates, layer: int, aggregation: str) -> np.ndarray:
    """Read one layer: cls row, mean of content tokens, or their concat."""
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    if not 1 <= layer <= states.num_layers:
        raise IndexError(
            f"layer {layer} out of range [1, {states.num_layers}]"
        )
    mat = states.states[layer]
    if layer == states.num_layers and states.final is not None:
        mat = states.final
    cls = mat[0]
    if aggregation == "cls":
        return cls.copy()
    mean = mat[1:].mean(axis=0)
    if aggregation == "mean":
        return mean.astype(mat.dtype)
    return np.concatenate([cls, mean.astype(mat.dtype)])


def truncate(params: EncoderParams, config: EncoderConfig, keep_layers: int):
    """Drop blocks keep_layers+1..num_layers.

    The truncated model reproduces the original LayerStates[0..keep_layers]
    exactly. When layers are actually removed the final norm is dropped too,
    so the truncated model's last-layer embedding stays bit-identical to the
    full model's intermediate read at that layer.
    """
    if not 1 <= keep_layers <= config.num_layers:
        raise IndexError(
            f"keep_layers {keep_layers} out of range [1, {config.num_layers}]"
        )
    if keep_layers == config.num_layers:
        return params, config
    new_config = replace(config, num_layers=keep_layers, final_norm=False)
    keep_names = {name for name, _ in encoder_param_schema(new_config)}
    tensors = {name: params.tensors[name] for name in keep_names}
    return EncoderParams(tensors=tensors, config=new_config), new_config
