"""Three-branch token generator: one resized channel -> num_tokens x q tokens.

Branches:
  (b) convolution + pooling over the instance-normalized signal,
  (c) the same over its first-order difference (leading zero keeps length),
  (d) per-patch mean/std of the raw signal through a multi-scale scalar
      encoder (tanh-squashed linear embeddings, one matrix per scale).

Branch outputs are concatenated per token, linearly projected to q and
layer-normalized. Ablation flags can disable branches, duplicate the signal
branch, swap conv+mean-pool for non-overlapping patch embeddings, or use
max pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, SizeError
from .numcore import (
    Tensor,
    adaptive_max_pool,
    adaptive_mean_pool,
    broadcast_to,
    concat,
    conv1d_same,
    normalize,
    segment_bounds,
)
from .numcore.tensor import transpose

DEFAULT_SCALES = (1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3)
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TokenizerConfig:
    num_tokens: int = 32
    token_dim: int = 256
    conv_kernel: int = 17
    conv_channels: int = 256
    scalar_scales: tuple = DEFAULT_SCALES
    scalar_embed_dim: int = 16
    # ablation flags
    use_diff_branch: bool = True
    use_stats_branch: bool = True
    duplicate_signal_branch: bool = False
    patch_embed: bool = False  # non-overlapping patch embedding instead of conv
    pooling: str = "mean"  # mean | max

    def __post_init__(self):
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.pooling not in ("mean", "max"):
            raise ConfigError(f"pooling must be 'mean' or 'max', got {self.pooling!r}")
        if self.duplicate_signal_branch and self.use_diff_branch:
            raise ConfigError(
                "duplicate_signal_branch replaces the differential branch"
            )

    @property
    def n_conv_branches(self) -> int:
        return 1 + int(self.use_diff_branch) + int(self.duplicate_signal_branch)

    @property
    def stats_width(self) -> int:
        if not self.use_stats_branch:
            return 0
        return 2 * len(self.scalar_scales) * self.scalar_embed_dim

    @property
    def concat_width(self) -> int:
        return self.n_conv_branches * self.conv_channels + self.stats_width


def tokenizer_param_schema(config: TokenizerConfig, resize_length: int):
    """Ordered (name, shape) pairs for every learnable tensor."""
    if resize_length % config.num_tokens != 0:
        raise ConfigError(
            f"resize length {resize_length} must be a multiple of "
            f"num_tokens {config.num_tokens}"
        )
    ksize = (
        resize_length // config.num_tokens if config.patch_embed else config.conv_kernel
    )
    schema = [
        ("tokenizer.signal_conv.weight", (config.conv_channels, 1, ksize)),
        ("tokenizer.signal_conv.bias", (config.conv_channels,)),
    ]
    if config.use_diff_branch:
        schema += [
            ("tokenizer.diff_conv.weight", (config.conv_channels, 1, ksize)),
            ("tokenizer.diff_conv.bias", (config.conv_channels,)),
        ]
    if config.duplicate_signal_branch:
        schema += [
            ("tokenizer.signal_conv2.weight", (config.conv_channels, 1, ksize)),
            ("tokenizer.signal_conv2.bias", (config.conv_channels,)),
        ]
    if config.use_stats_branch:
        n_scales = len(config.scalar_scales)
        schema += [
            ("tokenizer.mean_embed", (n_scales, config.scalar_embed_dim)),
            ("tokenizer.std_embed", (n_scales, config.scalar_embed_dim)),
        ]
    schema += [
        ("tokenizer.projection.weight", (config.concat_width, config.token_dim)),
        ("tokenizer.projection.bias", (config.token_dim,)),
        ("tokenizer.projection.norm_gain", (config.token_dim,)),
        ("tokenizer.projection.norm_shift", (config.token_dim,)),
    ]
    return schema


@dataclass
class TokenizerParams:
    """Name -> Tensor table following tokenizer_param_schema order."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors


# -- data preparation (plain arrays, no gradients flow into the input) ------------


def instance_normalize(series: np.ndarray) -> np.ndarray:
    """Per-series standardization over time steps (population std).

    Degenerate series (std < 1e-8) map to zeros. Works on (L,) or (n, L).
    """
    x = np.asarray(series, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    out = np.where(std < STD_FLOOR, 0.0, (x - mean) / np.maximum(std, STD_FLOOR))
    return out.astype(np.float32)


def first_difference(series: np.ndarray) -> np.ndarray:
    """x[i] - x[i-1] with a leading zero, preserving length. Needs L >= 2."""
    x = np.asarray(series)
    if x.shape[-1] < 2:
        raise SizeError(f"first_difference needs length >= 2, got {x.shape[-1]}")
    out = np.zeros_like(x)
    out[..., 1:] = x[..., 1:] - x[..., :-1]
    return out


def patch_statistics(raw_series: np.ndarray, num_tokens: int):
    """Per-patch (mean, population std) of the raw, unnormalized series.

    Partitions are contiguous and exhaustive with boundaries round(i*L/P).
    Returns (means, stds), each (..., P). Accepts (L,) or (n, L).
    """
    x = np.asarray(raw_series, dtype=np.float64)
    length = x.shape[-1]
    if length < num_tokens:
        raise SizeError(f"series length {length} < num_tokens {num_tokens}")
    bounds = segment_bounds(length, num_tokens)
    seg_len = np.diff(bounds)
    sums = np.add.reduceat(x, bounds[:-1], axis=-1)
    means = sums / seg_len
    sq_sums = np.add.reduceat(x * x, bounds[:-1], axis=-1)
    var = np.maximum(sq_sums / seg_len - means * means, 0.0)
    return means.astype(np.float32), np.sqrt(var).astype(np.float32)


# -- learnable pieces ---------------------------------------------------------------


def scalar_encode(value: float, config: TokenizerConfig, params: TokenizerParams) -> Tensor:
    """Multi-scale embedding of one scalar: concat_s E_s * tanh(v / s)."""
    enc = _scalar_encode_batch(
        np.asarray([[value]], dtype=np.float32), config, params["tokenizer.mean_embed"]
    )
    return enc.reshape((enc.shape[-1],))


def _scalar_encode_batch(values: np.ndarray, config: TokenizerConfig, embed: Tensor) -> Tensor:
    """values (..., P) -> Tensor (..., P, n_scales*embed_dim)."""
    scales = np.asarray(config.scalar_scales, dtype=np.float64)
    squashed = np.tanh(values[..., None].astype(np.float64) / scales).astype(np.float32)
    squashed_t = Tensor.constant(squashed[..., None])  # (..., P, S, 1)
    out = squashed_t * embed.reshape((1,) * values.ndim + embed.shape)
    return out.reshape(values.shape + (scales.size * config.scalar_embed_dim,))


def _conv_branch(signal: np.ndarray, weight: Tensor, bias: Tensor, config: TokenizerConfig) -> Tensor:
    """(n, L) signal -> (n, P, conv_channels) token features."""
    n, length = signal.shape
    p = config.num_tokens
    if config.patch_embed:
        patch = length // p
        folded = signal.reshape(n, p, patch)
        wmat = weight.reshape((config.conv_channels, patch))
        out = Tensor.constant(folded) @ transpose(wmat, (1, 0))
        return out + bias.reshape((1, 1, config.conv_channels))
    conv = conv1d_same(Tensor.constant(signal[:, None, :]), weight, bias)
    pooled = (
        adaptive_mean_pool(conv, p)
        if config.pooling == "mean"
        else adaptive_max_pool(conv, p)
    )
    return transpose(pooled, (0, 2, 1))


def tokenize_batch(
    series: np.ndarray, config: TokenizerConfig, params: TokenizerParams
) -> Tensor:
    """(n, t) resized raw series -> Tensor (n, num_tokens, q)."""
    x = np.asarray(series, dtype=np.float32)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] % config.num_tokens != 0:
        raise SizeError(
            f"series length {x.shape[-1]} is not a multiple of "
            f"num_tokens {config.num_tokens}"
        )
    branches = list(_branch_features(x, config, params).values())
    tokens = concat(branches, axis=2) if len(branches) > 1 else branches[0]
    if tokens.shape[-1] != config.concat_width:
        raise ShapeError(
            f"concat width {tokens.shape[-1]} != expected {config.concat_width}"
        )
    projected = tokens @ params["tokenizer.projection.weight"] + params[
        "tokenizer.projection.bias"
    ].reshape((1, 1, config.token_dim))
    return normalize(
        projected,
        "layer_norm",
        params["tokenizer.projection.norm_gain"],
        params["tokenizer.projection.norm_shift"],
    )


def _branch_features(x: np.ndarray, config: TokenizerConfig, params: TokenizerParams):
    """Per-branch token features keyed by branch name (inspection hook)."""
    normalized = instance_normalize(x)
    features = {}
    features["signal"] = _conv_branch(
        normalized,
        params["tokenizer.signal_conv.weight"],
        params["tokenizer.signal_conv.bias"],
        config,
    )
    if config.duplicate_signal_branch:
        features["signal2"] = _conv_branch(
            normalized,
            params["tokenizer.signal_conv2.weight"],
            params["tokenizer.signal_conv2.bias"],
            config,
        )
    if config.use_diff_branch:
        features["diff"] = _conv_branch(
            first_difference(normalized),
            params["tokenizer.diff_conv.weight"],
            params["tokenizer.diff_conv.bias"],
            config,
        )
    if config.use_stats_branch:
        means, stds = patch_statistics(x, config.num_tokens)
        mean_enc = _scalar_encode_batch(means, config, params["tokenizer.mean_embed"])
        std_enc = _scalar_encode_batch(stds, config, params["tokenizer.std_embed"])
        features["stats"] = concat([mean_enc, std_enc], axis=2)
    return features


def tokenizer_intermediates(series, config: TokenizerConfig, params: TokenizerParams):
    """Branch-level tensors for one series, for tests and debugging."""
    x = np.asarray(series, dtype=np.float32)[None]
    return {k: v.data[0] for k, v in _branch_features(x, config, params).items()}


def tokenize(series, config: TokenizerConfig, params: TokenizerParams) -> Tensor:
    """One resized series (length t) -> Tensor (num_tokens, q)."""
    x = np.asarray(series, dtype=np.float32)
    if x.ndim != 1:
        raise ShapeError(f"tokenize expects a single series, got shape {x.shape}")
    out = tokenize_batch(x[None], config, params)
    return out.reshape((config.num_tokens, config.token_dim))
