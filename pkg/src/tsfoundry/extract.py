"""Frozen-encoder feature extraction.

Per-channel embeddings with layer selection and token aggregation,
multichannel concatenation in channel order, multi-length self-ensembling
(optionally with first-difference variants) and pairwise cross-model
fusion. Extraction never mutates checkpoint tensors; everything is a pure
function of (series bytes, checkpoint bytes, spec).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blobio import read_blob_file, write_blob_file
from .encoder import AGGREGATIONS, EncoderConfig, forward_batch
from .errors import ConfigError, FileFormatError, ShapeError
from .numcore import linear_resize_array, no_grad
from .series import TimeSeries
from .tokenizer import first_difference

SE_DEFAULT_LENGTHS = (128, 256, 512, 1024)


@dataclass(frozen=True)
class SelfEnsembleSpec:
    lengths: tuple = SE_DEFAULT_LENGTHS
    include_first_difference: bool = True


@dataclass(frozen=True)
class ExtractionSpec:
    layer: int = 6
    aggregation: str = "cls_mean_concat"
    resize_length: int = 512
    self_ensemble: SelfEnsembleSpec | None = None

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    def base_dim(self, q: int) -> int:
        return 2 * q if self.aggregation == "cls_mean_concat" else q

    def per_channel_dim(self, q: int) -> int:
        base = self.base_dim(q)
        if self.self_ensemble is None:
            return base
        blocks = len(self.self_ensemble.lengths)
        if self.self_ensemble.include_first_difference:
            blocks *= 2
        return base * blocks

    def to_dict(self) -> dict:
        se = None
        if self.self_ensemble is not None:
            se = {
                "lengths": list(self.self_ensemble.lengths),
                "include_first_difference": self.self_ensemble.include_first_difference,
            }
        return {
            "layer": self.layer,
            "aggregation": self.aggregation,
            "resize_length": self.resize_length,
            "self_ensemble": se,
        }


@dataclass
class EmbeddingMatrix:
    values: np.ndarray  # (n_rows, dim) float32
    provenance: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _validate_se_lengths(spec: ExtractionSpec, num_tokens: int):
    if spec.self_ensemble is None:
        return
    for length in spec.self_ensemble.lengths:
        if length <= 0 or length % num_tokens != 0:
            raise ConfigError(
                f"self-ensemble length {length} must be a positive multiple "
                f"of num_tokens {num_tokens}"
            )


def _batched_layer_embeddings(
    signals: np.ndarray, config: EncoderConfig, params, layer: int, aggregation: str
) -> np.ndarray:
    """(n, t) resized signals -> (n, base_dim) embeddings at one layer."""
    if not 1 <= layer <= config.num_layers:
        raise IndexError(f"layer {layer} out of range [1, {config.num_layers}]")
    states, final = forward_batch(signals, config, params)
    mat = states[layer].data
    if layer == config.num_layers and final is not None:
        mat = final.data
    cls = mat[:, 0, :]
    if aggregation == "cls":
        return cls
    mean = mat[:, 1:, :].mean(axis=1).astype(mat.dtype)
    if aggregation == "mean":
        return mean
    return np.concatenate([cls, mean], axis=1)


def _channel_matrix(series_list, channel: int) -> np.ndarray:
    rows = [s.channel(channel) for s in series_list]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ShapeError(f"channel {channel} has mixed lengths {sorted(lengths)}")
    return np.stack(rows)


def _se_channel_blocks(channel_rows, config, params, spec):
    """Ordered (name, block) list for one channel under self-ensembling."""
    se = spec.self_ensemble
    blocks = []
    for length in se.lengths:
        resized = linear_resize_array(channel_rows, length)
        blocks.append(
            ("raw", length, _batched_layer_embeddings(resized, config, params, spec.layer, spec.aggregation))
        )
    if se.include_first_difference:
        diff = first_difference(channel_rows)
        for length in se.lengths:
            resized = linear_resize_array(diff, length)
            blocks.append(
                ("diff", length, _batched_layer_embeddings(resized, config, params, spec.layer, spec.aggregation))
            )
    return blocks


def encode_matrix_from_params(
    series_list, config: EncoderConfig, params, checkpoint_hash, spec: ExtractionSpec
) -> EmbeddingMatrix:
    """Embed a list of TimeSeries into an EmbeddingMatrix (dataset order)."""
    series_list = [
        s if isinstance(s, TimeSeries) else TimeSeries(np.asarray(s)) for s in series_list
    ]
    if not series_list:
        raise ValueError("empty series list")
    d = series_list[0].n_channels
    if any(s.n_channels != d for s in series_list):
        raise ShapeError("all series must share the channel count")
    _validate_se_lengths(spec, config.tokenizer.num_tokens)
    channel_blocks = []
    with no_grad():
        for c in range(d):
            rows = _channel_matrix(series_list, c)
            if rows.shape[1] < 1:
                raise ValueError("zero-length channel")
            if spec.self_ensemble is None:
                resized = linear_resize_array(rows, spec.resize_length)
                channel_blocks.append(
                    _batched_layer_embeddings(resized, config, params, spec.layer, spec.aggregation)
                )
            else:
                blocks = _se_channel_blocks(rows, config, params, spec)
                channel_blocks.append(np.concatenate([b[2] for b in blocks], axis=1))
    values = np.concatenate(channel_blocks, axis=1).astype(np.float32)
    return EmbeddingMatrix(
        values=values,
        provenance={"checkpoint_hash": checkpoint_hash, "spec": spec.to_dict()},
    )


def encode_dataset(series_list, checkpoint, spec: ExtractionSpec) -> EmbeddingMatrix:
    return encode_matrix_from_params(
        series_list, checkpoint.config, checkpoint.params, checkpoint.content_hash(), spec
    )


def encode_series(series, checkpoint, spec: ExtractionSpec) -> np.ndarray:
    """One series -> concatenated per-channel embedding vector."""
    if spec.self_ensemble is not None:
        return self_ensemble_encode(series, checkpoint, spec)
    matrix = encode_dataset([_as_series(series)], checkpoint, spec)
    return matrix.values[0]


def self_ensemble_encode(series, checkpoint, spec: ExtractionSpec) -> np.ndarray:
    """Concat of per-length embeddings (raw ascending, then diff ascending),
    channels outermost."""
    if spec.self_ensemble is None:
        raise ConfigError("self_ensemble_encode requires spec.self_ensemble")
    matrix = encode_dataset([_as_series(series)], checkpoint, spec)
    return matrix.values[0]


def _as_series(series) -> TimeSeries:
    return series if isinstance(series, TimeSeries) else TimeSeries(np.asarray(series))


def fuse_embeddings(a: EmbeddingMatrix, b: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise concatenation, A block first; provenance records both parents."""
    if a.n_rows != b.n_rows:
        raise ShapeError(f"row mismatch: {a.n_rows} vs {b.n_rows}")
    return EmbeddingMatrix(
        values=np.concatenate([a.values, b.values], axis=1),
        provenance={"fusion": [a.provenance, b.provenance]},
    )


def receptive_field_fraction(kernel: int, resize_length: int, num_tokens: int) -> float:
    """(k + l/P - 1) / l: the input fraction one pooled conv token sees."""
    return (kernel + resize_length / num_tokens - 1.0) / resize_length


# -- persistence --------------------------------------------------------------------


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    manifest = {
        "kind": "embeddings",
        "n_rows": matrix.n_rows,
        "dim": matrix.dim,
        "provenance": matrix.provenance,
    }
    write_blob_file(path, manifest, matrix.values)


def load_embeddings(path) -> EmbeddingMatrix:
    manifest, blob = read_blob_file(path)
    if manifest.get("kind") != "embeddings":
        raise FileFormatError(f"{path}: not an embeddings file")
    n, dim = manifest["n_rows"], manifest["dim"]
    if blob.size != n * dim:
        raise FileFormatError(
            f"{path}: blob holds {blob.size} floats, expected {n * dim}"
        )
    return EmbeddingMatrix(
        values=blob.reshape(n, dim), provenance=manifest.get("provenance", {})
    )
