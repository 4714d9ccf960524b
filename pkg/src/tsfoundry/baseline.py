"""Patched statistical features and an import hook for external feature sets.

Each channel is split into non-overlapping patches (boundaries round(i*L/P))
and contributes per-patch mean/std pairs, optionally followed by the global
mean/std. Canonical hand-crafted feature sets are not reimplemented here;
`merge_external_features` concatenates an externally computed CSV table
row-wise so composed baselines can be reproduced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SizeError
from .extract import EmbeddingMatrix
from .series import TimeSeries
from .tokenizer import patch_statistics


@dataclass(frozen=True)
class StatFeatureSpec:
    num_patches: int = 8
    include_global: bool = False
    external_feature_file: str | None = None

    def __post_init__(self):
        if self.num_patches < 1:
            raise ValueError(f"num_patches must be >= 1, got {self.num_patches}")

    def dim_per_channel(self) -> int:
        return 2 * self.num_patches + (2 if self.include_global else 0)


def stats_features(series: np.ndarray, spec: StatFeatureSpec) -> np.ndarray:
    """[mean_1, std_1, ..., mean_P, std_P] (+ [global mean, global std])."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"stats_features expects one channel, got shape {x.shape}")
    if x.shape[0] < spec.num_patches:
        raise SizeError(
            f"series length {x.shape[0]} < num_patches {spec.num_patches}"
        )
    means, stds = patch_statistics(x, spec.num_patches)
    out = np.empty(2 * spec.num_patches, dtype=np.float64)
    out[0::2] = means
    out[1::2] = stds
    if spec.include_global:
        out = np.concatenate([out, [x.mean(), x.std()]])
    return out.astype(np.float32)


def stats_feature_matrix(series_list, spec: StatFeatureSpec) -> EmbeddingMatrix:
    """Per-channel features concatenated channel-major, one row per series."""
    rows = []
    for s in series_list:
        ts = s if isinstance(s, TimeSeries) else TimeSeries(np.asarray(s))
        rows.append(
            np.concatenate([stats_features(ts.channel(c), spec) for c in range(ts.n_channels)])
        )
    return EmbeddingMatrix(
        values=np.stack(rows).astype(np.float32),
        provenance={"stats": {"num_patches": spec.num_patches, "include_global": spec.include_global}},
    )


def read_external_features(path) -> np.ndarray:
    """CSV with a header, one row per series in dataset order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ShapeError(f"{path}: empty feature file")
        rows = [[float(v) for v in row] for row in reader]
    if rows and any(len(r) != len(rows[0]) for r in rows):
        raise ShapeError(f"{path}: ragged feature rows")
    width = len(rows[0]) if rows else len([h for h in header if h])
    return np.asarray(rows, dtype=np.float32).reshape(len(rows), width if rows else 0)


def merge_external_features(stats: EmbeddingMatrix, external_file) -> EmbeddingMatrix:
    """Row-wise concat of the stats matrix with an external feature table."""
    external = read_external_features(external_file)
    if external.shape[0] != stats.n_rows:
        raise ShapeError(
            f"external table has {external.shape[0]} rows, expected {stats.n_rows}"
        )
    return EmbeddingMatrix(
        values=np.concatenate([stats.values, external], axis=1),
        provenance={**stats.provenance, "external": str(external_file)},
    )
