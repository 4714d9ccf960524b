"""Synthetic pre-training corpus from Gaussian-process kernel composition.

Series are drawn from random kernel trees (sums/products of RBF, periodic,
linear, rational-quadratic and white-noise leaves) on the unit grid; a
configurable fraction of the corpus mixes several fresh GP draws through
random nonlinear links plus observation noise. Per-series RNG streams are
derived from (seed, index) so generation order is irrelevant and the corpus
is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blobio import bytes_sha256, canonical_json, read_blob_file, write_blob_file
from .errors import FileFormatError, GenerationError

LEAF_KINDS = ("RBF", "Periodic", "Linear", "RationalQuadratic", "WhiteNoise")
INTERNAL_KINDS = ("Sum", "Product")
BRANCH_PROB = 0.3

# log-uniform hyperparameter ranges
LENGTHSCALE_RANGE = (0.05, 0.5)
PERIOD_RANGE = (0.1, 0.5)
VARIANCE_RANGE = (0.5, 2.0)
ALPHA_RANGE = (0.5, 5.0)

MIX_NOISE_STD = 0.1
_JITTER = 1e-6


@dataclass
class KernelSpec:
    """Node of a kernel composition tree."""

    kind: str
    lengthscale: float = 1.0
    period: float = 1.0
    variance: float = 1.0
    alpha: float = 1.0
    children: list = field(default_factory=list)

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth() for c in self.children)


def _log_uniform(rng, lo, hi) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_kernel_tree(rng, max_depth: int = 3) -> KernelSpec:
    """Random tree: leaves uniform over the five kinds, internal nodes
    Sum/Product with probability 0.3 of expanding at each level."""
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")

    def build(depth):
        if depth < max_depth and rng.uniform() < BRANCH_PROB:
            kind = INTERNAL_KINDS[rng.integers(0, len(INTERNAL_KINDS))]
            return KernelSpec(kind=kind, children=[build(depth + 1), build(depth + 1)])
        kind = LEAF_KINDS[rng.integers(0, len(LEAF_KINDS))]
        return KernelSpec(
            kind=kind,
            lengthscale=_log_uniform(rng, *LENGTHSCALE_RANGE),
            period=_log_uniform(rng, *PERIOD_RANGE),
            variance=_log_uniform(rng, *VARIANCE_RANGE),
            alpha=_log_uniform(rng, *ALPHA_RANGE),
        )

    return build(1)


def kernel_matrix(spec: KernelSpec, points: np.ndarray) -> np.ndarray:
    """Covariance of `spec` on a 1-D grid of points."""
    x = np.asarray(points, dtype=np.float64)
    d = x[:, None] - x[None, :]
    if spec.kind == "RBF":
        return spec.variance * np.exp(-(d * d) / (2.0 * spec.lengthscale**2))
    if spec.kind == "Periodic":
        s = np.sin(np.pi * np.abs(d) / spec.period)
        return spec.variance * np.exp(-2.0 * (s * s) / spec.lengthscale**2)
    if spec.kind == "Linear":
        return spec.variance * np.outer(x, x)
    if spec.kind == "RationalQuadratic":
        return spec.variance * (
            1.0 + (d * d) / (2.0 * spec.alpha * spec.lengthscale**2)
        ) ** (-spec.alpha)
    if spec.kind == "WhiteNoise":
        return spec.variance * np.eye(len(x))
    if spec.kind == "Sum":
        return sum(kernel_matrix(c, x) for c in spec.children)
    if spec.kind == "Product":
        out = np.ones((len(x), len(x)))
        for c in spec.children:
            out = out * kernel_matrix(c, x)
        return out
    raise ValueError(f"unknown kernel kind {spec.kind!r}")


def gp_sample(spec: KernelSpec, length: int, rng, points=None) -> np.ndarray:
    """One prior draw on the unit grid {0, 1/(L-1), ..., 1} (float64).

    Jitter 1e-6 is added to the diagonal before Cholesky; on failure the
    jitter escalates x10 up to 3 retries, then GenerationError.
    """
    if points is None:
        points = np.linspace(0.0, 1.0, length)
    cov = kernel_matrix(spec, points)
    jitter = _JITTER
    chol = None
    for _ in range(4):  # initial attempt + 3 escalations
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(points)))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    if chol is None:
        raise GenerationError(
            f"Cholesky failed for kernel {spec.kind} after jitter escalation to {jitter:g}"
        )
    u = rng.standard_normal(len(points))
    return chol @ u


_MIX_LINKS = (lambda s: s, np.tanh, np.square)


def causal_mix(parents, rng) -> np.ndarray:
    """child = sum_i w_i * f_i(parent_i) + 0.1 * noise.

    Links f_i are drawn from {identity, tanh, square}, weights from N(0,1).
    """
    if len(parents) == 0:
        raise ValueError("causal_mix needs at least one parent series")
    length = len(parents[0])
    child = np.zeros(length, dtype=np.float64)
    for parent in parents:
        link = _MIX_LINKS[rng.integers(0, len(_MIX_LINKS))]
        w = rng.standard_normal()
        child += w * link(np.asarray(parent, dtype=np.float64))
    child += MIX_NOISE_STD * rng.standard_normal(length)
    return child


@dataclass
class SyntheticCorpus:
    count: int
    length: int
    seed: int
    mix_fraction: float
    series: np.ndarray  # (count, length) float32
    mix_flags: np.ndarray  # (count,) bool

    def manifest(self) -> dict:
        return {
            "kind": "corpus",
            "count": self.count,
            "length": self.length,
            "seed": self.seed,
            "mix_fraction": self.mix_fraction,
            "mix_flags": self.mix_flags.astype(int).tolist(),
            "version": 1,
        }

    def manifest_hash(self) -> str:
        return bytes_sha256(canonical_json(self.manifest()))


def _series_rng(seed: int, index: int):
    # (seed, index) keyed stream: order-independent, reproducible
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _generate_one(seed, index, length, mix_fraction, max_depth=3):
    rng = _series_rng(seed, index)
    is_mix = bool(rng.uniform() < mix_fraction)
    if is_mix:
        n_parents = int(rng.integers(1, 4))
        parents = [
            gp_sample(sample_kernel_tree(rng, max_depth), length, rng)
            for _ in range(n_parents)
        ]
        values = causal_mix(parents, rng)
    else:
        values = gp_sample(sample_kernel_tree(rng, max_depth), length, rng)
    return values.astype(np.float32), is_mix


def generate_corpus(
    count: int, length: int = 512, seed: int = 0, mix_fraction: float = 0.25
) -> SyntheticCorpus:
    """Corpus of pure GP draws plus a `mix_fraction` share of causal mixes."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    series = np.empty((count, length), dtype=np.float32)
    flags = np.zeros(count, dtype=bool)
    for i in range(count):
        series[i], flags[i] = _generate_one(seed, i, length, mix_fraction)
    return SyntheticCorpus(
        count=count,
        length=length,
        seed=seed,
        mix_fraction=mix_fraction,
        series=series,
        mix_flags=flags,
    )


def save_corpus(corpus: SyntheticCorpus, path) -> None:
    write_blob_file(path, corpus.manifest(), corpus.series)


def load_corpus(path) -> SyntheticCorpus:
    manifest, blob = read_blob_file(path)
    if manifest.get("kind") != "corpus":
        raise FileFormatError(f"{path}: not a corpus file")
    count, length = manifest["count"], manifest["length"]
    if blob.size != count * length:
        raise FileFormatError(
            f"{path}: blob holds {blob.size} floats, expected {count * length}"
        )
    return SyntheticCorpus(
        count=count,
        length=length,
        seed=manifest["seed"],
        mix_fraction=manifest["mix_fraction"],
        series=blob.reshape(count, length),
        mix_flags=np.asarray(manifest["mix_flags"], dtype=bool),
    )
