"""Contrastive pre-training: random-crop-resize views, projector, InfoNCE.

Each batch draws two independent crop augmentations per example, encodes
both views with the shared encoder, projects (layer norm + linear) and
minimizes the row-wise InfoNCE objective at temperature T. Training is
bit-reproducible under a fixed seed: batches are drawn without replacement
in a seed-shuffled order and the optimizer update is serialized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import classify
from .blobio import (
    bytes_sha256,
    canonical_json,
    read_blob_file,
    write_blob_file,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    encoder_param_schema,
    forward_batch,
    init_encoder_params,
)
from .errors import FileFormatError, NumericError, ShapeError
from .numcore import (
    AdamWState,
    Tensor,
    adamw_step,
    cross_entropy_rows,
    grad_of,
    linear_resize_array,
    no_grad,
    pow_const,
    tsum,
)
from .tokenizer import TokenizerConfig

COSINE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 64
    epochs: int = 20
    temperature: float = 0.1
    crop_max: float = 0.2
    projector_dim: int = 128
    lr: float = 2e-4
    weight_decay: float = 0.05
    tracking_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.crop_max < 1.0:
            raise ValueError(f"crop_max must be in [0, 1), got {self.crop_max}")


def projector_schema(q: int, projector_dim: int):
    return [
        ("projector.norm_gain", (q,)),
        ("projector.norm_shift", (q,)),
        ("projector.weight", (q, projector_dim)),
        ("projector.bias", (projector_dim,)),
    ]


def init_projector(q: int, projector_dim: int, seed: int = 0):
    from .encoder import _truncated_normal

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70726F]))
    tensors = {
        "projector.norm_gain": Tensor.param(np.ones(q, dtype=np.float32)),
        "projector.norm_shift": Tensor.param(np.zeros(q, dtype=np.float32)),
        "projector.weight": Tensor.param(_truncated_normal(rng, (q, projector_dim))),
        "projector.bias": Tensor.param(np.zeros(projector_dim, dtype=np.float32)),
    }
    return ProjectorParams(tensors=tensors)


@dataclass
class ProjectorParams:
    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def as_list(self):
        return [self.tensors[n] for n, _ in projector_schema(*self._dims())]

    def _dims(self):
        w = self.tensors["projector.weight"]
        return w.shape[0], w.shape[1]


def project(embeddings: Tensor, projector: ProjectorParams) -> Tensor:
    """Layer norm over q followed by a linear map q -> q'."""
    from .numcore import normalize

    normed = normalize(
        embeddings,
        "layer_norm",
        projector["projector.norm_gain"],
        projector["projector.norm_shift"],
    )
    return normed @ projector["projector.weight"] + projector["projector.bias"]


# -- augmentation -----------------------------------------------------------------


def rcr_augment(series: np.ndarray, rng, c_max: float) -> np.ndarray:
    """Crop a contiguous (1-c) fraction (c ~ U[0, c_max]) and resize back."""
    x = np.asarray(series)
    t = x.shape[-1]
    c = float(rng.uniform(0.0, c_max)) if c_max > 0 else 0.0
    crop_len = max(2, int(round((1.0 - c) * t)))
    if crop_len >= t:
        return x.copy()
    start = int(rng.integers(0, t - crop_len + 1))
    return linear_resize_array(x[..., start : start + crop_len], t)


# -- similarity / loss --------------------------------------------------------------


def cosine_similarity(a, b) -> float:
    """a.b / (|a| |b|); returns 0 when either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < COSINE_NORM_FLOOR or nb < COSINE_NORM_FLOOR:
        return 0.0
    return float(a @ b / (na * nb))


def _row_normalize(z: Tensor) -> Tensor:
    ss = tsum(z * z, axis=-1, keepdims=True)
    inv = pow_const(ss + Tensor.constant(np.asarray(COSINE_NORM_FLOOR**2, dtype=z.dtype)), -0.5)
    return z * inv


def similarity_matrix(view_a, view_b) -> Tensor:
    """(i, j) -> cosine similarity of projected view-A i and view-B j."""
    a = view_a if isinstance(view_a, Tensor) else Tensor.constant(view_a)
    b = view_b if isinstance(view_b, Tensor) else Tensor.constant(view_b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"batch mismatch: {a.shape[0]} vs {b.shape[0]}")
    an = _row_normalize(a)
    bn = _row_normalize(b)
    from .numcore.tensor import matmul, transpose

    return matmul(an, transpose(bn, (1, 0)))


def info_nce_loss(sim, temperature: float) -> Tensor:
    """Sum over rows i of cross_entropy(row_i / T, target=i)."""
    s = sim if isinstance(sim, Tensor) else Tensor.constant(sim)
    if s.data.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    b = s.shape[0]
    scaled = s * Tensor.constant(np.asarray(1.0 / temperature, dtype=s.dtype))
    return tsum(cross_entropy_rows(scaled, np.arange(b)))


# -- checkpoint -------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Encoder + projector weights plus training metadata."""

    config: EncoderConfig
    params: EncoderParams
    projector: ProjectorParams
    metadata: dict = field(default_factory=dict)

    def named_tensors(self):
        named = list(self.params.named())
        q, qp = self.projector._dims()
        named += [(n, self.projector[n]) for n, _ in projector_schema(q, qp)]
        return named

    def serialize(self) -> tuple[dict, np.ndarray]:
        table = []
        chunks = []
        offset = 0
        for name, tensor in self.named_tensors():
            data = np.ascontiguousarray(tensor.data, dtype=np.float32)
            table.append(
                {"name": name, "shape": list(data.shape), "offset": offset}
            )
            chunks.append(data.ravel())
            offset += data.size
        manifest = {
            "kind": "checkpoint",
            "encoder_config": encoder_config_to_dict(self.config),
            "projector_dim": self.projector._dims()[1],
            "tensors": table,
            "metadata": self.metadata,
        }
        blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)
        return manifest, blob

    def content_hash(self) -> str:
        manifest, blob = self.serialize()
        return bytes_sha256(canonical_json(manifest) + blob.astype("<f4").tobytes())


def encoder_config_to_dict(config: EncoderConfig) -> dict:
    tok = config.tokenizer
    return {
        "tokenizer": {
            "num_tokens": tok.num_tokens,
            "token_dim": tok.token_dim,
            "conv_kernel": tok.conv_kernel,
            "conv_channels": tok.conv_channels,
            "scalar_scales": list(tok.scalar_scales),
            "scalar_embed_dim": tok.scalar_embed_dim,
            "use_diff_branch": tok.use_diff_branch,
            "use_stats_branch": tok.use_stats_branch,
            "duplicate_signal_branch": tok.duplicate_signal_branch,
            "patch_embed": tok.patch_embed,
            "pooling": tok.pooling,
        },
        "num_layers": config.num_layers,
        "num_heads": config.num_heads,
        "head_dim": config.head_dim,
        "pos_encoding": config.pos_encoding,
        "norm": config.norm,
        "ffn": config.ffn,
        "ffn_hidden": config.ffn_hidden,
        "resize_length": config.resize_length,
        "final_norm": config.final_norm,
    }


def encoder_config_from_dict(d: dict) -> EncoderConfig:
    tok = dict(d["tokenizer"])
    tok["scalar_scales"] = tuple(tok["scalar_scales"])
    rest = {k: v for k, v in d.items() if k != "tokenizer"}
    return EncoderConfig(tokenizer=TokenizerConfig(**tok), **rest)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    manifest, blob = checkpoint.serialize()
    write_blob_file(path, manifest, blob)


def load_checkpoint(path) -> Checkpoint:
    manifest, blob = read_blob_file(path)
    if manifest.get("kind") != "checkpoint":
        raise FileFormatError(f"{path}: not a checkpoint file")
    config = encoder_config_from_dict(manifest["encoder_config"])
    expected = {name: shape for name, shape in encoder_param_schema(config)}
    expected.update(
        {
            name: shape
            for name, shape in projector_schema(config.q, manifest["projector_dim"])
        }
    )
    enc_tensors, proj_tensors = {}, {}
    seen = set()
    for entry in manifest["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in expected:
            raise FileFormatError(f"{path}: unexpected tensor {name!r}")
        if tuple(expected[name]) != shape:
            raise FileFormatError(
                f"{path}: tensor {name!r} has shape {shape}, expected {tuple(expected[name])}"
            )
        size = int(np.prod(shape))
        if offset + size > blob.size:
            raise FileFormatError(f"{path}: tensor {name!r} overruns the blob")
        data = blob[offset : offset + size].reshape(shape)
        target = proj_tensors if name.startswith("projector.") else enc_tensors
        target[name] = Tensor.param(data, name=name)
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise FileFormatError(f"{path}: missing tensors {sorted(missing)}")
    params = EncoderParams(tensors=enc_tensors, config=config)
    projector = ProjectorParams(tensors=proj_tensors)
    return Checkpoint(
        config=config,
        params=params,
        projector=projector,
        metadata=manifest.get("metadata", {}),
    )


# -- training loop ------------------------------------------------------------------


@dataclass
class MetricLog:
    """Per-epoch mean loss plus probe accuracies per (epoch, layer, dataset)."""

    losses: list = field(default_factory=list)  # (epoch, mean loss per example)
    probe_rows: list = field(default_factory=list)  # (epoch, layer, dataset, accuracy)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "layer", "probe_dataset", "accuracy"])
            for row in self.probe_rows:
                writer.writerow([row[0], row[1], row[2], f"{row[3]:.4f}"])

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            for epoch, loss in self.losses:
                writer.writerow([epoch, f"{loss:.6f}"])


def _probe_accuracies(config, params, probes, epoch, rows):
    from .extract import encode_matrix_from_params, ExtractionSpec

    for name, dataset in probes:
        for layer in range(1, config.num_layers + 1):
            spec = ExtractionSpec(layer=layer, aggregation="cls", resize_length=config.resize_length)
            with no_grad():
                train_x = encode_matrix_from_params(dataset.train_series, config, params, None, spec)
                test_x = encode_matrix_from_params(dataset.test_series, config, params, None, spec)
            scaler, xt = classify.scaler_fit_transform(train_x.values)
            model = classify.logreg_fit(
                xt, dataset.train_labels, classify.LogRegConfig(max_iter=50)
            )
            preds = classify.predict(model, classify.scaler_transform(scaler, test_x.values))[0]
            acc = float(np.mean(preds == dataset.test_labels))
            rows.append((epoch, layer, name, acc))


def pretrain(corpus, config: EncoderConfig, pre: PretrainConfig, probes=None):
    """Full contrastive pre-training; returns (Checkpoint, MetricLog).

    Probe tracking runs at epoch 0, every `tracking_every` epochs and after
    the final epoch, fitting a capped logistic regression per layer on cls
    embeddings.
    """
    series = np.asarray(corpus.series, dtype=np.float32)
    if series.size == 0:
        raise ValueError("empty corpus")
    if series.shape[1] != config.resize_length:
        series = linear_resize_array(series, config.resize_length)
    n, t = series.shape

    params = init_encoder_params(config, seed=pre.seed)
    projector = init_projector(config.q, pre.projector_dim, seed=pre.seed)
    trainable = params.as_list() + projector.as_list()
    opt = AdamWState.init(trainable, lr=pre.lr, weight_decay=pre.weight_decay)

    log = MetricLog()
    probes = probes or []
    if probes:
        _probe_accuracies(config, params, probes, 0, log.probe_rows)

    for epoch in range(1, pre.epochs + 1):
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([pre.seed, epoch, 0]))
        aug_rng = np.random.default_rng(np.random.SeedSequence([pre.seed, epoch, 1]))
        order = shuffle_rng.permutation(n)
        total_loss, total_examples = 0.0, 0
        for start in range(0, n, pre.batch_size):
            batch_idx = order[start : start + pre.batch_size]
            b = len(batch_idx)
            if b < 2:
                continue  # a single example has no negatives
            views = np.empty((2 * b, t), dtype=np.float32)
            for j, idx in enumerate(batch_idx):
                views[j] = rcr_augment(series[idx], aug_rng, pre.crop_max)
                views[b + j] = rcr_augment(series[idx], aug_rng, pre.crop_max)
            _, final = forward_batch(views, config, params)
            emb = final[:, 0, :] if final is not None else None
            if emb is None:
                raise NumericError("pre-training requires a final norm on the encoder")
            projected = project(emb, projector)
            sim = similarity_matrix(projected[0:b], projected[b : 2 * b])
            loss = info_nce_loss(sim, pre.temperature)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch start {start}"
                )
            grads = grad_of(loss, trainable)
            adamw_step(opt, trainable, grads)
            total_loss += loss_value
            total_examples += b
        log.losses.append((epoch, total_loss / max(total_examples, 1)))
        tracked = pre.tracking_every and epoch % pre.tracking_every == 0
        if probes and (tracked or epoch == pre.epochs):
            _probe_accuracies(config, params, probes, epoch, log.probe_rows)

    checkpoint = Checkpoint(
        config=config,
        params=params,
        projector=projector,
        metadata={
            "epoch": pre.epochs,
            "seed": pre.seed,
            "corpus_manifest_hash": corpus.manifest_hash(),
        },
    )
    return checkpoint, log
