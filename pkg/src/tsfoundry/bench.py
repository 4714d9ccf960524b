"""Dataset I/O, experiment runners and report emission.

Datasets are self-describing directories: meta.json with
{n_channels, length, classes} plus train.tsv / test.tsv where each row is
a class-name label followed by n_channels * length values, channel-major,
tab-separated. Every runner is a pure function of (dataset bytes,
checkpoint bytes, config, seeds) and reports are byte-reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import classify
from .encoder import truncate
from .errors import DatasetParseError, ShapeError
from .extract import (
    EmbeddingMatrix,
    ExtractionSpec,
    SelfEnsembleSpec,
    encode_dataset,
    fuse_embeddings,
)
from .series import TimeSeries


@dataclass
class LabeledDataset:
    name: str
    n_channels: int
    length: int
    classes: list
    train_series: list  # list[TimeSeries]
    train_labels: np.ndarray
    test_series: list
    test_labels: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def validate(self):
        if self.n_classes < 2:
            raise DatasetParseError(f"{self.name}: needs >= 2 classes")
        if not self.train_series or not self.test_series:
            raise DatasetParseError(f"{self.name}: both splits must be nonempty")
        for split, labels in (("train", self.train_labels), ("test", self.test_labels)):
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise DatasetParseError(f"{self.name}: {split} labels out of range")
        return self


def _parse_split(path, n_channels, length, class_index):
    series, labels = [], []
    expected = n_channels * length
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            label = fields[0]
            if label not in class_index:
                raise DatasetParseError(
                    f"{path}:{lineno}: unknown label {label!r}"
                )
            if len(fields) - 1 != expected:
                raise DatasetParseError(
                    f"{path}:{lineno}: expected {expected} values, got {len(fields) - 1}"
                )
            try:
                values = np.asarray([float(v) for v in fields[1:]], dtype=np.float32)
            except ValueError as exc:
                raise DatasetParseError(
                    f"{path}:{lineno}: non-numeric value ({exc})"
                ) from exc
            series.append(TimeSeries(values.reshape(n_channels, length)))
            labels.append(class_index[label])
    return series, np.asarray(labels, dtype=np.int64)


def load_dataset(directory) -> LabeledDataset:
    """Read meta.json + train.tsv/test.tsv; labels map through the class table."""
    meta_path = os.path.join(directory, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetParseError(f"{meta_path}: {exc}") from exc
    classes = list(meta["classes"])
    class_index = {name: i for i, name in enumerate(classes)}
    n_channels, length = int(meta["n_channels"]), int(meta["length"])
    train_series, train_labels = _parse_split(
        os.path.join(directory, "train.tsv"), n_channels, length, class_index
    )
    test_series, test_labels = _parse_split(
        os.path.join(directory, "test.tsv"), n_channels, length, class_index
    )
    return LabeledDataset(
        name=meta.get("name", os.path.basename(os.path.normpath(directory))),
        n_channels=n_channels,
        length=length,
        classes=classes,
        train_series=train_series,
        train_labels=train_labels,
        test_series=test_series,
        test_labels=test_labels,
    ).validate()


def write_dataset(dataset: LabeledDataset, directory) -> None:
    """Inverse of load_dataset; float32 values round-trip bit-exactly."""
    os.makedirs(directory, exist_ok=True)
    meta = {
        "name": dataset.name,
        "n_channels": dataset.n_channels,
        "length": dataset.length,
        "classes": list(dataset.classes),
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    for split, series, labels in (
        ("train", dataset.train_series, dataset.train_labels),
        ("test", dataset.test_series, dataset.test_labels),
    ):
        with open(os.path.join(directory, f"{split}.tsv"), "w") as fh:
            for s, y in zip(series, labels):
                values = s.values.reshape(-1)
                row = [dataset.classes[int(y)]] + [repr(float(v)) for v in values]
                fh.write("\t".join(row) + "\n")


# -- demo dataset -------------------------------------------------------------------


def make_sine_square_dataset(
    n_train: int = 100, n_test: int = 100, length: int = 256, seed: int = 0,
    noise: float = 0.3,
) -> LabeledDataset:
    """Noisy sines vs noisy square waves, univariate, balanced splits."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x77617665]))

    def draw(n):
        series, labels = [], []
        t = np.linspace(0.0, 1.0, length)
        for i in range(n):
            label = i % 2
            freq = rng.uniform(2.0, 6.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            amp = rng.uniform(0.8, 1.2)
            base = np.sin(2 * np.pi * freq * t + phase)
            if label == 1:
                base = np.sign(base)
            x = amp * base + noise * rng.standard_normal(length)
            series.append(TimeSeries(x.astype(np.float32)))
            labels.append(label)
        return series, np.asarray(labels, dtype=np.int64)

    train_series, train_labels = draw(n_train)
    test_series, test_labels = draw(n_test)
    return LabeledDataset(
        name="sine-vs-square",
        n_channels=1,
        length=length,
        classes=["sine", "square"],
        train_series=train_series,
        train_labels=train_labels,
        test_series=test_series,
        test_labels=test_labels,
    ).validate()


# -- runners -----------------------------------------------------------------------


@dataclass
class ExperimentResult:
    dataset: str
    pipeline: str
    seeds: list
    accuracies: list
    embedding_dim: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "pipeline": self.pipeline,
            "seeds": list(self.seeds),
            "accuracies": [float(a) for a in self.accuracies],
            "mean": self.mean,
            "std": self.std,
            "embedding_dim": self.embedding_dim,
        }


def _accuracy(predictions, labels) -> float:
    return float(np.sum(predictions == labels)) / len(labels)


def evaluate_embeddings(
    train: EmbeddingMatrix, test: EmbeddingMatrix, dataset: LabeledDataset,
    classifier: str, seeds,
):
    """Fit the chosen classifier on train embeddings, score on test."""
    accs = []
    if classifier == "scaler+logreg":
        scaler, xt = classify.scaler_fit_transform(train.values)
        model = classify.logreg_fit(xt, dataset.train_labels)
        preds = classify.predict(model, classify.scaler_transform(scaler, test.values))[0]
        acc = _accuracy(preds, dataset.test_labels)
        accs = [acc for _ in seeds] if seeds else [acc]
    elif classifier == "rf":
        for seed in seeds or [0]:
            model = classify.forest_fit(train.values, dataset.train_labels, seed=seed)
            preds = classify.predict(model, test.values)[0]
            accs.append(_accuracy(preds, dataset.test_labels))
    else:
        raise ValueError(f"classifier must be 'rf' or 'scaler+logreg', got {classifier!r}")
    return accs


def _pipeline_name(checkpoint, spec: ExtractionSpec, classifier: str) -> str:
    se = ""
    if spec.self_ensemble is not None:
        se = f",se={list(spec.self_ensemble.lengths)}"
        if spec.self_ensemble.include_first_difference:
            se += "+diff"
    return (
        f"ckpt={checkpoint.content_hash()[:8]},layer={spec.layer},"
        f"agg={spec.aggregation}{se},clf={classifier}"
    )


def run_zero_shot(
    dataset: LabeledDataset, checkpoint, spec: ExtractionSpec, classifier: str,
    seeds=(0, 1, 2),
) -> ExperimentResult:
    """Extract embeddings once, fit the classifier per seed, report mean/std."""
    train = encode_dataset(dataset.train_series, checkpoint, spec)
    test = encode_dataset(dataset.test_series, checkpoint, spec)
    seeds = list(seeds)
    accs = evaluate_embeddings(train, test, dataset, classifier, seeds)
    return ExperimentResult(
        dataset=dataset.name,
        pipeline=_pipeline_name(checkpoint, spec, classifier),
        seeds=seeds,
        accuracies=accs,
        embedding_dim=train.dim,
    )


def run_layer_ablation(
    dataset: LabeledDataset, checkpoint, classifier: str = "scaler+logreg",
    aggregation: str = "cls", seeds=(0, 1, 2),
):
    """Zero-shot accuracy per transformer layer; num_layers rows."""
    rows = []
    for layer in range(1, checkpoint.config.num_layers + 1):
        spec = ExtractionSpec(
            layer=layer, aggregation=aggregation,
            resize_length=checkpoint.config.resize_length,
        )
        result = run_zero_shot(dataset, checkpoint, spec, classifier, seeds)
        rows.append((layer, result))
    return rows


def run_aggregation_ablation(
    dataset: LabeledDataset, checkpoint, layer: int, classifier: str = "scaler+logreg",
    seeds=(0, 1, 2),
):
    """cls / mean / cls_mean_concat at a fixed layer; 3 rows."""
    rows = []
    for aggregation in ("cls", "mean", "cls_mean_concat"):
        spec = ExtractionSpec(
            layer=layer, aggregation=aggregation,
            resize_length=checkpoint.config.resize_length,
        )
        result = run_zero_shot(dataset, checkpoint, spec, classifier, seeds)
        rows.append((aggregation, result))
    return rows


def run_se_ablation(
    dataset: LabeledDataset, checkpoint, layer: int | None = None,
    classifier: str = "scaler+logreg", seeds=(0, 1, 2),
    lengths=(128, 256, 512, 1024),
):
    """The four self-ensembling variants:

    (a) single fixed-length encode, (b) multi-length raw, (c) multi-length
    first difference, (d) concat of (b) and (c). Returns variant -> result
    plus the embedding matrices for block-equality audits.
    """
    layer = layer or checkpoint.config.num_layers
    base = ExtractionSpec(
        layer=layer, aggregation="cls_mean_concat",
        resize_length=checkpoint.config.resize_length,
    )
    spec_b = replace(base, self_ensemble=SelfEnsembleSpec(tuple(lengths), False))
    spec_d = replace(base, self_ensemble=SelfEnsembleSpec(tuple(lengths), True))

    def diff_dataset(ds):
        from .tokenizer import first_difference

        def conv(series_list):
            return [TimeSeries(first_difference(s.values)) for s in series_list]

        return replace_dataset_series(ds, conv(ds.train_series), conv(ds.test_series))

    matrices = {}
    for split, series in (("train", dataset.train_series), ("test", dataset.test_series)):
        matrices[("a", split)] = encode_dataset(series, checkpoint, base)
        matrices[("b", split)] = encode_dataset(series, checkpoint, spec_b)
        matrices[("d", split)] = encode_dataset(series, checkpoint, spec_d)
    dds = diff_dataset(dataset)
    for split, series in (("train", dds.train_series), ("test", dds.test_series)):
        matrices[("c", split)] = encode_dataset(series, checkpoint, spec_b)

    results = {}
    for variant in ("a", "b", "c", "d"):
        train, test = matrices[(variant, "train")], matrices[(variant, "test")]
        accs = evaluate_embeddings(train, test, dataset, classifier, list(seeds))
        results[variant] = ExperimentResult(
            dataset=dataset.name,
            pipeline=f"se-variant-{variant},layer={layer},clf={classifier}",
            seeds=list(seeds),
            accuracies=accs,
            embedding_dim=train.dim,
        )
    return results, matrices


def replace_dataset_series(dataset: LabeledDataset, train_series, test_series):
    return LabeledDataset(
        name=dataset.name,
        n_channels=dataset.n_channels,
        length=dataset.length,
        classes=dataset.classes,
        train_series=train_series,
        train_labels=dataset.train_labels,
        test_series=test_series,
        test_labels=dataset.test_labels,
    )


def run_fusion(dataset: LabeledDataset, train_a, test_a, train_b, test_b,
               classifier: str = "scaler+logreg", seeds=(0, 1, 2)) -> ExperimentResult:
    """Zero-shot evaluation of row-wise fused embedding matrices."""
    train = fuse_embeddings(train_a, train_b)
    test = fuse_embeddings(test_a, test_b)
    accs = evaluate_embeddings(train, test, dataset, classifier, list(seeds))
    return ExperimentResult(
        dataset=dataset.name,
        pipeline=f"fusion,clf={classifier}",
        seeds=list(seeds),
        accuracies=accs,
        embedding_dim=train.dim,
    )


def run_truncated_consistency(dataset, checkpoint, keep_layers, classifier="scaler+logreg"):
    """Layer ablation on a truncated model; rows must match the full model's
    prefix (used by the acceptance suite)."""
    from .pretrain import Checkpoint

    params, config = truncate(checkpoint.params, checkpoint.config, keep_layers)
    trunc = Checkpoint(
        config=config, params=params, projector=checkpoint.projector,
        metadata=checkpoint.metadata,
    )
    return run_layer_ablation(dataset, trunc, classifier)


# -- reports -----------------------------------------------------------------------


def emit_report(results, fmt: str, path) -> None:
    """Deterministic CSV or markdown report, 4-decimal mean/std."""
    ordered = sorted(results, key=lambda r: (r.dataset, r.pipeline))
    if fmt == "csv":
        lines = ["dataset,pipeline,n_seeds,mean_accuracy,std_accuracy,accuracies"]
        for r in ordered:
            accs = ";".join(f"{a:.4f}" for a in r.accuracies)
            lines.append(
                f"{r.dataset},{r.pipeline},{len(r.seeds)},{r.mean:.4f},{r.std:.4f},{accs}"
            )
    elif fmt == "markdown":
        pipelines = sorted({r.pipeline for r in ordered})
        by_key = {(r.dataset, r.pipeline): r for r in ordered}
        datasets = sorted({r.dataset for r in ordered})
        header = "| dataset | n | " + " | ".join(pipelines) + " |"
        sep = "|" + "---|" * (2 + len(pipelines))
        lines = [header, sep]
        for ds in datasets:
            cells = []
            for p in pipelines:
                r = by_key.get((ds, p))
                cells.append(f"{r.mean:.4f}±{r.std:.4f}" if r else "-")
            n_seeds = max(
                (len(by_key[(ds, p)].seeds) for p in pipelines if (ds, p) in by_key),
                default=0,
            )
            lines.append(f"| {ds} | {n_seeds} | " + " | ".join(cells) + " |")
    else:
        raise ValueError(f"format must be 'csv' or 'markdown', got {fmt!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_curve_csv(rows, path) -> None:
    """Plot-ready (epoch, layer, accuracy) CSV for layer/epoch curves."""
    with open(path, "w") as fh:
        fh.write("epoch,layer,accuracy\n")
        for epoch, layer, acc in rows:
            fh.write(f"{epoch},{layer},{acc:.4f}\n")
