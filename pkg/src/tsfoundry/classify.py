"""Downstream heads: standard scaler + multinomial logistic regression,
a random forest, and full-model fine-tuning with a layer-norm + linear head.

The logistic regression is a deterministic full-batch gradient descent with
Armijo backtracking, an L2 penalty of 1/(2n) * |W|^2 on the mean loss
(weights only, matching the usual library default at strength 1.0), an
iteration cap of 500 and gradient tolerance 1e-5. The forest grows 200
unlimited-depth Gini trees on bootstrap samples with sqrt(features)
candidate features per node; when no candidate yields a valid split the
search extends over the remaining features so consistent data always
reaches pure leaves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .blobio import read_blob_file, write_blob_file
from .errors import DegenerateLabelsError, FileFormatError, ShapeError

SCALER_STD_FLOOR = 1e-8


# -- standard scaler -------------------------------------------------------------


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray  # floored at 1e-8; constant features transform to 0


def scaler_fit_transform(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    params = ScalerParams(mean=mean, std=np.maximum(std, SCALER_STD_FLOOR))
    return params, scaler_transform(params, x)


def scaler_transform(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params.mean.shape[0]:
        raise ShapeError(
            f"feature dim {x.shape[1]} != scaler dim {params.mean.shape[0]}"
        )
    return (x - params.mean) / params.std


# -- logistic regression ----------------------------------------------------------


@dataclass(frozen=True)
class LogRegConfig:
    max_iter: int = 500
    tol: float = 1e-5
    l2: float | None = None  # None -> 1/n
    armijo_c: float = 1e-4


@dataclass
class LogRegModel:
    weights: np.ndarray  # (features, K)
    bias: np.ndarray  # (K,)
    config: LogRegConfig
    n_iter: int = 0
    objective_history: list = field(default_factory=list)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logreg_objective(x, onehot, w, b, l2):
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits).sum(axis=1))
    ce = lse - (logits * onehot).sum(axis=1)
    return float(ce.mean() + 0.5 * l2 * np.sum(w * w))


def logreg_fit(x: np.ndarray, y: np.ndarray, config: LogRegConfig = LogRegConfig()):
    """Deterministic multinomial fit; objective is non-increasing over
    accepted line-search steps (asserted)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, f = x.shape
    k = int(y.max()) + 1 if y.size else 0
    if k < 2:
        raise DegenerateLabelsError(f"need >= 2 classes, got {k}")
    l2 = config.l2 if config.l2 is not None else 1.0 / n
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((f, k))
    b = np.zeros(k)
    obj = _logreg_objective(x, onehot, w, b, l2)
    history = [obj]
    step = 1.0
    it = 0
    for it in range(1, config.max_iter + 1):
        probs = _softmax(x @ w + b)
        diff = (probs - onehot) / n
        gw = x.T @ diff + l2 * w
        gb = diff.sum(axis=0)
        gnorm_sq = float(np.sum(gw * gw) + np.sum(gb * gb))
        if np.sqrt(gnorm_sq) <= config.tol:
            break
        alpha = min(step * 2.0, 1e6)
        accepted = False
        for _ in range(60):
            w_new = w - alpha * gw
            b_new = b - alpha * gb
            obj_new = _logreg_objective(x, onehot, w_new, b_new, l2)
            if obj_new <= obj - config.armijo_c * alpha * gnorm_sq:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break  # no descent step left at float precision
        assert obj_new <= obj + 1e-12, "line search accepted an ascent step"
        w, b, obj, step = w_new, b_new, obj_new, alpha
        history.append(obj)
    return LogRegModel(weights=w, bias=b, config=config, n_iter=it, objective_history=history)


# -- random forest ----------------------------------------------------------------


@dataclass
class TreeNodes:
    """Flat tree: internal nodes carry (feature, threshold, children);
    leaves carry class counts and children -1."""

    feature: np.ndarray  # (nodes,) int32, -1 for leaves
    threshold: np.ndarray  # (nodes,) float32
    left: np.ndarray  # (nodes,) int32
    right: np.ndarray  # (nodes,) int32
    counts: np.ndarray  # (nodes, K) int32


@dataclass
class ForestModel:
    trees: list
    n_classes: int
    seed: int
    n_trees: int


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float(np.sum(p * p))


def _best_split_on_feature(xf: np.ndarray, y: np.ndarray, k: int):
    """Weighted-Gini cost and threshold of the best cut, or (inf, None).

    Minimizing nl*gini_l + nr*gini_r is equivalent to maximizing
    sum(lc^2)/nl + sum(rc^2)/nr over left/right class counts.
    """
    order = np.argsort(xf, kind="stable")
    xs, ys = xf[order], y[order]
    n = len(ys)
    valid = xs[:-1] != xs[1:]
    if not valid.any():
        return np.inf, None
    onehot = np.zeros((n, k))
    onehot[np.arange(n), ys] = 1.0
    lc = np.cumsum(onehot, axis=0)[:-1]
    total = lc[-1] + onehot[-1]
    rc = total - lc
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    score = (lc * lc).sum(axis=1) / nl + (rc * rc).sum(axis=1) / nr
    score[~valid] = -np.inf
    i = int(np.argmax(score))
    return n - score[i], 0.5 * (xs[i] + xs[i + 1])


def _grow_tree(x: np.ndarray, y: np.ndarray, k: int, rng):
    n_features = x.shape[1]
    n_candidates = max(1, int(np.sqrt(n_features)))
    feature = [0]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    counts = [np.bincount(y, minlength=k)]
    feature[0] = -1
    stack = [(0, np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        node_counts = np.bincount(y[idx], minlength=k)
        counts[node] = node_counts
        if _gini(node_counts) == 0.0 or len(idx) < 2:
            continue
        # sqrt(F) random candidates first; if none yields a separating cut,
        # extend over the remaining features so impure nodes keep splitting
        # (zero-gain cuts are allowed: splitting on size guarantees progress)
        candidate_order = rng.permutation(n_features)
        best = (np.inf, None, None)
        for rank, f in enumerate(candidate_order):
            if rank >= n_candidates and best[1] is not None:
                break
            cost, thr = _best_split_on_feature(x[idx, f], y[idx], k)
            if thr is not None and cost < best[0]:
                best = (cost, f, thr)
        cost, f, thr = best
        if f is None:
            continue  # every feature is constant within the node
        mask = x[idx, f] < thr
        li = idx[mask]
        ri = idx[~mask]
        for child_idx in (li, ri):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append(np.bincount(y[child_idx], minlength=k))
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = len(feature) - 2
        right[node] = len(feature) - 1
        stack.append((left[node], li))
        stack.append((right[node], ri))
    return TreeNodes(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        counts=np.asarray(counts, dtype=np.int32),
    )


def forest_fit(x: np.ndarray, y: np.ndarray, n_trees: int = 200, seed: int = 0):
    """Bootstrap + Gini forest, deterministic per (data, seed)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.size == 0 or len(y) == 0:
        raise ValueError("empty training data")
    k = int(y.max()) + 1
    trees = []
    n = len(y)
    for t in range(n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        boot = rng.integers(0, n, n)
        trees.append(_grow_tree(x[boot], y[boot], k, rng))
    return ForestModel(trees=trees, n_classes=k, seed=seed, n_trees=n_trees)


def _tree_votes(tree: TreeNodes, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        cur = node[active]
        is_leaf = tree.feature[cur] < 0
        active = active[~is_leaf]
        if not active.size:
            break
        cur = node[active]
        goes_left = x[active, tree.feature[cur]] < tree.threshold[cur]
        node[active] = np.where(goes_left, tree.left[cur], tree.right[cur])
    leaf_counts = tree.counts[node]
    return np.argmax(leaf_counts, axis=1)  # argmax ties at lowest class index


def predict(model, x: np.ndarray):
    """Labels plus per-class scores (probabilities / vote fractions).

    Ties break toward the lowest class index.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(model, LogRegModel):
        if x.shape[1] != model.weights.shape[0]:
            raise ShapeError(
                f"feature dim {x.shape[1]} != model dim {model.weights.shape[0]}"
            )
        probs = _softmax(x @ model.weights + model.bias)
        return np.argmax(probs, axis=1), probs
    if isinstance(model, ForestModel):
        votes = np.zeros((x.shape[0], model.n_classes))
        for tree in model.trees:
            picked = _tree_votes(tree, x)
            votes[np.arange(x.shape[0]), picked] += 1.0
        fractions = votes / model.n_trees
        return np.argmax(fractions, axis=1), fractions
    raise TypeError(f"unsupported model type {type(model).__name__}")


# -- model export -----------------------------------------------------------------


def save_logreg(model: LogRegModel, scaler: ScalerParams | None, path) -> None:
    payload = {
        "kind": "logreg",
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "n_iter": model.n_iter,
    }
    if scaler is not None:
        payload["scaler_mean"] = scaler.mean.tolist()
        payload["scaler_std"] = scaler.std.tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_logreg(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "logreg":
        raise FileFormatError(f"{path}: not a logistic-regression export")
    model = LogRegModel(
        weights=np.asarray(payload["weights"], dtype=np.float64),
        bias=np.asarray(payload["bias"], dtype=np.float64),
        config=LogRegConfig(),
        n_iter=payload.get("n_iter", 0),
    )
    scaler = None
    if "scaler_mean" in payload:
        scaler = ScalerParams(
            mean=np.asarray(payload["scaler_mean"], dtype=np.float64),
            std=np.asarray(payload["scaler_std"], dtype=np.float64),
        )
    return model, scaler


def save_forest(model: ForestModel, path) -> None:
    """Compact binary export: per-tree node tables in one blob."""
    table = []
    chunks = []
    offset = 0
    for tree in model.trees:
        n_nodes = len(tree.feature)
        flat = np.concatenate(
            [
                tree.feature.astype(np.float32),
                tree.threshold.astype(np.float32),
                tree.left.astype(np.float32),
                tree.right.astype(np.float32),
                tree.counts.astype(np.float32).ravel(),
            ]
        )
        table.append({"nodes": n_nodes, "offset": offset})
        chunks.append(flat)
        offset += flat.size
    manifest = {
        "kind": "forest",
        "n_classes": model.n_classes,
        "n_trees": model.n_trees,
        "seed": model.seed,
        "trees": table,
    }
    write_blob_file(path, manifest, np.concatenate(chunks))


def load_forest(path) -> ForestModel:
    manifest, blob = read_blob_file(path)
    if manifest.get("kind") != "forest":
        raise FileFormatError(f"{path}: not a forest export")
    k = manifest["n_classes"]
    trees = []
    for entry in manifest["trees"]:
        n_nodes, offset = entry["nodes"], entry["offset"]
        span = 4 * n_nodes + n_nodes * k
        flat = blob[offset : offset + span]
        if flat.size != span:
            raise FileFormatError(f"{path}: truncated tree table")
        f, t, l, r = (flat[i * n_nodes : (i + 1) * n_nodes] for i in range(4))
        counts = flat[4 * n_nodes :].reshape(n_nodes, k)
        trees.append(
            TreeNodes(
                feature=f.astype(np.int32),
                threshold=t.astype(np.float32),
                left=l.astype(np.int32),
                right=r.astype(np.int32),
                counts=counts.astype(np.int32),
            )
        )
    return ForestModel(
        trees=trees, n_classes=k, seed=manifest["seed"], n_trees=manifest["n_trees"]
    )


# -- fine-tuning --------------------------------------------------------------------


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 500
    batch_size: int = 128
    lr: float = 2e-4
    weight_decay: float = 0.05
    aggregation: str = "cls"
    freeze_encoder: bool = False
    seed: int = 0


@dataclass
class FinetuneResult:
    checkpoint: "Checkpoint"
    head: dict  # norm_gain, norm_shift, weight, bias tensors
    log: list  # (epoch, train_loss, test_accuracy)


def _head_embedding(final_states, states, aggregation, config):
    """Differentiable batched read of the last layer."""
    from .numcore import concat as tconcat
    from .numcore import tmean

    mat = final_states if final_states is not None else states[-1]
    cls = mat[:, 0, :]
    if aggregation == "cls":
        return cls
    mean = tmean(mat[:, 1:, :], axis=1)
    if aggregation == "mean":
        return mean
    return tconcat([cls, mean], axis=1)


def finetune(checkpoint, dataset, config: FinetuneConfig = FinetuneConfig()):
    """Append a layer-norm + linear head and train with AdamW.

    All encoder layers are trainable unless freeze_encoder is set; the
    last-epoch model is reported. Works on truncated models and all
    aggregation modes.
    """
    from .encoder import forward_batch, init_encoder_params  # noqa: F401
    from .errors import NumericError
    from .numcore import (
        AdamWState,
        Tensor,
        adamw_step,
        cross_entropy_rows,
        grad_of,
        linear_resize_array,
        normalize,
        tmean,
    )
    from .encoder import _truncated_normal
    from .pretrain import Checkpoint

    k = len(dataset.classes)
    if k < 2:
        raise DegenerateLabelsError(f"need >= 2 classes, got {k}")
    enc_config = checkpoint.config
    q = enc_config.q
    d = dataset.n_channels
    per_channel = 2 * q if config.aggregation == "cls_mean_concat" else q
    head_in = d * per_channel

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x68656164]))
    head = {
        "norm_gain": Tensor.param(np.ones(head_in, dtype=np.float32)),
        "norm_shift": Tensor.param(np.zeros(head_in, dtype=np.float32)),
        "weight": Tensor.param(_truncated_normal(rng, (head_in, k))),
        "bias": Tensor.param(np.zeros(k, dtype=np.float32)),
    }
    head_list = [head["norm_gain"], head["norm_shift"], head["weight"], head["bias"]]
    encoder_list = checkpoint.params.as_list()
    trainable = head_list + ([] if config.freeze_encoder else encoder_list)
    opt = AdamWState.init(trainable, lr=config.lr, weight_decay=config.weight_decay)

    t = enc_config.resize_length
    train_x = np.stack(
        [
            np.concatenate([linear_resize_array(ch, t) for ch in s.values])
            for s in dataset.train_series
        ]
    ).reshape(len(dataset.train_series), d, t)
    test_x = np.stack(
        [
            np.concatenate([linear_resize_array(ch, t) for ch in s.values])
            for s in dataset.test_series
        ]
    ).reshape(len(dataset.test_series), d, t)
    train_y = np.asarray(dataset.train_labels, dtype=np.int64)
    test_y = np.asarray(dataset.test_labels, dtype=np.int64)

    def head_logits(batch_channels):
        # batch_channels: (nb, d, t); embed each channel, concat, norm, project
        nb = batch_channels.shape[0]
        per = []
        for c in range(d):
            states, final = forward_batch(batch_channels[:, c, :], enc_config, checkpoint.params)
            per.append(_head_embedding(final, states, config.aggregation, enc_config))
        from .numcore import concat as tconcat

        emb = per[0] if d == 1 else tconcat(per, axis=1)
        normed = normalize(emb, "layer_norm", head["norm_gain"], head["norm_shift"])
        return normed @ head["weight"] + head["bias"]

    log = []
    n = len(train_y)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch])
        ).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = head_logits(train_x[idx])
            loss = tmean(cross_entropy_rows(logits, train_y[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite fine-tuning loss at epoch {epoch}")
            grads = grad_of(loss, trainable)
            adamw_step(opt, trainable, grads)
            total += value * len(idx)
            seen += len(idx)
        from .numcore import no_grad

        with no_grad():
            preds = []
            for start in range(0, len(test_y), config.batch_size):
                logits = head_logits(test_x[start : start + config.batch_size])
                preds.append(np.argmax(logits.data, axis=1))
        acc = float(np.mean(np.concatenate(preds) == test_y)) if len(test_y) else 0.0
        log.append((epoch, total / max(seen, 1), acc))

    new_checkpoint = Checkpoint(
        config=enc_config,
        params=checkpoint.params,
        projector=checkpoint.projector,
        metadata={**checkpoint.metadata, "finetuned_epochs": config.epochs},
    )
    return FinetuneResult(checkpoint=new_checkpoint, head=head, log=log)
