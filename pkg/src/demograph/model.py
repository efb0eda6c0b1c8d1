"""Shallow classifiers over joined feature blocks, plus splits and metrics.

Everything is plain numpy: logistic regression (sigmoid output), softmax
regression, and an MLP with ReLU hidden layers and a softmax head, all
trained by minibatch SGD on cross-entropy.  The train/test split is either
a seeded shuffle or a pure function of the node name (FNV-1a hash), the
latter giving sets that stay stable as the id population grows.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, ValidationError

__all__ = [
    "FeatureMatrix",
    "ModelParams",
    "SplitSpec",
    "TrainHyper",
    "auc_rank",
    "evaluate",
    "fnv1a64",
    "join_features",
    "predict",
    "split",
    "train_logistic",
    "train_mlp",
    "train_softmax",
]

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Row-aligned feature rows keyed by node name."""

    nodes: list[str]
    columns: list[str]
    values: np.ndarray
    _row: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.nodes), len(self.columns)):
            raise ValidationError(
                f"feature matrix shape {self.values.shape} does not match "
                f"{len(self.nodes)} nodes x {len(self.columns)} columns")
        self._row = {name: i for i, name in enumerate(self.nodes)}

    @property
    def width(self) -> int:
        return len(self.columns)

    def __contains__(self, node: str) -> bool:
        return node in self._row

    def rows_for(self, nodes: list[str]) -> np.ndarray:
        return self.values[[self._row[n] for n in nodes]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node"] + self.columns)
            for name, row in zip(self.nodes, self.values):
                writer.writerow([name] + [f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "node":
                raise ValidationError(f"{path}: first column must be 'node'")
            columns = header[1:]
            nodes, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValidationError(
                        f"{path}:{lineno}: expected {len(header)} fields")
                nodes.append(row[0])
                try:
                    rows.append([float(x) for x in row[1:]])
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: bad number") from exc
        values = (np.asarray(rows, dtype=np.float64) if rows
                  else np.zeros((0, len(columns))))
        return cls(nodes, columns, values)


def join_features(blocks: dict[str, FeatureMatrix]) -> FeatureMatrix:
    """Inner join of named blocks on node name.

    Row order follows the first block; column names get a ``block.``
    prefix.  Nodes dropped from each block are counted and logged.
    """
    if not blocks:
        raise ValidationError("no feature blocks to join")
    names = list(blocks)
    first = blocks[names[0]]
    keep = [n for n in first.nodes if all(n in blocks[b] for b in names[1:])]
    if not keep:
        raise ValidationError(
            f"feature blocks {names} share no nodes; nothing to join")
    for b in names:
        dropped = len(blocks[b].nodes) - len(keep)
        if dropped:
            logger.info("join: block %r loses %d of %d rows", b, dropped,
                        len(blocks[b].nodes))
    columns = [f"{b}.{c}" for b in names for c in blocks[b].columns]
    values = np.hstack([blocks[b].rows_for(keep) for b in names])
    return FeatureMatrix(keep, columns, values)


# ---------------------------------------------------------------------------
# Train/test splits
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass
class SplitSpec:
    """How to carve labeled nodes into train and test sides.

    Hash mode sends a node to train iff ``(fnv1a64(name) % 10000) / 10000``
    falls below the fraction, so membership is a pure function of the name:
    reruns and id-set growth never move a node across the split.  Random
    mode is a seeded shuffle followed by a prefix cut.  Default fractions:
    0.75 for hash mode, 0.70 for random mode.
    """

    mode: str = "hash"
    train_fraction: float | None = None
    rng_seed: int = 0

    def resolved_fraction(self) -> float:
        if self.train_fraction is not None:
            return self.train_fraction
        return 0.75 if self.mode == "hash" else 0.70

    def validate(self) -> None:
        if self.mode not in ("hash", "random"):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if not 0.0 < self.resolved_fraction() < 1.0:
            raise ConfigError("train fraction must lie in (0, 1)")


def split(nodes: list[str], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Partition ``nodes`` into (train, test), preserving input order."""
    spec.validate()
    if not nodes:
        raise ValidationError("cannot split an empty node list")
    fraction = spec.resolved_fraction()
    if spec.mode == "hash":
        is_train = [(fnv1a64(n) % 10000) / 10000.0 < fraction for n in nodes]
        train = [n for n, t in zip(nodes, is_train) if t]
        test = [n for n, t in zip(nodes, is_train) if not t]
        return train, test
    perm = np.random.default_rng(spec.rng_seed).permutation(len(nodes))
    cut = int(fraction * len(nodes))
    train_idx = np.sort(perm[:cut])
    test_idx = np.sort(perm[cut:])
    return [nodes[i] for i in train_idx], [nodes[i] for i in test_idx]


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

@dataclass
class TrainHyper:
    rate: float = 0.1
    epochs: int = 4
    minibatch: int = 3000
    l2: float = 0.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.minibatch < 1:
            raise ConfigError("minibatch must be >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")


@dataclass
class ModelParams:
    """Layer weights/biases plus the output head kind.

    ``output`` is "sigmoid" (one unit, binary) or "softmax" (one unit per
    class).  ``loss_history`` records the full-dataset cross-entropy after
    each training epoch.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str
    loss_history: list[float] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        out_units = self.weights[-1].shape[1]
        return 2 if self.output == "sigmoid" else out_units

    def check_finite(self) -> None:
        for w, b in zip(self.weights, self.biases):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError("model parameters contain non-finite values")


def _init_params(widths: list[int], output: str,
                 rng: np.random.Generator) -> ModelParams:
    # Uniform init scaled by 1/sqrt(fan-in); biases start at zero.
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, output)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _forward(params: ModelParams, x: np.ndarray):
    """Returns (per-layer activations, output probabilities)."""
    acts = [x]
    a = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.maximum(0.0, a @ w + b)
        acts.append(a)
    z = a @ params.weights[-1] + params.biases[-1]
    probs = _sigmoid(z) if params.output == "sigmoid" else _softmax(z)
    return acts, probs


def _target_matrix(params: ModelParams, y: np.ndarray) -> np.ndarray:
    if params.output == "sigmoid":
        return y.reshape(-1, 1).astype(np.float64)
    onehot = np.zeros((len(y), params.weights[-1].shape[1]))
    onehot[np.arange(len(y)), y] = 1.0
    return onehot


def loss_and_gradients(params: ModelParams, x: np.ndarray, y: np.ndarray,
                       l2: float = 0.0):
    """Mean cross-entropy (plus L2 on weights) and its exact gradients.

    For both output heads the output-layer error is ``probs - target``
    scaled by 1/batch; ReLU masks gate the backward pass through hidden
    layers.  Gradients are returned as (weight grads, bias grads) lists.
    """
    acts, probs = _forward(params, x)
    target = _target_matrix(params, y)
    n = len(x)
    clamped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if params.output == "sigmoid":
        ce = -np.mean(target * np.log(clamped)
                      + (1.0 - target) * np.log(1.0 - clamped))
    else:
        ce = -np.mean(np.log(clamped[np.arange(n), y]))
    loss = ce + 0.5 * l2 * sum(float((w * w).sum()) for w in params.weights)

    delta = (probs - target) / n
    grads_w, grads_b = [], []
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w.append(acts[layer].T @ delta + l2 * params.weights[layer])
        grads_b.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ params.weights[layer].T) * (acts[layer] > 0)
    grads_w.reverse()
    grads_b.reverse()
    return loss, grads_w, grads_b


def _dataset_loss(params: ModelParams, x: np.ndarray, y: np.ndarray,
                  l2: float) -> float:
    loss, _, _ = loss_and_gradients(params, x, y, l2)
    return float(loss)


def _sgd(params: ModelParams, x: np.ndarray, y: np.ndarray,
         hyper: TrainHyper, rng: np.random.Generator) -> ModelParams:
    n = len(x)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            batch = order[start:start + hyper.minibatch]
            _, grads_w, grads_b = loss_and_gradients(
                params, x[batch], y[batch], hyper.l2)
            for w, b, gw, gb in zip(params.weights, params.biases,
                                    grads_w, grads_b):
                w -= hyper.rate * gw
                b -= hyper.rate * gb
        epoch_loss = _dataset_loss(params, x, y, hyper.l2)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch, epoch_loss)
        params.loss_history.append(epoch_loss)
    return params


def _as_array(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.values
    return np.asarray(features, dtype=np.float64)


def _check_training_inputs(x: np.ndarray, y: np.ndarray,
                           n_classes: int) -> None:
    if len(x) != len(y):
        raise ValidationError(f"{len(x)} feature rows vs {len(y)} labels")
    if len(x) < 2:
        raise ValidationError("need at least 2 training rows")
    present = np.unique(y)
    if len(present) < 2:
        raise ValidationError(
            f"training labels contain a single class ({present.tolist()})")
    if present.min() < 0 or present.max() >= n_classes:
        raise ValidationError(
            f"labels must lie in [0, {n_classes}), got {present.tolist()}")


def balance_classes(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices that downsample every class to the minority count."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    m = counts.min()
    picked = [rng.permutation(np.flatnonzero(y == c))[:m] for c in classes]
    return np.sort(np.concatenate(picked))


def train_logistic(features, labels, hyper: TrainHyper | None = None) -> ModelParams:
    """Binary logistic regression by minibatch SGD on cross-entropy."""
    hyper = hyper or TrainHyper()
    hyper.validate()
    x = _as_array(features)
    y = np.asarray(labels, dtype=np.int64)
    _check_training_inputs(x, y, 2)
    rng = np.random.default_rng(hyper.rng_seed)
    params = _init_params([x.shape[1], 1], "sigmoid", rng)
    return _sgd(params, x, y, hyper, rng)


def train_softmax(features, labels, n_classes: int,
                  hyper: TrainHyper | None = None) -> ModelParams:
    """Multiclass generalization of the logistic baseline."""
    hyper = hyper or TrainHyper()
    hyper.validate()
    x = _as_array(features)
    y = np.asarray(labels, dtype=np.int64)
    _check_training_inputs(x, y, n_classes)
    rng = np.random.default_rng(hyper.rng_seed)
    params = _init_params([x.shape[1], n_classes], "softmax", rng)
    return _sgd(params, x, y, hyper, rng)


def train_mlp(features, labels, hidden: list[int], n_classes: int = 2,
              hyper: TrainHyper | None = None) -> ModelParams:
    """ReLU feed-forward net with a softmax head.

    Default architecture is three hidden layers of 256 units; pass
    ``hidden`` explicitly for anything else.
    """
    hyper = hyper or TrainHyper()
    hyper.validate()
    if not hidden or any(h < 1 for h in hidden):
        raise ConfigError(f"bad hidden layer sizes {hidden!r}")
    x = _as_array(features)
    y = np.asarray(labels, dtype=np.int64)
    _check_training_inputs(x, y, n_classes)
    rng = np.random.default_rng(hyper.rng_seed)
    params = _init_params([x.shape[1]] + list(hidden) + [n_classes],
                          "softmax", rng)
    return _sgd(params, x, y, hyper, rng)


def predict(params: ModelParams, features) -> np.ndarray:
    """Per-row class-probability vectors, rows summing to 1."""
    x = _as_array(features)
    if x.shape[1] != params.input_width:
        raise ValidationError(
            f"feature width {x.shape[1]} does not match model input "
            f"{params.input_width}")
    _, probs = _forward(params, x)
    if params.output == "sigmoid":
        p = probs[:, 0]
        return np.stack([1.0 - p, p], axis=1)
    return probs


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def auc_rank(scores, labels) -> float:
    """AUC via the rank statistic; tied scores contribute half.

    Equals the fraction of (positive, negative) pairs ranked correctly,
    exactly, because tied groups get the average of their rank range.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined when only one class is present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + 1 + j) / 2.0
        i = j
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(predictions, truth) -> dict:
    """Accuracy, cross-entropy, and (when defined) AUC.

    ``predictions`` may be scalar positive-class scores or per-class
    probability rows; ``truth`` is a class index per row.  AUC is reported
    only for binary problems with both classes present in the truth, and
    is ``None`` otherwise (use ``auc_rank`` directly to get the error).
    """
    probs = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truth, dtype=np.int64)
    if probs.ndim == 1 or probs.shape[1] == 1:
        p = probs.reshape(-1)
        probs = np.stack([1.0 - p, p], axis=1)
    if len(probs) != len(y):
        raise ValidationError(f"{len(probs)} predictions vs {len(y)} labels")
    if len(y) == 0:
        raise ValidationError("nothing to evaluate")
    accuracy = float((probs.argmax(axis=1) == y).mean())
    clamped = np.clip(probs[np.arange(len(y)), y], PROB_CLAMP, None)
    # fsum makes the mean exactly invariant to row order.
    cross_entropy = -math.fsum(np.log(clamped)) / len(y)
    auc = None
    if probs.shape[1] == 2 and len(np.unique(y)) == 2:
        auc = auc_rank(probs[:, 1], y == 1)
    return {"auc": auc, "accuracy": accuracy, "cross_entropy": cross_entropy}
