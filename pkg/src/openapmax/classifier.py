"""Closed-set AD/CN classifier producing activation vectors.

A small ReLU network trained with Adam on cross-entropy plus an L2 weight
penalty. Inputs are median-imputed, then standardized with training
statistics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import KNOWN, N_INDICATORS, Category, DataError, Dataset, SubjectRecord

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    hidden: tuple = (32, 16)
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-4
    batch_size: int = 32
    epochs: int = 500
    patience: int = 50
    seed: int = 0


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params, X: np.ndarray) -> tuple[np.ndarray, list]:
    """Return logits and the per-layer inputs needed for backprop."""
    h = X
    cache = []
    for i, (W, b) in enumerate(params):
        cache.append(h)
        h = h @ W + b
        if i < len(params) - 1:
            cache.append(h)
            h = np.maximum(h, 0.0)
    return h, cache


def loss_and_grad(params, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy + ``l2 * sum(W**2)`` and its gradient."""
    logits, cache = forward(params, X)
    n = len(X)
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    loss = -logp[np.arange(n), y].mean() + l2 * sum((W**2).sum() for W, _ in params)

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        if i < len(params) - 1:
            pre = cache.pop()
            delta = delta * (pre > 0)
        h_in = cache.pop()
        grads[i] = (h_in.T @ delta + 2.0 * l2 * W, delta.sum(0))
        delta = delta @ W.T
    return float(loss), grads


def _accuracy(params, X, y) -> float:
    if len(X) == 0:
        return 0.0
    logits, _ = forward(params, X)
    return float((logits.argmax(1) == y).mean())


def fit_mlp(X, y, X_val=None, y_val=None, config: Optional[TrainConfig] = None):
    """Train on standardized arrays. Returns (params, history).

    The returned parameters are the checkpoint with the best validation
    accuracy (training accuracy when no validation data is given). Training
    stops once validation accuracy has not improved for ``patience`` epochs.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X_val is None or len(X_val) == 0:
        X_val, y_val = X, y
    rng = np.random.default_rng(config.seed)
    sizes = [X.shape[1], *config.hidden, int(max(y.max(), y_val.max())) + 1]
    params = init_params(sizes, rng)
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]

    best_acc = _accuracy(params, X_val, y_val)
    best = [(W.copy(), b.copy()) for W, b in params]
    since_best = 0
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(params, X[idx], y[idx], config.l2)
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            new = []
            for j, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
                mW = config.beta1 * m[j][0] + (1 - config.beta1) * gW
                mb = config.beta1 * m[j][1] + (1 - config.beta1) * gb
                vW = config.beta2 * v[j][0] + (1 - config.beta2) * gW * gW
                vb = config.beta2 * v[j][1] + (1 - config.beta2) * gb * gb
                m[j], v[j] = (mW, mb), (vW, vb)
                W = W - config.learning_rate * (mW / c1) / (np.sqrt(vW / c2) + config.eps)
                b = b - config.learning_rate * (mb / c1) / (np.sqrt(vb / c2) + config.eps)
                new.append((W, b))
            params = new
        acc = _accuracy(params, X_val, y_val)
        history.append(acc)
        if acc > best_acc:
            best_acc = acc
            best = [(W.copy(), b.copy()) for W, b in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best, history


@dataclass
class ClassifierModel:
    params: list
    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list, repr=False)
    # zero-mean logits; softmax is unchanged, and an appended unknown score
    # of 0 then sits between the top and bottom class
    center_logits: bool = True

    @property
    def sizes(self) -> list[int]:
        return [self.params[0][0].shape[0]] + [W.shape[1] for W, _ in self.params]

    def prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        X = np.where(np.isnan(X), self.median, X)
        return (X - self.mean) / self.std

    def activations_matrix(self, X: np.ndarray) -> np.ndarray:
        logits, _ = forward(self.params, self.prepare(X))
        if self.center_logits:
            logits = logits - logits.mean(1, keepdims=True)
        return logits

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "format_version": FORMAT_VERSION,
            "architecture": {
                "sizes": self.sizes,
                "activation": "relu",
                "classes": [c.value for c in KNOWN],
                "center_logits": self.center_logits,
            },
            "weights": [W.tolist() for W, _ in self.params],
            "biases": [b.tolist() for _, b in self.params],
            "normalization": {"mean": self.mean.tolist(), "std": self.std.tolist(), "median": self.median.tolist()},
            "config": cfg,
        }

    @classmethod
    def from_dict(cls, obj) -> "ClassifierModel":
        params = [
            (np.asarray(W, dtype=float).reshape(len(W), -1), np.asarray(b, dtype=float))
            for W, b in zip(obj["weights"], obj["biases"])
        ]
        norm = obj["normalization"]
        cfg = dict(obj.get("config", {}))
        if "hidden" in cfg:
            cfg["hidden"] = tuple(cfg["hidden"])
        return cls(
            params,
            np.asarray(norm["mean"], dtype=float),
            np.asarray(norm["std"], dtype=float),
            np.asarray(norm["median"], dtype=float),
            TrainConfig(**cfg),
            center_logits=bool(obj.get("architecture", {}).get("center_logits", True)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _targets(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    rows = [r for r in ds.records if r.label in KNOWN]
    X = np.stack([r.as_array() for r in rows]) if rows else np.empty((0, N_INDICATORS))
    y = np.array([KNOWN.index(r.label) for r in rows], dtype=int)
    return X, y


def normalization_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-column (mean, std, median) over observed values; std 0 maps to 1."""
    mean = np.zeros(X.shape[1])
    std = np.ones(X.shape[1])
    median = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j][~np.isnan(X[:, j])]
        if col.size:
            median[j] = np.median(col)
            mean[j] = col.mean()
            s = col.std()
            std[j] = s if s > 0 else 1.0
    return mean, std, median


def train_classifier(train: Dataset, val: Optional[Dataset] = None, config: Optional[TrainConfig] = None) -> ClassifierModel:
    config = config or TrainConfig()
    X, y = _targets(train)
    if len(set(y.tolist())) < len(KNOWN):
        raise DataError("training set must contain both AD and CN records")
    mean, std, median = normalization_stats(X)
    model = ClassifierModel([], mean, std, median, config)
    Xv, yv = _targets(val) if val is not None else (None, None)
    params, history = fit_mlp(
        model.prepare(X), y, model.prepare(Xv) if Xv is not None and len(Xv) else None, yv, config
    )
    model.params = params
    model.history = history
    return model


def activations(m: ClassifierModel, record: SubjectRecord) -> np.ndarray:
    """Pre-softmax scores ordered (AD, CN)."""
    return m.activations_matrix(record.as_array()[None, :])[0]
