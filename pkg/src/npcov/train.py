"""Minimal mini-batch SGD for Dense/ReLU/Flatten classifiers.

Only used to produce reproducible fixture models; conv training is out of
scope on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from npcov.errors import ConfigError
from npcov.nn import Dense, Flatten, Model, ReLU


@dataclass
class TrainResult:
    model: Model
    train_accuracy: float
    test_accuracy: float | None
    losses: list


def parse_arch(arch):
    """Parse ``["flatten", "dense:32", "relu", "dense:10"]`` (or a comma string)."""
    if isinstance(arch, str):
        arch = [a.strip() for a in arch.split(",") if a.strip()]
    parsed = []
    for item in arch:
        name, _, arg = item.lower().partition(":")
        if name == "dense":
            if not arg.isdigit() or int(arg) < 1:
                raise ConfigError(f"bad dense layer {item!r}")
            parsed.append(("dense", int(arg)))
        elif name in ("relu", "flatten"):
            parsed.append((name, None))
        else:
            raise ConfigError(f"train_dense only supports dense/relu/flatten layers, got {item!r}")
    if not parsed or parsed[-1][0] != "dense":
        raise ConfigError("architecture must end with a dense layer")
    return parsed


def _init_params(arch, input_shape, rng):
    params = []
    width = int(np.prod(input_shape))
    shape_known_flat = len(input_shape) == 1
    for name, arg in arch:
        if name == "flatten":
            shape_known_flat = True
        elif name == "dense":
            if not shape_known_flat:
                raise ConfigError("a flatten layer must precede dense layers for multi-dimensional inputs")
            w = rng.normal(0.0, np.sqrt(2.0 / width), size=(arg, width))
            params.append([w, np.zeros(arg)])
            width = arg
    return params


def _build_model(arch, params, input_shape):
    layers = []
    it = iter(params)
    for name, _ in arch:
        if name == "dense":
            w, b = next(it)
            layers.append(Dense(w, b))
        elif name == "relu":
            layers.append(ReLU())
        else:
            layers.append(Flatten())
    return Model(layers, input_shape)


def _batch_forward(arch, params, X):
    """Return per-layer cached inputs and the logits for a batch (rows = samples)."""
    cache = []
    h = X.reshape(X.shape[0], -1)
    it = iter(params)
    for name, _ in arch:
        if name == "dense":
            w, b = next(it)
            cache.append(("dense", h))
            h = h @ w.T + b
        elif name == "relu":
            cache.append(("relu", h))
            h = np.maximum(h, 0.0)
    return cache, h


def accuracy(model: Model, X, y) -> float:
    from npcov.nn import forward

    if len(y) == 0:
        return float("nan")
    hits = sum(forward(model, x).predicted == int(t) for x, t in zip(X, y))
    return hits / len(y)


def train_dense(X, y, arch, epochs=10, lr=0.05, seed=0, batch_size=32, use_bias=True,
                X_test=None, y_test=None, num_classes=None) -> TrainResult:
    """Train a dense classifier with softmax cross-entropy.

    Deterministic given ``seed``.  With ``use_bias=False`` biases stay at
    zero, which keeps LRP relevance exactly conserved.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    arch = parse_arch(arch)
    input_shape = X.shape[1:]
    num_classes = int(num_classes if num_classes is not None else arch[-1][1])
    if arch[-1][1] != num_classes:
        raise ConfigError("last dense width must equal the number of classes")
    if len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise ConfigError("labels out of range")
    rng = np.random.default_rng(seed)
    params = _init_params(arch, input_shape, rng)
    losses = []
    n = X.shape[0]
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            cache, logits = _batch_forward(arch, params, X[idx])
            logits = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            total += -np.log(p[np.arange(len(idx)), y[idx]] + 1e-300).sum()
            grad = p
            grad[np.arange(len(idx)), y[idx]] -= 1.0
            grad /= len(idx)
            pi = len(params) - 1
            for kind, h in reversed(cache):
                if kind == "relu":
                    grad = grad * (h > 0)
                    continue
                w, b = params[pi]
                gw = grad.T @ h
                gb = grad.sum(axis=0)
                grad = grad @ w
                w -= lr * gw
                if use_bias:
                    b -= lr * gb
                pi -= 1
        losses.append(total / max(n, 1))
    model = _build_model(arch, params, input_shape)
    train_acc = accuracy(model, X, y)
    test_acc = None
    if X_test is not None:
        test_acc = accuracy(model, np.asarray(X_test, dtype=np.float64), y_test)
    return TrainResult(model, train_acc, test_acc, losses)
