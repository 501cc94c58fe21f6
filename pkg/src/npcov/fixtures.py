"""Regenerate the committed fixture data and models.

    python -m npcov.fixtures [outdir]

The digit set is scikit-learn's bundled 8x8 digits, requantized to 8-bit
and augmented with one-pixel shifts.  Both models are bias-free so that
relevance is conserved exactly up to the epsilon term.  The conv model
uses fixed random filters with a trained dense head (conv layers are not
trained here).
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from npcov.io import LabeledDataset, load_dataset, load_model, save_dataset, save_model
from npcov.nn import Conv2d, Dense, Flatten, MaxPool2d, Model, ReLU, forward
from npcov.train import train_dense

DATA_DIR = Path(__file__).resolve().parent / "data"
SEED = 20240501
N_TRAIN = 6000
MLP_ARCH = ["flatten", "dense:128", "relu", "dense:64", "relu", "dense:10"]


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def digit_images():
    from sklearn.datasets import load_digits

    digits = load_digits()
    base = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    images, labels = [], []
    for dy, dx in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
        images.append(np.stack([_shift(im, dy, dx) for im in base]))
        labels.append(digits.target)
    images = np.concatenate(images)
    labels = np.concatenate(labels).astype(np.int64)
    order = np.random.default_rng(SEED).permutation(len(labels))
    return images[order], labels[order]


def conv_features_model(rng):
    w1 = rng.normal(0, np.sqrt(2 / 9), size=(6, 1, 3, 3))
    w2 = rng.normal(0, np.sqrt(2 / 54), size=(12, 6, 3, 3))
    return [Conv2d(w1, padding=1), ReLU(), MaxPool2d(2), Conv2d(w2, padding=1), ReLU(), MaxPool2d(2), Flatten()]


def make_fixtures(outdir=DATA_DIR, verbose=True):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    images, labels = digit_images()
    train = LabeledDataset(images[:N_TRAIN] / 255.0, labels[:N_TRAIN], "train")
    test = LabeledDataset(images[N_TRAIN:] / 255.0, labels[N_TRAIN:], "test")
    save_dataset(train, outdir / "digits-train-images.idx", outdir / "digits-train-labels.idx")
    save_dataset(test, outdir / "digits-test-images.idx", outdir / "digits-test-labels.idx")
    # reload so models are trained on exactly what the files hold
    train = load_dataset(outdir / "digits-train-images.idx", outdir / "digits-train-labels.idx", "train")
    test = load_dataset(outdir / "digits-test-images.idx", outdir / "digits-test-labels.idx", "test")

    mlp = train_dense(train.images, train.labels, MLP_ARCH, epochs=30, lr=0.05, seed=SEED,
                      use_bias=False, X_test=test.images, y_test=test.labels)
    save_model(mlp.model, outdir / "mlp.manifest", outdir / "mlp.bin")
    # float32 storage: report accuracy of the model as reloaded
    mlp_loaded = load_model(outdir / "mlp.manifest", outdir / "mlp.bin")

    rng = np.random.default_rng(SEED + 1)
    feats_layers = conv_features_model(rng)
    feat_model_input = (1, 8, 8)
    head_in = Model(feats_layers + [Dense(np.zeros((10, 48)))], feat_model_input)

    def feats(ds):
        X = ds.images.reshape(-1, 1, 8, 8)
        return np.stack([forward(head_in, x).outputs[-2] for x in X])

    ftrain, ftest = feats(train), feats(test)
    head = train_dense(ftrain, train.labels, ["dense:32", "relu", "dense:10"], epochs=60, lr=0.05,
                       seed=SEED + 2, use_bias=False, X_test=ftest, y_test=test.labels)
    conv = Model(feats_layers + list(head.model.layers), feat_model_input)
    save_model(conv, outdir / "convnet.manifest", outdir / "convnet.bin")
    conv_loaded = load_model(outdir / "convnet.manifest", outdir / "convnet.bin")

    stats = {
        "mlp_train_acc": _acc(mlp_loaded, train),
        "mlp_test_acc": _acc(mlp_loaded, test),
        "conv_train_acc": _acc(conv_loaded, train),
        "conv_test_acc": _acc(conv_loaded, test),
    }
    if verbose:
        for k, v in stats.items():
            print(f"{k}: {v:.4f}", file=sys.stderr)
    return stats


def _acc(model, ds):
    X = ds.inputs_for(model)
    return float(np.mean([forward(model, x).predicted == t for x, t in zip(X, ds.labels)]))


def load_fixture(name="mlp"):
    """Return ``(model, train, test)`` for a committed fixture model."""
    model = load_model(DATA_DIR / f"{name}.manifest", DATA_DIR / f"{name}.bin")
    train = load_dataset(DATA_DIR / "digits-train-images.idx", DATA_DIR / "digits-train-labels.idx", "train")
    test = load_dataset(DATA_DIR / "digits-test-images.idx", DATA_DIR / "digits-test-labels.idx", "test")
    return model, train, test


if __name__ == "__main__":
    make_fixtures(sys.argv[1] if len(sys.argv) > 1 else DATA_DIR)
