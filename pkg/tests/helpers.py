import numpy as np

from npcov.nn import Dense, Model, ReLU

# filled by the acceptance tests, printed in the terminal summary
ACCEPTANCE_LINES = []


def random_mlp(rng, sizes, bias=False, num_classes=None):
    """Bias-free (by default) Dense/ReLU stack with the given widths."""
    layers = []
    for i in range(len(sizes) - 1):
        w = rng.normal(0, 1 / np.sqrt(sizes[i]), size=(sizes[i + 1], sizes[i]))
        b = rng.normal(0, 0.1, size=sizes[i + 1]) if bias else None
        layers.append(Dense(w, b))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Model(layers, (sizes[0],), num_classes)


def toy_problem(seed, n=60, sizes=(4, 6, 5, 2), min_per_class=3):
    """A bias-free toy classifier and ``n`` inputs, each with a positive
    predicted logit, covering every class at least ``min_per_class`` times."""
    from npcov.io import LabeledDataset
    from npcov.nn import forward

    rng = np.random.default_rng(seed)
    while True:
        model = random_mlp(rng, list(sizes))
        X = rng.normal(size=(4 * n, sizes[0]))
        traces = [forward(model, x) for x in X]
        keep = [i for i, t in enumerate(traces) if t.g_value > 0][:n]
        X = X[keep]
        preds = np.array([traces[i].predicted for i in keep], dtype=np.int64)
        if len(keep) == n and np.bincount(preds, minlength=sizes[-1]).min() >= min_per_class:
            return model, LabeledDataset(X, preds)
