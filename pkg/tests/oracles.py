"""Independent reference implementations used only by the tests.

Nothing here imports npcov's numerics; everything is written with plain
loops so that it can be checked by eye against the definitions.
"""

import math
from fractions import Fraction

import numpy as np


def naive_dense(x, w, b):
    out = np.zeros(w.shape[0])
    for j in range(w.shape[0]):
        s = b[j]
        for i in range(w.shape[1]):
            s += w[j, i] * x[i]
        out[j] = s
    return out


def naive_conv(x, w, b, stride, padding):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((cin, h + 2 * padding, wd + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    for o in range(cout):
        for r in range(oh):
            for c in range(ow):
                s = b[o]
                for i in range(cin):
                    for dr in range(kh):
                        for dc in range(kw):
                            s += w[o, i, dr, dc] * xp[i, r * stride + dr, c * stride + dc]
                out[o, r, c] = s
    return out


def naive_maxpool(x, size, stride):
    ch, h, w = x.shape
    oh, ow = (h - size) // stride + 1, (w - size) // stride + 1
    out = np.zeros((ch, oh, ow))
    for k in range(ch):
        for r in range(oh):
            for c in range(ow):
                out[k, r, c] = max(x[k, r * stride + dr, c * stride + dc] for dr in range(size) for dc in range(size))
    return out


def naive_forward(arch, x):
    """``arch`` is a list of (kind, params) tuples; returns every layer output."""
    outs = []
    h = np.asarray(x, dtype=np.float64)
    for kind, p in arch:
        if kind == "dense":
            h = naive_dense(h, p["w"], p["b"])
        elif kind == "conv":
            h = naive_conv(h, p["w"], p["b"], p["stride"], p["padding"])
        elif kind == "relu":
            h = np.array([max(v, 0.0) for v in h.ravel()]).reshape(h.shape)
        elif kind == "maxpool":
            h = naive_maxpool(h, p["size"], p["stride"])
        elif kind == "flatten":
            h = h.ravel().copy()
        outs.append(h)
    return outs


def arch_of(model):
    """Read weights out of a model into the plain layer-arch format."""
    arch = []
    for layer in model.layers:
        k = layer.kind
        if k == "Dense":
            arch.append(("dense", {"w": np.array(layer.weight), "b": np.array(layer.bias)}))
        elif k == "Conv2d":
            arch.append(("conv", {"w": np.array(layer.weight), "b": np.array(layer.bias),
                                  "stride": layer.stride, "padding": layer.padding}))
        elif k == "ReLU":
            arch.append(("relu", {}))
        elif k == "MaxPool2d":
            arch.append(("maxpool", {"size": layer.size, "stride": layer.stride}))
        else:
            arch.append(("flatten", {}))
    return arch


def _stab(z, eps):
    if z > 0:
        return z + eps
    if z < 0:
        return z - eps
    return 0.0


def naive_lrp(arch, x, eps=1e-6, target=None):
    """Epsilon-rule relevance at the input of every layer, seeded with the target logit.

    Returns ``(relevance_into_each_layer, outputs)`` where entry ``p`` is the
    relevance of layer ``p``'s input.
    """
    outs = naive_forward(arch, x)
    inputs = [np.asarray(x, dtype=np.float64)] + outs[:-1]
    logits = outs[-1]
    if target is None:
        target = int(np.argmax(logits))
    r = np.zeros(len(logits))
    r[target] = logits[target]
    rel_in = [None] * len(arch)
    for p in range(len(arch) - 1, -1, -1):
        kind, prm = arch[p]
        a, z = inputs[p], outs[p]
        if kind == "dense":
            new = np.zeros(a.shape)
            for i in range(a.shape[0]):
                s = 0.0
                for j in range(z.shape[0]):
                    d = _stab(z[j], eps)
                    if d != 0.0:
                        s += a[i] * prm["w"][j, i] / d * r[j]
                new[i] = s
            r = new
        elif kind == "conv":
            w, stride, pad = prm["w"], prm["stride"], prm["padding"]
            cin, h, wd = a.shape
            cout, _, kh, kw = w.shape
            newp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
            ap = np.zeros_like(newp)
            ap[:, pad:pad + h, pad:pad + wd] = a
            for o in range(cout):
                for rr in range(z.shape[1]):
                    for cc in range(z.shape[2]):
                        d = _stab(z[o, rr, cc], eps)
                        if d == 0.0:
                            continue
                        for i in range(cin):
                            for dr in range(kh):
                                for dc in range(kw):
                                    yy, xx = rr * stride + dr, cc * stride + dc
                                    newp[i, yy, xx] += ap[i, yy, xx] * w[o, i, dr, dc] / d * r[o, rr, cc]
            r = newp[:, pad:pad + h, pad:pad + wd]
        elif kind == "maxpool":
            size, stride = prm["size"], prm["stride"]
            new = np.zeros(a.shape)
            for k in range(z.shape[0]):
                for rr in range(z.shape[1]):
                    for cc in range(z.shape[2]):
                        win = [(rr * stride + dr, cc * stride + dc) for dr in range(size) for dc in range(size)]
                        best = max(a[k, y, x_] for y, x_ in win)
                        tied = [(y, x_) for y, x_ in win if a[k, y, x_] == best]
                        for y, x_ in tied:
                            new[k, y, x_] += r[k, rr, cc] / len(tied)
            r = new
        elif kind == "flatten":
            r = r.reshape(a.shape)
        rel_in[p] = r
    return rel_in, outs


def naive_countable_relevance(arch, x, eps=1e-6):
    """Per countable layer (weighted, not last) relevance summed per neuron."""
    rel_in, _ = naive_lrp(arch, x, eps)
    weighted = [p for p, (k, _) in enumerate(arch) if k in ("dense", "conv")][:-1]
    out = []
    for p in weighted:
        r = rel_in[p + 1]  # relevance at this layer's output
        out.append(r.reshape(r.shape[0], -1).sum(axis=1) if r.ndim == 3 else r)
    return out


def greedy_prefix(rel, threshold):
    """Hand-run greedy selection of Def. 1 by repeated max extraction."""
    remaining = [(float(v), i) for i, v in enumerate(rel) if v > 0]
    chosen, total = [], 0.0
    while remaining:
        v, i = max(remaining, key=lambda t: (t[0], -t[1]))
        remaining.remove((v, i))
        chosen.append(i)
        total += v
        if total > threshold:
            break
    return chosen


def jaccard_bucket_by_search(inter, union, m):
    """Scan the intervals ((i-1)/m, i/m] with exact fractions; 0 -> 1."""
    if union == 0:
        return m
    j = Fraction(inter, union)
    if j == 0:
        return 1
    for i in range(1, m + 1):
        if Fraction(i - 1, m) < j <= Fraction(i, m):
            return i
    raise AssertionError("no bucket")


def enumerate_snpc(cdps, graph, m):
    """Walk the full (class, cluster, layer, bucket) grid and test each cell."""
    covered = 0
    for y in range(graph.num_classes):
        for gc in graph.clusters.get(y, []):
            for l in range(len(graph.layer_sizes)):
                abstract = {int(t) for t in gc.abstract.layers[l]}
                for b in range(1, m + 1):
                    hit = False
                    for c in cdps:
                        if c.predicted_class != y:
                            continue
                        mine = {int(t) for t in c.ranked[l]}
                        inter = len(mine & abstract)
                        union = len(mine | abstract)
                        if jaccard_bucket_by_search(inter, union, m) == b:
                            hit = True
                            break
                    covered += hit
    return Fraction(covered, graph.num_classes * graph.k * len(graph.layer_sizes) * m)


def entropy_impartiality(preds, n):
    counts = [list(preds).count(c) for c in range(n)]
    total = sum(counts)
    h = -sum(c / total * math.log(c / total) for c in counts if c)
    return h / math.log(n)
