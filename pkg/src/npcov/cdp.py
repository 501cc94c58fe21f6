"""Critical decision paths.

For each countable layer the neurons with positive relevance are ranked
(descending relevance, lower id first on ties) and the shortest prefix
whose cumulative relevance strictly exceeds ``alpha * g`` is kept.  When
the positive mass never gets there, or when ``g <= 0``, every
positive-relevance neuron is kept; the latter case is flagged
``degenerate``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from npcov import kernels
from npcov.errors import ConfigError
from npcov.lrp import RelevanceTrace


@dataclass(frozen=True)
class Cdp:
    ranked: tuple  # per layer: selected neuron ids, most relevant first
    scores: tuple  # per layer: relevance of the ranked neurons
    layer_sizes: tuple
    alpha: float
    predicted_class: int
    g_value: float
    degenerate: bool = False

    @property
    def layers(self):
        """Per-layer critical sets as sorted id arrays."""
        return tuple(np.sort(r) for r in self.ranked)

    @property
    def width(self):
        if not self.layer_sizes:
            return 0.0
        return float(np.mean([len(r) / n for r, n in zip(self.ranked, self.layer_sizes)]))

    def complement(self):
        """The NCDP: every neuron of each layer not on the path."""
        out = []
        for r, n in zip(self.ranked, self.layer_sizes):
            keep = np.ones(n, dtype=bool)
            keep[r] = False
            out.append(np.flatnonzero(keep))
        return tuple(out)

    def as_mask(self):
        return {l: np.sort(r) for l, r in enumerate(self.ranked)}

    def to_dict(self):
        return {
            "class": self.predicted_class,
            "width": self.width,
            "g": self.g_value,
            "degenerate": self.degenerate,
            "layers": [sorted(int(i) for i in r) for r in self.ranked],
        }


def select_critical(rel, threshold, take_all=False):
    """Greedy prefix of positive-relevance neurons for one layer."""
    rel = np.asarray(rel, dtype=np.float64)
    order = np.argsort(-rel, kind="stable")
    order = order[rel[order] > 0]
    if take_all or order.size == 0:
        return order
    csum = np.cumsum(rel[order])
    over = np.flatnonzero(csum > threshold)
    if over.size == 0:
        return order
    return order[:over[0] + 1]


def extract_cdp(rel: RelevanceTrace, alpha: float) -> Cdp:
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    g = rel.seed_value
    degenerate = g <= 0
    threshold = alpha * g
    ranked, scores = [], []
    for r in rel.layers:
        sel = select_critical(r, threshold, take_all=degenerate)
        ranked.append(sel)
        scores.append(np.asarray(r)[sel])
    return Cdp(tuple(ranked), tuple(scores), tuple(len(r) for r in rel.layers), float(alpha),
               rel.target_class, g, degenerate)


def layer_jaccard(a, b) -> float:
    a, b = set(int(i) for i in a), set(int(i) for i in b)
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union


def path_similarity(p: Cdp, q: Cdp) -> float:
    if p.layer_sizes != q.layer_sizes:
        raise ConfigError("paths come from different models")
    sims = [layer_jaccard(a, b) for a, b in zip(p.ranked, q.ranked)]
    return float(np.mean(sims)) if sims else 1.0


def layer_offsets(layer_sizes):
    return np.concatenate([[0], np.cumsum(layer_sizes)]).astype(np.intp)


def cdp_to_binary_vector(p: Cdp, model=None) -> np.ndarray:
    sizes = p.layer_sizes if model is None else tuple(model.layer_sizes)
    if model is not None and sizes != p.layer_sizes:
        raise ConfigError("path does not match the model's countable layers")
    offsets = layer_offsets(sizes)
    v = np.zeros(offsets[-1], dtype=np.uint8)
    for l, r in enumerate(p.ranked):
        v[offsets[l] + np.asarray(r, dtype=np.intp)] = 1
    return v


def stack_bits(paths, layer_sizes) -> np.ndarray:
    offsets = layer_offsets(layer_sizes)
    bits = np.zeros((len(paths), offsets[-1]), dtype=np.uint8)
    for i, p in enumerate(paths):
        for l, r in enumerate(p.ranked):
            bits[i, offsets[l] + np.asarray(r, dtype=np.intp)] = 1
    return bits


def similarity_matrix(a_paths, b_paths, layer_sizes):
    """Pairwise :func:`path_similarity` between two lists of paths."""
    offsets = layer_offsets(layer_sizes)
    return kernels.path_similarity_matrix(stack_bits(a_paths, layer_sizes),
                                          stack_bits(b_paths, layer_sizes), offsets)
