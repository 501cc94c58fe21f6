"""Per-input analysis (forward, relevance, path) and an order-preserving map."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from npcov.cdp import Cdp, extract_cdp
from npcov.lrp import DEFAULT_EPSILON, relevance
from npcov.nn import Model, forward


@dataclass
class InputAnalysis:
    predicted: int
    g_value: float
    cdp: Cdp
    activations: list  # per countable layer


def analyze(model: Model, x, alpha, epsilon=DEFAULT_EPSILON) -> InputAnalysis:
    trace = forward(model, x)
    rel = relevance(model, trace, epsilon=epsilon)
    return InputAnalysis(trace.predicted, trace.g_value, extract_cdp(rel, alpha), trace.activations(model))


def parallel_map(fn, items, threads=1):
    """``list(map(fn, items))``, optionally on a thread pool; order is kept."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def analyze_many(model: Model, X, alpha, threads=1, epsilon=DEFAULT_EPSILON):
    X = np.asarray(X, dtype=np.float64)
    return parallel_map(lambda x: analyze(model, x, alpha, epsilon), X, threads)
