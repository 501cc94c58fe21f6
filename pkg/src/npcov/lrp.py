"""Layer-wise relevance propagation with the epsilon rule.

Relevance is seeded at one output neuron with the logit value and pushed
back layer by layer:

    R_i = a_i * sum_j w_ij * R_j / (z_j + eps * sign(z_j))

where ``z_j`` includes the bias, so bias terms absorb no relevance.  An
output with ``z_j == 0`` passes nothing back.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from npcov import kernels
from npcov.errors import ConfigError
from npcov.nn import Conv2d, Dense, Flatten, ForwardTrace, MaxPool2d, Model, ReLU

DEFAULT_EPSILON = 1e-6


class Rule(enum.Enum):
    EPSILON = "epsilon"


@dataclass
class RelevanceTrace:
    layers: list  # one vector per countable layer (conv channels summed)
    input_relevance: np.ndarray
    target_class: int
    seed_value: float
    output_relevance: np.ndarray

    def conservation_error(self):
        """Absolute gap between each layer's relevance sum and the seed."""
        return [abs(float(r.sum()) - self.seed_value) for r in self.layers]

    def conserves(self, tol=1e-3):
        bound = tol * max(1.0, abs(self.seed_value))
        return all(e <= bound for e in self.conservation_error())

    def to_dict(self):
        return {
            "target_class": self.target_class,
            "seed_value": self.seed_value,
            "layers": [r.tolist() for r in self.layers],
        }


def _dense_relevance(layer: Dense, a, z, r, eps):
    denom = z + eps * np.sign(z)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    return a * (layer.weight.T @ s)


def relevance(model: Model, trace: ForwardTrace, target=None, epsilon=DEFAULT_EPSILON,
              seed=None, rule=Rule.EPSILON) -> RelevanceTrace:
    """Decompose ``trace``'s logit for ``target`` over every countable layer.

    ``target`` defaults to the predicted class and ``seed`` to its logit.
    """
    if rule is not Rule.EPSILON:
        raise ConfigError(f"unsupported LRP rule {rule}")
    if target is None:
        target = trace.predicted
    target = int(target)
    if not 0 <= target < model.num_classes:
        raise ConfigError(f"target class {target} outside [0, {model.num_classes})")
    seed_value = float(trace.logits[target]) if seed is None else float(seed)

    r = np.zeros(model.num_classes)
    r[target] = seed_value
    output_relevance = r.copy()
    at_output = [None] * len(model.layers)
    for pos in range(len(model.layers) - 1, -1, -1):
        at_output[pos] = r
        layer = model.layers[pos]
        a = trace.outputs[pos - 1] if pos > 0 else trace.input
        z = trace.outputs[pos]
        if isinstance(layer, Dense):
            r = _dense_relevance(layer, a, z, r, epsilon)
        elif isinstance(layer, Conv2d):
            r = kernels.conv2d_relevance(a, layer.weight, z, r, layer.stride, layer.padding, epsilon)
        elif isinstance(layer, MaxPool2d):
            r = kernels.maxpool_relevance(a, z, r, layer.size, layer.stride)
        elif isinstance(layer, Flatten):
            r = r.reshape(a.shape)
        elif isinstance(layer, ReLU):
            pass
        else:
            raise ConfigError(f"no relevance rule for layer kind {layer.kind}")

    per_layer = []
    for c in model.countable:
        rc = at_output[c.position]
        per_layer.append(rc.reshape(rc.shape[0], -1).sum(axis=1) if rc.ndim == 3 else rc.copy())
    return RelevanceTrace(per_layer, r, target, seed_value, output_relevance)


def dump_relevance(traces, path):
    """Write per-layer relevance vectors as JSON for debugging."""
    doc = {"format": "npcov-relevance", "version": 1, "inputs": [t.to_dict() for t in traces]}
    with open(path, "w") as fh:
        json.dump(doc, fh)
