"""Feed-forward classifiers: layers, models, forward inference and masking.

Arrays are float64 numpy arrays throughout.  A *countable* layer is a Dense
or Conv2d layer other than the final (output) layer; its neurons are the
Dense output units or the Conv2d output channels.  ReLU, MaxPool2d and
Flatten are transparent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from npcov import kernels
from npcov.errors import MaskError, ShapeError


def _frozen(a, ndim=None):
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("weights must be finite")
    arr.setflags(write=False)
    return arr


class Layer:
    kind = "Layer"
    weighted = False

    def output_shape(self, input_shape):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def hyperparams(self):
        return {}


class Dense(Layer):
    kind = "Dense"
    weighted = True

    def __init__(self, weight, bias=None):
        self.weight = _frozen(weight, 2)
        out_features = self.weight.shape[0]
        self.bias = _frozen(np.zeros(out_features) if bias is None else bias, 1)
        if self.bias.shape != (out_features,):
            raise ShapeError(f"Dense bias has shape {self.bias.shape}, expected ({out_features},)")

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(f"Dense expects input ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def forward(self, x):
        return self.weight @ x + self.bias

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


class Conv2d(Layer):
    kind = "Conv2d"
    weighted = True

    def __init__(self, weight, bias=None, stride=1, padding=0):
        self.weight = _frozen(weight, 4)
        out_ch = self.weight.shape[0]
        self.bias = _frozen(np.zeros(out_ch) if bias is None else bias, 1)
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"Conv2d bias has shape {self.bias.shape}, expected ({out_ch},)")
        if stride < 1 or padding < 0:
            raise ShapeError("Conv2d needs stride >= 1 and padding >= 0")
        self.stride = int(stride)
        self.padding = int(padding)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.weight.shape[1]:
            raise ShapeError(f"Conv2d expects ({self.weight.shape[1]}, H, W) input, got {tuple(input_shape)}")
        _, h, w = input_shape
        kh, kw = self.weight.shape[2:]
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"Conv2d kernel {kh}x{kw} does not fit input {h}x{w}")
        return (self.out_channels, ho, wo)

    def forward(self, x):
        return kernels.conv2d_forward(x, self.weight, self.bias, self.stride, self.padding)

    def hyperparams(self):
        return {"stride": self.stride, "padding": self.padding}

    def __repr__(self):
        return f"Conv2d({self.weight.shape[1]}->{self.out_channels}, k={self.weight.shape[2:]})"


class ReLU(Layer):
    kind = "ReLU"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        return np.maximum(x, 0.0)


class MaxPool2d(Layer):
    kind = "MaxPool2d"

    def __init__(self, size=2, stride=None):
        self.size = int(size)
        self.stride = int(stride if stride is not None else size)

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"MaxPool2d expects (C, H, W) input, got {tuple(input_shape)}")
        c, h, w = input_shape
        ho = (h - self.size) // self.stride + 1
        wo = (w - self.size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"MaxPool2d window {self.size} does not fit input {h}x{w}")
        return (c, ho, wo)

    def forward(self, x):
        return kernels.maxpool_forward(x, self.size, self.stride)

    def hyperparams(self):
        return {"size": self.size, "stride": self.stride}


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(-1)


@dataclass(frozen=True)
class CountableLayer:
    position: int  # index into Model.layers
    size: int
    offset: int  # first global neuron id
    activation_position: int  # where the post-nonlinearity output lives
    kind: str


class Model:
    """An immutable feed-forward classifier.

    The last layer must be Dense with ``num_classes`` outputs.
    """

    def __init__(self, layers: Sequence[Layer], input_shape, num_classes=None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        shapes = []
        shape = self.input_shape
        for pos, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {pos} ({layer.kind}): {exc}") from None
            shapes.append(shape)
        self.shapes = tuple(shapes)
        last = self.layers[-1]
        if not isinstance(last, Dense):
            raise ShapeError("the output layer must be Dense")
        if num_classes is None:
            num_classes = last.out_features
        if last.out_features != num_classes:
            raise ShapeError(f"output layer has {last.out_features} units, expected {num_classes}")
        self.num_classes = int(num_classes)

        countable = []
        offset = 0
        for pos, layer in enumerate(self.layers[:-1]):
            if not layer.weighted:
                continue
            size = self.shapes[pos][0]
            act = pos + 1 if pos + 1 < len(self.layers) and isinstance(self.layers[pos + 1], ReLU) else pos
            countable.append(CountableLayer(pos, size, offset, act, layer.kind))
            offset += size
        self.countable = tuple(countable)
        self.num_neurons = offset

    @property
    def layer_sizes(self):
        return [c.size for c in self.countable]

    @property
    def neuron_offsets(self):
        return [c.offset for c in self.countable] + [self.num_neurons]

    def neuron_index(self):
        """Canonical enumeration: global id -> (countable layer, neuron)."""
        return [(l, n) for l, c in enumerate(self.countable) for n in range(c.size)]

    def __repr__(self):
        return f"Model({list(self.layers)}, input_shape={self.input_shape})"


@dataclass
class ForwardTrace:
    input: np.ndarray
    outputs: list  # output of every layer, in order
    logits: np.ndarray = field(init=False)
    predicted: int = field(init=False)
    g_value: float = field(init=False)

    def __post_init__(self):
        self.logits = self.outputs[-1]
        # np.argmax returns the first maximum: lowest-index tie-break
        self.predicted = int(np.argmax(self.logits))
        self.g_value = float(self.logits[self.predicted])

    def activations(self, model: Model):
        """Post-nonlinearity value of every neuron, one vector per countable layer.

        Conv channels are summed over spatial positions.
        """
        acts = []
        for c in model.countable:
            out = self.outputs[c.activation_position]
            acts.append(out.reshape(out.shape[0], -1).sum(axis=1) if out.ndim == 3 else out.copy())
        return acts


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        first = model.layers[0]
        raise ShapeError(
            f"layer 0 ({first.kind}): input shape {x.shape} does not match model input {model.input_shape}")
    return x


def forward(model: Model, x) -> ForwardTrace:
    x = _check_input(model, x)
    outputs = []
    h = x
    for layer in model.layers:
        h = layer.forward(h)
        outputs.append(h)
    return ForwardTrace(x, outputs)


def normalize_mask(model: Model, masked) -> dict:
    """Turn ``masked`` into {countable layer: sorted int array}.

    Accepts an iterable of (layer, neuron) pairs or a mapping layer ->
    iterable of neurons.  Layer ``len(model.countable)`` names the output
    layer and is rejected.
    """
    by_layer: dict = {}
    if isinstance(masked, Mapping):
        items = ((l, n) for l, ns in masked.items() for n in ns)
    else:
        items = masked
    for l, n in items:
        l, n = int(l), int(n)
        if l == len(model.countable):
            raise MaskError("output-layer neurons cannot be masked")
        if not 0 <= l < len(model.countable):
            raise MaskError(f"no countable layer {l}")
        if not 0 <= n < model.countable[l].size:
            raise MaskError(f"layer {l} has no neuron {n}")
        by_layer.setdefault(l, set()).add(n)
    return {l: np.array(sorted(ns), dtype=np.intp) for l, ns in by_layer.items()}


def mask_forward(model: Model, x, masked: Iterable | Mapping) -> ForwardTrace:
    """Forward pass with the listed neurons' outputs forced to zero.

    The zero is applied at the countable layer's output; the following ReLU
    keeps it at zero, so consumers see a zeroed neuron (whole feature map
    for a conv channel).
    """
    x = _check_input(model, x)
    masks = normalize_mask(model, masked)
    return _masked_pass(model, x, masks)


def _masked_pass(model, x, masks):
    zero_at = {model.countable[l].position: ids for l, ids in masks.items() if len(ids)}
    outputs = []
    h = x
    for pos, layer in enumerate(model.layers):
        h = layer.forward(h)
        ids = zero_at.get(pos)
        if ids is not None:
            h = h.copy()
            h[ids] = 0.0
        outputs.append(h)
    return ForwardTrace(x, outputs)


def predict_masked(model: Model, x, masks: Mapping) -> int:
    """Predicted class under a pre-normalized mask (see :func:`normalize_mask`)."""
    return _masked_pass(model, np.asarray(x, dtype=np.float64), masks).predicted
