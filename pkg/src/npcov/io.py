"""On-disk formats: models, datasets, decision graphs and reports.

Model
    ``<name>.manifest`` is a JSON document listing layers, shapes and
    hyperparameters; every weight and bias points into ``<name>.bin`` by
    byte offset and element count.  The blob is little-endian float32,
    concatenated in manifest order.  Weights are widened to float64 on load.

Dataset
    IDX files (big-endian magic ``0x00000803`` for uint8 images,
    ``0x00000801`` for uint8 labels), optionally gzipped.  Images may
    instead use the raw-float layout: ``b"NPCF"``, little-endian uint32
    ndim, ndim little-endian uint32 extents, then float32 values in [0, 1].

Graphs and reports
    JSON with ``format`` and ``version`` fields, written with sorted keys so
    identical content gives identical bytes.
"""

from __future__ import annotations

import gzip
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from npcov.errors import ConfigError, FormatError, ShapeError, TruncatedBlobError, VersionMismatchError
from npcov.nn import Conv2d, Dense, Flatten, MaxPool2d, Model, ReLU

MODEL_FORMAT = "npcov-model"
MODEL_VERSION = 1
GRAPH_FORMAT = "npcov-decision-graph"
GRAPH_VERSION = 1
REPORT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
RAW_MAGIC = b"NPCF"


# ---------------------------------------------------------------- models

def _model_paths(path):
    path = Path(path)
    if path.suffix in (".manifest", ".bin"):
        path = path.with_suffix("")
    return path.with_suffix(".manifest"), path.with_suffix(".bin")


def save_model(model: Model, manifest_path, blob_path=None):
    if blob_path is None:
        manifest_path, blob_path = _model_paths(manifest_path)
    chunks = []
    offset = 0
    layers = []

    def ref(arr):
        nonlocal offset
        data = np.asarray(arr, dtype="<f4").tobytes()
        entry = {"offset": offset, "count": int(arr.size)}
        chunks.append(data)
        offset += len(data)
        return entry

    for layer in model.layers:
        entry = {"kind": layer.kind}
        if isinstance(layer, (Dense, Conv2d)):
            entry["shape"] = list(layer.weight.shape)
            entry["weight"] = ref(layer.weight)
            entry["bias"] = ref(layer.bias)
        entry.update(layer.hyperparams())
        layers.append(entry)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "blob_bytes": offset,
        "layers": layers,
    }
    Path(manifest_path).write_text(json.dumps(doc, indent=2) + "\n")
    Path(blob_path).write_bytes(b"".join(chunks))


def _read_array(blob, entry, shape, where, what):
    try:
        off, count = int(entry["offset"]), int(entry["count"])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{where}: malformed {what} reference") from None
    need = int(np.prod(shape))
    if count != need:
        raise ShapeError(f"{where}: {what} declares {count} elements but shape {tuple(shape)} needs {need}")
    end = off + 4 * count
    if off < 0 or end > len(blob):
        raise TruncatedBlobError(f"{where}: {what} spans bytes [{off}, {end}) but the blob has {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float64)
    return arr.reshape(shape), (off, end)


def load_model(manifest_path, blob_path=None) -> Model:
    if blob_path is None:
        manifest_path, blob_path = _model_paths(manifest_path)
    try:
        doc = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON ({exc})") from None
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{manifest_path}: not a model manifest")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatchError(f"{manifest_path}: version {doc.get('version')!r}, expected {MODEL_VERSION}")
    blob = Path(blob_path).read_bytes()
    layers = []
    extents = []
    for pos, entry in enumerate(doc.get("layers", [])):
        kind = entry.get("kind")
        where = f"layer {pos} ({kind})"
        if kind in ("Dense", "Conv2d"):
            shape = entry.get("shape")
            if kind == "Dense" and (not isinstance(shape, list) or len(shape) != 2):
                raise ShapeError(f"{where}: Dense needs a 2-d shape")
            if kind == "Conv2d" and (not isinstance(shape, list) or len(shape) != 4):
                raise ShapeError(f"{where}: Conv2d needs a 4-d shape")
            w, ext_w = _read_array(blob, entry.get("weight", {}), shape, where, "weight")
            b, ext_b = _read_array(blob, entry.get("bias", {}), (shape[0],), where, "bias")
            extents += [(ext_w, where), (ext_b, where)]
            if kind == "Dense":
                layers.append(Dense(w, b))
            else:
                layers.append(Conv2d(w, b, entry.get("stride", 1), entry.get("padding", 0)))
        elif kind == "ReLU":
            layers.append(ReLU())
        elif kind == "Flatten":
            layers.append(Flatten())
        elif kind == "MaxPool2d":
            layers.append(MaxPool2d(entry.get("size", 2), entry.get("stride")))
        else:
            raise FormatError(f"{where}: unknown layer kind")
    extents.sort()
    for (a, wa), (b, wb) in zip(extents, extents[1:]):
        if b[0] < a[1]:
            raise FormatError(f"{wb}: blob region overlaps {wa}")
    max_extent = max((e[1] for e, _ in extents), default=0)
    if len(blob) != max_extent:
        raise FormatError(f"{blob_path}: blob has {len(blob)} bytes, manifest covers {max_extent}")
    if not isinstance(doc.get("input_shape"), list):
        raise FormatError(f"{manifest_path}: missing input_shape")
    return Model(layers, doc["input_shape"], doc.get("num_classes"))


# ---------------------------------------------------------------- datasets

@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    split: str | None = None
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def inputs_for(self, model: Model):
        """Images reshaped to the model's input shape (sizes must agree)."""
        if len(self) == 0:
            return self.images.reshape((0,) + model.input_shape)
        if self.images.shape[1:] == model.input_shape:
            return self.images
        if int(np.prod(self.images.shape[1:])) != int(np.prod(model.input_shape)):
            raise ShapeError(f"dataset items have shape {self.images.shape[1:]}, model expects {model.input_shape}")
        return self.images.reshape((len(self),) + model.input_shape)

    def check_labels(self, num_classes):
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            bad = self.labels[(self.labels < 0) | (self.labels >= num_classes)][0]
            raise ConfigError(f"label {bad} outside [0, {num_classes})")

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(self.images[idx], self.labels[idx], self.split, self.ids[idx])


def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expect_magic):
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: file too short")
    if data[:4] == RAW_MAGIC:
        return _read_raw(path, data)
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expect_magic:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    payload = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    need = int(np.prod(dims))
    if payload.size != need:
        raise ShapeError(f"{path}: header declares {dims} ({need} values) but payload has {payload.size}")
    return payload.reshape(dims), True


def _read_raw(path, data):
    if len(data) < 8:
        raise FormatError(f"{path}: truncated raw-float header")
    ndim = struct.unpack("<I", data[4:8])[0]
    hdr = 8 + 4 * ndim
    if len(data) < hdr:
        raise FormatError(f"{path}: truncated raw-float header")
    dims = struct.unpack("<" + "I" * ndim, data[8:hdr])
    need = int(np.prod(dims))
    if len(data) - hdr != 4 * need:
        raise ShapeError(f"{path}: header declares {dims} but payload has {(len(data) - hdr) // 4} floats")
    arr = np.frombuffer(data, dtype="<f4", offset=hdr).astype(np.float64).reshape(dims)
    if arr.size and (arr.min() < 0 or arr.max() > 1 or not np.all(np.isfinite(arr))):
        raise FormatError(f"{path}: raw-float images must lie in [0, 1]")
    return arr, False


def load_dataset(image_path, label_path, split=None) -> LabeledDataset:
    images, is_uint8 = _read_idx(image_path, IDX_IMAGES_MAGIC)
    if images.ndim < 2:
        raise ShapeError(f"{image_path}: images need at least 2 dimensions")
    labels, _ = _read_idx(label_path, IDX_LABELS_MAGIC)
    if labels.ndim != 1:
        raise ShapeError(f"{label_path}: labels must be 1-d")
    if labels.shape[0] != images.shape[0]:
        raise ShapeError(f"{image_path}: {images.shape[0]} images but {label_path} has {labels.shape[0]} labels")
    images = images.astype(np.float64)
    if is_uint8:
        images /= 255.0
    return LabeledDataset(images, labels.astype(np.int64), split)


def save_idx_images(path, images_u8):
    arr = np.asarray(images_u8, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | arr.ndim) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def save_idx_labels(path, labels):
    arr = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, arr.shape[0]) + arr.tobytes())


def save_raw_images(path, images):
    arr = np.asarray(images, dtype="<f4")
    header = RAW_MAGIC + struct.pack("<I", arr.ndim) + struct.pack("<" + "I" * arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def save_dataset(ds: LabeledDataset, image_path, label_path, fmt="idx"):
    """Write ``ds``; ``fmt="idx"`` requires pixels that are multiples of 1/255."""
    if fmt == "idx":
        scaled = np.rint(ds.images * 255.0)
        if not np.allclose(scaled / 255.0, ds.images, rtol=0, atol=1e-12):
            raise FormatError("images are not 8-bit quantized; use fmt='raw'")
        save_idx_images(image_path, scaled.astype(np.uint8))
    elif fmt == "raw":
        save_raw_images(image_path, ds.images)
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    save_idx_labels(label_path, ds.labels)


# ---------------------------------------------------------------- graphs & reports

def dumps_canonical(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_report(doc, path=None):
    """Write a report document to ``path`` (or return the text when None)."""
    doc = dict(doc)
    doc.setdefault("version", REPORT_VERSION)
    text = dumps_canonical(doc)
    if path is not None:
        Path(path).write_text(text)
    return text


def save_decision_graph(graph, path):
    doc = {"format": GRAPH_FORMAT, "version": GRAPH_VERSION, **graph.to_dict()}
    Path(path).write_text(dumps_canonical(doc))


def load_decision_graph(path, expected=None):
    """Load a graph file.

    ``expected`` maps hyperparameter names (alpha, beta, k, m, U) to values
    requested elsewhere; mismatches warn and the file's values are kept.
    """
    from npcov.abstraction import DecisionGraph

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != GRAPH_FORMAT:
        raise FormatError(f"{path}: not a decision graph file")
    if doc.get("version") != GRAPH_VERSION:
        raise VersionMismatchError(f"{path}: version {doc.get('version')!r}, expected {GRAPH_VERSION}")
    graph = DecisionGraph.from_dict(doc)
    for key, want in (expected or {}).items():
        if want is None:
            continue
        have = graph.hyperparams().get(key)
        if have is not None and have != want:
            warnings.warn(f"{path}: {key}={have} in file overrides requested {want}", stacklevel=2)
    return graph
