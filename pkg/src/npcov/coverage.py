"""Path coverage (SNPC, ANPC), neuron-level baselines and output impartiality.

SNPC and ANPC cells are ``(class, cluster, layer, bucket)`` tuples with
1-based buckets.  A similarity or distance of exactly 0 falls in bucket 1,
and an ANPC distance above ``U`` is clamped into bucket ``m``.  Both
criteria divide by ``n * k * layers * m`` even when some classes have fewer
than ``k`` clusters or some abstract layers are empty.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from npcov import kernels
from npcov.cdp import Cdp, layer_offsets
from npcov.errors import ConfigError
from npcov.nn import Model, forward
from npcov.pipeline import InputAnalysis, analyze, parallel_map

CRITERIA = ("snpc", "anpc", "nc", "kmnc", "nbc", "impartiality")
PATH_CRITERIA = ("snpc", "anpc")


@dataclass(frozen=True)
class CoverageConfig:
    criterion: str = "snpc"
    m: int = 200
    U: float = 2.0
    nc_threshold: float = 0.0
    kmnc_k: int = 1000
    nbc_k: int = 10  # recorded only; NBC uses the profiled [min, max]

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.m < 1 or self.U <= 0 or self.kmnc_k < 1:
            raise ConfigError("need m >= 1, U > 0 and kmnc_k >= 1")


@dataclass(frozen=True)
class CoverageState:
    criterion: str
    covered: frozenset
    denominator: int
    config: tuple = ()  # sorted (key, value) pairs the cells depend on

    @property
    def value(self):
        if self.denominator == 0:
            return 0.0
        return len(self.covered) / self.denominator

    def merge(self, other: "CoverageState") -> "CoverageState":
        if (self.criterion, self.denominator, self.config) != (other.criterion, other.denominator, other.config):
            raise ConfigError("cannot merge coverage states with different configurations")
        return CoverageState(self.criterion, self.covered | other.covered, self.denominator, self.config)

    __or__ = merge


@dataclass
class Profile:
    """Per-neuron activation range observed on training data."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["min"], dtype=np.float64), np.asarray(doc["max"], dtype=np.float64))


def profile_activations(model: Model, X, threads=1) -> Profile:
    acts = np.stack(parallel_map(lambda x: np.concatenate(forward(model, x).activations(model)), X, threads))
    return Profile(acts.min(axis=0), acts.max(axis=0))


# ---------------------------------------------------------------- buckets

def jaccard_bucket(inter, union, m):
    """Bucket i with J in ((i-1)/m, i/m], J = inter/union; 0 -> 1; empty/empty -> m."""
    if union == 0:
        return m
    return max(1, -(-(inter * m) // union))


def distance_bucket(d, U, m):
    if d <= 0:
        return 1
    if d > U:
        return m
    return min(m, max(1, math.ceil(d / U * m)))


# ---------------------------------------------------------------- path cells

def snpc_cells(cdp: Cdp, graph, m) -> set:
    y = cdp.predicted_class
    cells = set()
    for gc in graph.clusters.get(y, []):
        for l, (mine, theirs) in enumerate(zip(cdp.ranked, gc.abstract.layers)):
            inter = len(np.intersect1d(mine, theirs, assume_unique=True))
            union = len(mine) + len(theirs) - inter
            cells.add((y, gc.cluster.index, l, jaccard_bucket(inter, union, m)))
    return cells


def nearest_member(cdp: Cdp, gc, layer_sizes):
    """Index of the member whose path is most similar to ``cdp`` (lowest id on ties)."""
    offsets = layer_offsets(layer_sizes)
    bits = np.zeros(offsets[-1], dtype=np.uint8)
    for l, r in enumerate(cdp.ranked):
        bits[offsets[l] + np.asarray(r, dtype=np.intp)] = 1
    sims = kernels.path_similarity_matrix(bits, gc.member_bits(layer_sizes), offsets)[0]
    best = sims.max()
    ids = np.asarray(gc.cluster.member_ids)
    cands = np.flatnonzero(sims == best)
    return int(cands[np.argmin(ids[cands])])


def anpc_cells(analysis: InputAnalysis, graph, m, U) -> set:
    y = analysis.predicted
    cells = set()
    for gc in graph.clusters.get(y, []):
        near = nearest_member(analysis.cdp, gc, graph.layer_sizes)
        for l, ids in enumerate(gc.abstract.layers):
            if len(ids) == 0:
                continue
            d = float(np.linalg.norm(analysis.activations[l][ids] - gc.member_acts[l][near]))
            cells.add((y, gc.cluster.index, l, distance_bucket(d, U, m)))
    return cells


# ---------------------------------------------------------------- neuron cells

def nc_cells(acts, threshold):
    return {int(i) for i in np.flatnonzero(acts > threshold)}


def kmnc_cells(acts, profile: Profile, k):
    lo, hi = profile.mins, profile.maxs
    inside = (acts >= lo) & (acts <= hi)
    span = hi - lo
    sec = np.zeros(acts.shape, dtype=np.int64)
    pos = span > 0
    sec[pos] = np.floor((acts[pos] - lo[pos]) / span[pos] * k).astype(np.int64)
    sec = np.clip(sec, 0, k - 1)
    return {(int(i), int(sec[i])) for i in np.flatnonzero(inside)}


def nbc_cells(acts, profile: Profile):
    cells = {(int(i), 0) for i in np.flatnonzero(acts < profile.mins)}
    cells |= {(int(i), 1) for i in np.flatnonzero(acts > profile.maxs)}
    return cells


def output_impartiality(predictions, num_classes) -> float:
    """Normalized entropy of the predicted-class distribution."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise ConfigError("output impartiality needs a non-empty suite")
    if num_classes == 1:
        return 1.0
    counts = np.bincount(predictions, minlength=num_classes).astype(np.float64)
    if np.all(counts == counts[0]):
        return 1.0  # exact for uniform suites; the float entropy can land a ulp below
    p = counts[counts > 0] / predictions.size
    h = float(-(p * np.log(p)).sum())
    return min(1.0, max(0.0, h / math.log(num_classes)))


# ---------------------------------------------------------------- driver

def denominator(criterion, model: Model, config: CoverageConfig, graph=None):
    if criterion in PATH_CRITERIA:
        return graph.num_classes * graph.k * len(graph.layer_sizes) * config.m
    if criterion == "nc":
        return model.num_neurons
    if criterion == "kmnc":
        return model.num_neurons * config.kmnc_k
    if criterion == "nbc":
        return 2 * model.num_neurons
    return 0


def _state_key(config: CoverageConfig):
    c = config.criterion
    keys = {"snpc": ("m",), "anpc": ("m", "U"), "nc": ("nc_threshold",), "kmnc": ("kmnc_k",), "nbc": ()}[c]
    return tuple((k, getattr(config, k)) for k in keys)


def empty_state(model, config, graph=None):
    return CoverageState(config.criterion, frozenset(), denominator(config.criterion, model, config, graph),
                         _state_key(config))


@dataclass
class CoverageResult:
    value: float
    state: CoverageState | None
    report: dict = field(default_factory=dict)


def cells_for(analysis: InputAnalysis, config: CoverageConfig, graph=None, profile=None):
    """Cells one analysed input contributes under ``config``."""
    c = config.criterion
    if c == "snpc":
        return snpc_cells(analysis.cdp, graph, config.m)
    if c == "anpc":
        return anpc_cells(analysis, graph, config.m, config.U)
    acts = np.concatenate(analysis.activations)
    if c == "nc":
        return nc_cells(acts, config.nc_threshold)
    if c == "kmnc":
        return kmnc_cells(acts, profile, config.kmnc_k)
    if c == "nbc":
        return nbc_cells(acts, profile)
    raise ConfigError(f"{c} has no cells")


def _resolve_profile(config, graph, profile):
    if config.criterion not in ("kmnc", "nbc"):
        return None
    if profile is None and graph is not None and graph.profile is not None:
        profile = Profile.from_dict(graph.profile)
    if profile is None:
        raise ConfigError(f"{config.criterion} needs a training-data profile")
    return profile


def analyze_suite(model, X, config, graph=None, threads=1):
    """Per-input analyses; path criteria use the graph's alpha and epsilon."""
    if config.criterion in PATH_CRITERIA:
        if graph is None:
            raise ConfigError(f"{config.criterion} needs a decision graph")
        return parallel_map(lambda x: analyze(model, x, graph.alpha, graph.epsilon), X, threads)

    def light(x):
        t = forward(model, x)
        return InputAnalysis(t.predicted, t.g_value, None, t.activations(model))

    return parallel_map(light, X, threads)


def coverage_from_analyses(analyses, model, config: CoverageConfig, graph=None, profile=None, threads=1):
    if config.criterion == "impartiality":
        preds = [a.predicted for a in analyses]
        value = output_impartiality(preds, model.num_classes) if preds else 0.0
        counts = np.bincount(np.asarray(preds, dtype=np.int64), minlength=model.num_classes)
        return CoverageResult(value, None, {"class_counts": counts.tolist(), "inputs": len(preds)})
    profile = _resolve_profile(config, graph, profile)
    state = empty_state(model, config, graph)
    skipped = 0
    if config.criterion in PATH_CRITERIA:
        skipped = sum(1 for a in analyses if graph.cluster_count(a.predicted) == 0)
    per_input = parallel_map(lambda a: cells_for(a, config, graph, profile), analyses, threads)
    covered = frozenset().union(*per_input) if per_input else frozenset()
    state = CoverageState(state.criterion, covered, state.denominator, state.config)
    report = {"inputs": len(analyses), "covered": len(covered), "denominator": state.denominator}
    if config.criterion in PATH_CRITERIA:
        per_cluster = {}
        for (y, j, _, _) in covered:
            key = f"{y}/{j}"
            per_cluster[key] = per_cluster.get(key, 0) + 1
        report["per_cluster"] = per_cluster
        report["skipped_inputs"] = skipped
        if config.criterion == "anpc":
            empty = sum(1 for lst in graph.clusters.values() for gc in lst for a in gc.abstract.layers if len(a) == 0)
            report["unreachable_cells"] = empty * config.m
    return CoverageResult(state.value, state, report)


def coverage(suite, model: Model, config: CoverageConfig, graph=None, profile=None, threads=1):
    """Coverage of a labelled suite (or an array of inputs) under ``config``."""
    X = suite.inputs_for(model) if hasattr(suite, "inputs_for") else np.asarray(suite, dtype=np.float64)
    if config.criterion == "impartiality" and len(X) == 0:
        raise ConfigError("output impartiality needs a non-empty suite")
    analyses = analyze_suite(model, X, config, graph, threads)
    res = coverage_from_analyses(analyses, model, config, graph, profile, threads)
    res.report["config"] = asdict(config)
    return res
