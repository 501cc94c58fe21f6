"""Decision graphs: per-class clustering of training paths and path merging.

Training inputs are grouped by *predicted* class.  Within a class the
binary path vectors are clustered with k-means; each cluster's paths are
merged layer by layer into a union whose neurons carry the fraction of
member paths containing them, and neurons whose weight is strictly above
``beta`` form the cluster's abstract path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from npcov.cdp import Cdp, layer_offsets, stack_bits
from npcov.errors import ConfigError, InvariantError
from npcov.lrp import DEFAULT_EPSILON
from npcov.nn import Model
from npcov.pipeline import analyze_many

KMEANS_MAX_ITER = 300


# ---------------------------------------------------------------- k-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    objective: list  # value after every iteration
    iterations: int


def _sqdist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            rest = [i for i in range(n) if i not in chosen]
            nxt = rest[0]
        else:
            cum = np.cumsum(d2)
            nxt = int(np.searchsorted(cum, rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].astype(np.float64)


def kmeans(X, k, rng, max_iter=KMEANS_MAX_ITER) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding.

    Stops when no assignment changes.  An emptied cluster takes over the
    point farthest from its centre among clusters with more than one member.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or n < 1:
        raise ConfigError("k-means needs k >= 1 and at least one point")
    if n <= k:
        return KMeansResult(np.arange(n), X.copy(), [0.0], 0)
    centers = _kmeanspp(X, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sqdist(X, centers), axis=1)
        for c in range(k):
            if np.any(new == c):
                continue
            sizes = np.bincount(new, minlength=k)
            own = ((X - centers[new]) ** 2).sum(axis=1)
            own[sizes[new] <= 1] = -1.0
            p = int(np.argmax(own))
            new[p] = c
            centers[c] = X[p]
        for c in range(k):
            centers[c] = X[new == c].mean(axis=0)
        history.append(float(((X - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    return KMeansResult(labels, centers, history, it)


# ---------------------------------------------------------------- merging

@dataclass
class Cluster:
    class_id: int
    index: int
    member_ids: tuple
    centroid: np.ndarray


@dataclass
class MergedPath:
    neurons: tuple  # per layer: sorted union of member critical sets
    weights: tuple  # per layer: membership ratio of each neuron
    size: int


@dataclass
class AbstractCdp:
    layers: tuple  # per layer: neuron ids with weight > beta
    weights: tuple
    beta: float
    class_id: int = -1
    cluster_index: int = -1

    @property
    def width_fractions(self):
        return [len(l) for l in self.layers]


def cluster_class(cdps, k, seed, class_id=0, ids=None):
    """Split one class's paths into at most ``k`` clusters.

    Fewer than ``k`` paths give one singleton cluster per path.
    """
    if not cdps:
        raise ConfigError("cluster_class needs at least one path")
    if k < 1:
        raise ConfigError("k must be >= 1")
    ids = list(range(len(cdps))) if ids is None else list(ids)
    bits = stack_bits(cdps, cdps[0].layer_sizes).astype(np.float64)
    rng = np.random.default_rng([int(seed), int(class_id)])
    res = kmeans(bits, k, rng)
    clusters = []
    for j in range(res.centers.shape[0]):
        members = tuple(int(ids[i]) for i in np.flatnonzero(res.labels == j))
        clusters.append(Cluster(int(class_id), j, members, res.centers[j].copy()))
    return clusters, res


def merge_cluster(cdps) -> MergedPath:
    """Layer-wise union of the members' critical sets with membership weights."""
    if not cdps:
        raise ConfigError("cannot merge an empty cluster")
    size = len(cdps)
    neurons, weights = [], []
    for l in range(len(cdps[0].layer_sizes)):
        counts = np.zeros(cdps[0].layer_sizes[l], dtype=np.int64)
        for p in cdps:
            counts[np.asarray(p.ranked[l], dtype=np.intp)] += 1
        ids = np.flatnonzero(counts)
        neurons.append(ids)
        weights.append(counts[ids] / size)
    return MergedPath(tuple(neurons), tuple(weights), size)


def threshold_abstract(merged: MergedPath, beta: float, class_id=-1, cluster_index=-1) -> AbstractCdp:
    if not 0 <= beta < 1:
        raise ConfigError(f"beta must lie in [0, 1), got {beta}")
    layers, weights = [], []
    for ids, w in zip(merged.neurons, merged.weights):
        keep = w > beta
        layers.append(ids[keep])
        weights.append(w[keep])
    return AbstractCdp(tuple(layers), tuple(weights), float(beta), class_id, cluster_index)


# ---------------------------------------------------------------- graph

@dataclass
class GraphCluster:
    cluster: Cluster
    merged: MergedPath
    abstract: AbstractCdp
    member_paths: list  # per member: per layer sorted neuron ids
    member_acts: list  # per layer: (members x |abstract layer|) activations
    _bits: np.ndarray = field(default=None, repr=False)

    def member_bits(self, layer_sizes):
        if self._bits is None:
            offsets = layer_offsets(layer_sizes)
            bits = np.zeros((len(self.member_paths), offsets[-1]), dtype=np.uint8)
            for i, path in enumerate(self.member_paths):
                for l, ids in enumerate(path):
                    bits[i, offsets[l] + np.asarray(ids, dtype=np.intp)] = 1
            self._bits = bits
        return self._bits


@dataclass
class DecisionGraph:
    num_classes: int
    layer_sizes: tuple
    alpha: float
    beta: float
    k: int
    seed: int
    m: int = 200
    U: float = 2.0
    epsilon: float = DEFAULT_EPSILON
    clusters: dict = field(default_factory=dict)  # class -> list[GraphCluster]
    profile: dict | None = None  # {"min": [...], "max": [...]} per global neuron

    def hyperparams(self):
        return {"alpha": self.alpha, "beta": self.beta, "k": self.k, "m": self.m, "U": self.U,
                "seed": self.seed, "epsilon": self.epsilon}

    def paths(self, y):
        return [gc.abstract for gc in self.clusters.get(int(y), [])]

    def cluster_count(self, y):
        return len(self.clusters.get(int(y), []))

    # -- serialization
    def to_dict(self):
        classes = []
        for y in range(self.num_classes):
            entries = []
            for gc in self.clusters.get(y, []):
                entries.append({
                    "index": gc.cluster.index,
                    "members": list(gc.cluster.member_ids),
                    "centroid": gc.cluster.centroid.tolist(),
                    "merged": [{"neurons": n.tolist(), "weights": w.tolist()}
                               for n, w in zip(gc.merged.neurons, gc.merged.weights)],
                    "abstract": [a.tolist() for a in gc.abstract.layers],
                    "member_paths": [[list(map(int, ids)) for ids in p] for p in gc.member_paths],
                    "member_activations": [a.tolist() for a in gc.member_acts],
                })
            classes.append({"class": y, "clusters": entries})
        return {
            "hyperparams": self.hyperparams(),
            "num_classes": self.num_classes,
            "layer_sizes": list(self.layer_sizes),
            "classes": classes,
            "profile": self.profile,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            hp = doc["hyperparams"]
            graph = cls(int(doc["num_classes"]), tuple(int(s) for s in doc["layer_sizes"]),
                        float(hp["alpha"]), float(hp["beta"]), int(hp["k"]), int(hp["seed"]),
                        int(hp["m"]), float(hp["U"]), float(hp.get("epsilon", DEFAULT_EPSILON)),
                        profile=doc.get("profile"))
            for entry in doc["classes"]:
                y = int(entry["class"])
                lst = []
                for c in entry["clusters"]:
                    cluster = Cluster(y, int(c["index"]), tuple(int(i) for i in c["members"]),
                                      np.asarray(c["centroid"], dtype=np.float64))
                    merged = MergedPath(
                        tuple(np.asarray(m["neurons"], dtype=np.intp) for m in c["merged"]),
                        tuple(np.asarray(m["weights"], dtype=np.float64) for m in c["merged"]),
                        len(cluster.member_ids))
                    abstract = AbstractCdp(tuple(np.asarray(a, dtype=np.intp) for a in c["abstract"]), (),
                                           graph.beta, y, cluster.index)
                    paths = [tuple(np.asarray(ids, dtype=np.intp) for ids in p) for p in c["member_paths"]]
                    acts = [np.asarray(a, dtype=np.float64).reshape(len(paths), -1) for a in c["member_activations"]]
                    lst.append(GraphCluster(cluster, merged, abstract, paths, acts))
                graph.clusters[y] = lst
        except (KeyError, TypeError, ValueError) as exc:
            raise InvariantError(f"malformed decision graph: {exc!r}") from None
        graph.validate()
        return graph

    def validate(self):
        """Check every stored weight and abstract set against the member paths."""
        nl = len(self.layer_sizes)
        for y, lst in self.clusters.items():
            for gc in lst:
                where = f"class {y} cluster {gc.cluster.index}"
                size = len(gc.cluster.member_ids)
                if size == 0 or len(gc.member_paths) != size:
                    raise InvariantError(f"{where}: member list and member paths disagree")
                if len(gc.merged.neurons) != nl or len(gc.abstract.layers) != nl or len(gc.member_acts) != nl:
                    raise InvariantError(f"{where}: wrong number of layers")
                weights = []
                for l in range(nl):
                    w = gc.merged.weights[l]
                    if np.any(w <= 0) or np.any(w > 1):
                        raise InvariantError(f"{where} layer {l}: weights must lie in (0, 1]")
                    counts = np.zeros(self.layer_sizes[l], dtype=np.int64)
                    for p in gc.member_paths:
                        if len(p[l]) and (np.max(p[l]) >= self.layer_sizes[l] or np.min(p[l]) < 0):
                            raise InvariantError(f"{where} layer {l}: neuron id out of range")
                        counts[p[l]] += 1
                    ids = np.flatnonzero(counts)
                    if not np.array_equal(ids, gc.merged.neurons[l]) or not np.array_equal(counts[ids] / size, w):
                        raise InvariantError(f"{where} layer {l}: weights do not match member paths")
                    expect = ids[w > self.beta]
                    if not np.array_equal(expect, gc.abstract.layers[l]):
                        raise InvariantError(f"{where} layer {l}: abstract set does not match beta filter")
                    if gc.member_acts[l].shape != (size, len(expect)):
                        raise InvariantError(f"{where} layer {l}: activation snapshot has wrong shape")
                    weights.append(w[w > self.beta])
                gc.abstract.weights = tuple(weights)

    def __eq__(self, other):
        if not isinstance(other, DecisionGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def build_decision_graph(model: Model, train, alpha, beta, k, seed=0, m=200, U=2.0, threads=1,
                         epsilon=DEFAULT_EPSILON, analyses=None):
    """Run the full pipeline on ``train`` and return ``(graph, report)``.

    ``analyses`` may carry precomputed per-input analyses aligned with
    ``train`` (see :func:`npcov.pipeline.analyze_many`).
    """
    if not 0 < alpha <= 1 or not 0 <= beta < 1 or k < 1:
        raise ConfigError("need 0 < alpha <= 1, 0 <= beta < 1 and k >= 1")
    X = train.inputs_for(model)
    order = np.argsort(train.ids, kind="stable")
    if analyses is None:
        analyses = analyze_many(model, X[order], alpha, threads, epsilon)
    else:
        analyses = [analyses[i] for i in order]
    ids = train.ids[order]
    sizes = tuple(model.layer_sizes)

    graph = DecisionGraph(model.num_classes, sizes, float(alpha), float(beta), int(k), int(seed),
                          int(m), float(U), float(epsilon))
    if len(analyses):
        all_acts = np.stack([np.concatenate(a.activations) for a in analyses])
        graph.profile = {"min": all_acts.min(axis=0).tolist(), "max": all_acts.max(axis=0).tolist()}

    report = {"classes": [], "empty_classes": [], "inputs": int(len(analyses))}
    for y in range(model.num_classes):
        idx = [i for i, a in enumerate(analyses) if a.predicted == y]
        if not idx:
            graph.clusters[y] = []
            report["empty_classes"].append(y)
            continue
        cdps = [analyses[i].cdp for i in idx]
        clusters, _ = cluster_class(cdps, k, seed, class_id=y, ids=[int(ids[i]) for i in idx])
        pos_of = {int(ids[i]): i for i in idx}
        entries = []
        cls_report = {"class": y, "members": len(idx), "clusters": []}
        for cl in clusters:
            members = [analyses[pos_of[mid]] for mid in cl.member_ids]
            merged = merge_cluster([a.cdp for a in members])
            abstract = threshold_abstract(merged, beta, y, cl.index)
            acts = [np.array([a.activations[l][abstract.layers[l]] for a in members]).reshape(len(members), -1)
                    for l in range(len(sizes))]
            paths = [a.cdp.layers for a in members]
            entries.append(GraphCluster(cl, merged, abstract, paths, acts))
            cls_report["clusters"].append({
                "index": cl.index,
                "size": len(cl.member_ids),
                "abstract_width": float(np.mean([len(a) / n for a, n in zip(abstract.layers, sizes)])),
                "empty_layers": [l for l, a in enumerate(abstract.layers) if len(a) == 0],
            })
        graph.clusters[y] = entries
        report["classes"].append(cls_report)
    graph.validate()
    return graph, report
