"""Experimental procedures: masking studies, similarity, tuning, error
sensitivity and timing."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from npcov.abstraction import build_decision_graph, cluster_class
from npcov.cdp import Cdp, extract_cdp, similarity_matrix
from npcov.coverage import (CoverageConfig, _resolve_profile, analyze_suite, cells_for, coverage_from_analyses,
                            denominator)
from npcov.errors import ConfigError
from npcov.lrp import relevance
from npcov.nn import Model, forward, predict_masked
from npcov.pipeline import InputAnalysis, analyze_many, parallel_map

SCOPES = ("none", "cdp", "ncdp", "abstract_cdp", "abstract_ncdp")
DEFAULT_ALPHAS = (0.7, 0.8, 0.9, 1.0)
DEFAULT_BETAS = (0.6, 0.7, 0.8, 0.9)
DEFAULT_KS = (1, 4, 7)


@dataclass
class MaskReport:
    scope: str
    flipped: int
    total: int
    config: dict = field(default_factory=dict)

    @property
    def rate(self):
        return self.flipped / self.total if self.total else 0.0

    def to_dict(self):
        return {"scope": self.scope, "rate": self.rate, "flipped": self.flipped, "total": self.total,
                "config": self.config}


def _complement(sets, sizes):
    out = []
    for ids, n in zip(sets, sizes):
        keep = np.ones(n, dtype=bool)
        keep[np.asarray(ids, dtype=np.intp)] = False
        out.append(np.flatnonzero(keep))
    return out


def _flip_count(model, X, analyses, masks, threads):
    def one(i):
        return predict_masked(model, X[i], masks[i]) != analyses[i].predicted

    return int(sum(parallel_map(one, range(len(X)), threads)))


def inconsistency_rate(model: Model, X, scope, alpha=None, graph=None, dataset=None, analyses=None, threads=1):
    """Fraction of inputs whose prediction changes under a mask.

    Per-input scopes (``cdp``, ``ncdp``) mask each input's own path computed
    at ``alpha``.  Abstract scopes mask one cluster's abstract path (or its
    complement) for every member of that cluster; they read the members
    from ``dataset`` by id and ignore ``X``.
    """
    if scope not in SCOPES:
        raise ConfigError(f"unknown mask scope {scope!r}")
    if scope.startswith("abstract"):
        if graph is None or dataset is None:
            raise ConfigError("abstract scopes need a decision graph and the training dataset")
        return _abstract_rate(model, graph, dataset, scope, threads)
    X = np.asarray(X, dtype=np.float64)
    if scope == "none":
        return MaskReport(scope, 0, len(X), {})
    if analyses is None:
        if alpha is None:
            raise ConfigError("per-input scopes need alpha")
        analyses = analyze_many(model, X, alpha, threads)
    if scope == "cdp":
        masks = [a.cdp.as_mask() for a in analyses]
    else:
        masks = [dict(enumerate(a.cdp.complement())) for a in analyses]
    alpha = analyses[0].cdp.alpha if analyses else alpha
    return MaskReport(scope, _flip_count(model, X, analyses, masks, threads), len(X), {"alpha": alpha})


def _abstract_rate(model, graph, dataset, scope, threads):
    X = dataset.inputs_for(model)
    row_of = {int(i): r for r, i in enumerate(dataset.ids)}
    sizes = list(graph.layer_sizes)
    rows, masks, preds = [], [], []
    for y in sorted(graph.clusters):
        for gc in graph.clusters[y]:
            sets = gc.abstract.layers if scope == "abstract_cdp" else _complement(gc.abstract.layers, sizes)
            mask = {l: np.asarray(s, dtype=np.intp) for l, s in enumerate(sets)}
            for mid in gc.cluster.member_ids:
                rows.append(row_of[mid])
                masks.append(mask)
                preds.append(y)

    def one(i):
        return predict_masked(model, X[rows[i]], masks[i]) != preds[i]

    flipped = int(sum(parallel_map(one, range(len(rows)), threads)))
    return MaskReport(scope, flipped, len(rows), {"k": graph.k, "beta": graph.beta, "alpha": graph.alpha})


def quintile_parts(cdp: Cdp, parts=5):
    """Split each layer's ranked path into ``parts`` nearly equal slices.

    Earlier (more relevant) slices take the remainder.
    """
    out = [dict() for _ in range(parts)]
    for l, ranked in enumerate(cdp.ranked):
        for q, chunk in enumerate(np.array_split(np.asarray(ranked, dtype=np.intp), parts)):
            out[q][l] = np.sort(chunk)
    return out


def quintile_mask(model: Model, X, alpha, analyses=None, threads=1):
    X = np.asarray(X, dtype=np.float64)
    if analyses is None:
        analyses = analyze_many(model, X, alpha, threads)
    parts = [quintile_parts(a.cdp) for a in analyses]
    reports = []
    for q in range(5):
        masks = [p[q] for p in parts]
        reports.append(MaskReport(f"quintile{q + 1}", _flip_count(model, X, analyses, masks, threads), len(X),
                                  {"alpha": alpha}))
    return reports


# ---------------------------------------------------------------- similarity

def _pair_mean(sim, mask):
    np.fill_diagonal(mask, False)
    return float(sim[mask].mean()) if mask.any() else float("nan")


def similarity_stats(cdps, classes, clusters=None):
    """Mean pairwise path similarity within/between classes (and clusters).

    ``clusters`` gives each path's cluster index inside its class.
    """
    if not cdps:
        raise ConfigError("no paths")
    sim = similarity_matrix(cdps, cdps, cdps[0].layer_sizes)
    classes = np.asarray(classes)
    same_class = classes[:, None] == classes[None, :]
    out = {"intra_class": _pair_mean(sim, same_class.copy()), "inter_class": _pair_mean(sim, ~same_class)}
    if clusters is not None:
        clusters = np.asarray(clusters)
        same_cluster = same_class & (clusters[:, None] == clusters[None, :])
        out["intra_cluster"] = _pair_mean(sim, same_cluster.copy())
        out["inter_cluster"] = _pair_mean(sim, same_class & ~same_cluster)
    return out


def similarity_study(model: Model, dataset, alpha, k=4, per_class=100, seed=0, threads=1):
    """Sample correctly predicted inputs per class and compare their paths."""
    X = dataset.inputs_for(model)
    analyses = analyze_many(model, X, alpha, threads)
    rng = np.random.default_rng(seed)
    chosen = []
    for y in range(model.num_classes):
        idx = [i for i, a in enumerate(analyses) if a.predicted == y and dataset.labels[i] == y]
        if len(idx) > per_class:
            idx = sorted(rng.choice(idx, size=per_class, replace=False).tolist())
        chosen.extend(idx)
    present = {analyses[i].predicted for i in chosen}
    if len(present) < 2:
        raise ConfigError("similarity study needs at least two classes")
    cdps = [analyses[i].cdp for i in chosen]
    classes = [analyses[i].predicted for i in chosen]
    cluster_of = np.zeros(len(chosen), dtype=np.int64)
    for y in present:
        pos = [p for p, c in enumerate(classes) if c == y]
        clusters, _ = cluster_class([cdps[p] for p in pos], k, seed, class_id=y, ids=pos)
        for cl in clusters:
            cluster_of[list(cl.member_ids)] = cl.index
    stats = similarity_stats(cdps, classes, cluster_of)
    stats.update({"samples": len(chosen), "alpha": alpha, "k": k,
                  "width": float(np.mean([c.width for c in cdps]))})
    return stats


# ---------------------------------------------------------------- tuning

@dataclass
class TuneRow:
    alpha: float
    beta: float
    k: int
    width: float
    inc_c: float
    inc_nc: float
    abstract_width: float
    abstract_inc_c: float
    abstract_inc_nc: float
    feasible: bool = False

    def to_dict(self):
        return asdict(self)


def tune_hyperparameters(model: Model, train, alphas=DEFAULT_ALPHAS, betas=DEFAULT_BETAS, ks=DEFAULT_KS, seed=0,
                         min_inc_c=0.9, max_inc_nc=None, threads=1):
    """Evaluate every (alpha, beta, k) by masking; return rows ranked best first.

    Feasible rows (abstract Inc.C >= ``min_inc_c`` and, when given,
    abstract Inc.NC <= ``max_inc_nc``) come first, ordered by abstract
    width then abstract Inc.NC; ties and infeasible rows fall back to
    (alpha, beta, k) ascending.
    """
    if not alphas or not betas or not ks:
        raise ConfigError("hyperparameter grids must be non-empty")
    X = train.inputs_for(model)
    rows = []
    for alpha in sorted(alphas):
        analyses = analyze_many(model, X, alpha, threads)
        width = float(np.mean([a.cdp.width for a in analyses])) if analyses else 0.0
        inc_c = inconsistency_rate(model, X, "cdp", analyses=analyses, threads=threads).rate
        inc_nc = inconsistency_rate(model, X, "ncdp", analyses=analyses, threads=threads).rate
        for k in sorted(ks):
            for beta in sorted(betas):
                graph, _ = build_decision_graph(model, train, alpha, beta, k, seed, analyses=analyses)
                ac = inconsistency_rate(model, None, "abstract_cdp", graph=graph, dataset=train, threads=threads)
                anc = inconsistency_rate(model, None, "abstract_ncdp", graph=graph, dataset=train, threads=threads)
                aw = [np.mean([len(s) / n for s, n in zip(gc.abstract.layers, graph.layer_sizes)])
                      for lst in graph.clusters.values() for gc in lst]
                row = TuneRow(alpha, beta, k, width, inc_c, inc_nc, float(np.mean(aw)) if aw else 0.0,
                              ac.rate, anc.rate)
                row.feasible = row.abstract_inc_c >= min_inc_c and (max_inc_nc is None or row.abstract_inc_nc <= max_inc_nc)
                rows.append(row)
    rows.sort(key=lambda r: (not r.feasible, r.abstract_width if r.feasible else 0.0,
                             r.abstract_inc_nc if r.feasible else 0.0, r.alpha, r.beta, r.k))
    return rows


# ---------------------------------------------------------------- error sensitivity

def normalized_coverage_change(base, values):
    """Return ``(ncov, degenerate)`` for coverage ``values`` against ``base``.

    The spread is taken over all changes including the base suite's own 0.
    """
    deltas = [v - base for v in values]
    spread = max(deltas + [0.0]) - min(deltas + [0.0])
    if spread == 0:
        return [0.0] * len(values), True
    return [d / spread for d in deltas], False


def inject_errors(benign_idx, error_idx, percents, size, rng):
    """Build nested suites of ``size`` where p% of a benign base is replaced by errors."""
    base = rng.choice(benign_idx, size=size, replace=False)
    errors = rng.permutation(error_idx)
    slots = rng.permutation(size)
    suites = []
    for p in percents:
        n = int(round(size * p / 100.0))
        if n > len(errors):
            raise ConfigError(f"need {n} error inputs, only {len(errors)} available")
        suite = base.copy()
        suite[slots[:n]] = errors[:n]
        suites.append(suite)
    return suites


def error_sensitivity(model: Model, graph, dataset, percents=(0, 1, 2, 3, 5, 7, 10), size=1000, repeats=5,
                      seed=0, criterion="snpc", config=None, threads=1):
    """Mean NCov per error percentage over ``repeats`` random suite families.

    Benign inputs are the correctly predicted rows of ``dataset``; errors
    are the mispredicted ones.  The first percentage is the base suite.
    """
    config = config or CoverageConfig(criterion, m=graph.m, U=graph.U)
    X = dataset.inputs_for(model)
    analyses = analyze_suite(model, X, config, graph, threads)
    preds = np.array([a.predicted for a in analyses])
    benign = np.flatnonzero(preds == dataset.labels)
    errors = np.flatnonzero(preds != dataset.labels)
    cells = None
    if config.criterion != "impartiality":
        profile = _resolve_profile(config, graph, None)
        cells = [cells_for(a, config, graph, profile) for a in analyses]
    runs = []
    raw = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        suites = inject_errors(benign, errors, percents, size, rng)
        if cells is not None:
            den = denominator(config.criterion, model, config, graph)
            covs = [len(frozenset().union(*(cells[i] for i in s))) / den for s in suites]
        else:
            covs = [coverage_from_analyses([analyses[i] for i in s], model, config, graph).value for s in suites]
        ncov, _ = normalized_coverage_change(covs[0], covs)
        runs.append(ncov)
        raw.append(covs)
    mean = np.mean(runs, axis=0).tolist()
    return {"percents": list(percents), "ncov": mean, "runs": runs, "coverage": raw,
            "benign": int(len(benign)), "errors": int(len(errors)), "criterion": config.criterion}


# ---------------------------------------------------------------- timing

def timing(model: Model, X, criteria=("snpc", "anpc", "nc", "kmnc", "nbc"), graph=None, profile=None, m=None, U=None):
    """Wall-clock seconds per criterion; path criteria also report extraction time."""
    X = np.asarray(X, dtype=np.float64)
    out = {}
    for crit in criteria:
        cfg = CoverageConfig(crit, m=m or (graph.m if graph else 200), U=U or (graph.U if graph else 2.0))
        prof = _resolve_profile(cfg, graph, profile)
        t0 = time.perf_counter()
        extraction = 0.0
        analyses = []
        for x in X:
            trace = forward(model, x)
            if crit in ("snpc", "anpc"):
                e0 = time.perf_counter()
                cdp = extract_cdp(relevance(model, trace, epsilon=graph.epsilon), graph.alpha)
                extraction += time.perf_counter() - e0
            else:
                cdp = None
            analyses.append(InputAnalysis(trace.predicted, trace.g_value, cdp, trace.activations(model)))
        if crit == "impartiality":
            if analyses:
                coverage_from_analyses(analyses, model, cfg, graph)
        else:
            frozenset().union(*(cells_for(a, cfg, graph, prof) for a in analyses))
        total = time.perf_counter() - t0
        entry = {"total": total, "inputs": len(X)}
        if crit in ("snpc", "anpc"):
            entry["extraction"] = extraction
        out[crit] = entry
    return out
