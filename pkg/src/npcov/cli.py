"""Command-line front end.

    npcov extract      --model M --images I --labels L --alpha A
    npcov build-graph  --model M --images I --labels L --alpha A --beta B --clusters K --graph-out G
    npcov coverage     --model M --images I --labels L --criterion C [--graph G]
    npcov mask-eval    --model M --images I --labels L [--scopes cdp,ncdp] [--graph G] [--quintiles]
    npcov tune         --model M --images I --labels L [--alphas ..] [--betas ..] [--ks ..]
    npcov report KIND  --model M --images I --labels L ...   (KIND: ncov, impartiality, timing, similarity)

Reports are JSON documents written to ``--output`` or stdout; every report
carries the resolved configuration.  Logs go to stderr.  A failure prints
one line ``npcov: error[<class>]: <message>`` and exits with the code in
``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from npcov import evaluation, kernels
from npcov.abstraction import build_decision_graph
from npcov.cdp import extract_cdp
from npcov.coverage import CRITERIA, CoverageConfig, coverage, profile_activations
from npcov.errors import ConfigError, FormatError, InvariantError, NpcError
from npcov.io import _model_paths, load_dataset, load_decision_graph, load_model, save_decision_graph, write_report
from npcov.lrp import DEFAULT_EPSILON, dump_relevance, relevance
from npcov.nn import forward
from npcov.pipeline import analyze_many, parallel_map

log = logging.getLogger("npcov")

EXIT_CODES = {"ok": 0, "config": 2, "io": 3, "format": 4, "invariant": 5}

# keys that never change structured output and are left out of reports
_UNREPORTED = {"func", "threads", "output", "verbose", "format"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _words(text):
    return [t.strip() for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------- loading

def _load_model(args):
    manifest, blob = _model_paths(args.model)
    if getattr(args, "blob", None):
        blob = args.blob
    return load_model(manifest, blob)


def _load_data(args, model, images=None, labels=None):
    ds = load_dataset(images or args.images, labels or args.labels)
    ds.check_labels(model.num_classes)
    ds.inputs_for(model)
    return ds


def _load_graph(args, **expected):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        graph = load_decision_graph(args.graph, expected)
    for w in caught:
        log.warning("%s", w.message)
    return graph


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNREPORTED}


# ---------------------------------------------------------------- commands

def cmd_extract(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    X = ds.inputs_for(model)

    def one(x):
        trace = forward(model, x)
        rel = relevance(model, trace, epsilon=args.epsilon)
        return rel, extract_cdp(rel, args.alpha)

    results = parallel_map(one, X, args.threads)
    if args.relevance_out:
        dump_relevance([r for r, _ in results], args.relevance_out)
    inputs = []
    for i, (_, cdp) in zip(ds.ids, results):
        entry = cdp.to_dict()
        entry["id"] = int(i)
        inputs.append(entry)
    widths = [c.width for _, c in results]
    return {"command": "extract", "inputs": inputs, "layer_sizes": list(model.layer_sizes),
            "mean_width": float(np.mean(widths)) if widths else 0.0}


def cmd_build_graph(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    graph, report = build_decision_graph(model, ds, args.alpha, args.beta, args.clusters, args.seed,
                                         m=args.buckets, U=args.upper_bound, threads=args.threads,
                                         epsilon=args.epsilon)
    if args.graph_out:
        save_decision_graph(graph, args.graph_out)
        log.info("wrote %s", args.graph_out)
    return {"command": "build-graph", "build": report, "hyperparams": graph.hyperparams()}


def _coverage_config(args, graph):
    m, U = args.buckets, args.upper_bound
    if graph is not None:
        m, U = graph.m, graph.U
    return CoverageConfig(args.criterion, m=m if m is not None else 200, U=U if U is not None else 2.0,
                          nc_threshold=args.nc_threshold, kmnc_k=args.kmnc_k, nbc_k=args.nbc_k)


def _profile(args, model):
    if args.profile_images and args.profile_labels:
        train = _load_data(args, model, args.profile_images, args.profile_labels)
        return profile_activations(model, train.inputs_for(model), args.threads)
    return None


def cmd_coverage(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    graph = None
    if args.graph:
        graph = _load_graph(args, m=args.buckets, U=args.upper_bound)
    elif args.criterion in ("snpc", "anpc"):
        raise ConfigError(f"--criterion {args.criterion} needs --graph")
    config = _coverage_config(args, graph)
    res = coverage(ds, model, config, graph=graph, profile=_profile(args, model), threads=args.threads)
    return {"command": "coverage", "criterion": config.criterion, "coverage": res.value, "details": res.report}


def cmd_mask_eval(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    X = ds.inputs_for(model)
    scopes = _words(args.scopes)
    for s in scopes:
        if s not in evaluation.SCOPES:
            raise ConfigError(f"unknown scope {s!r}; choose from {', '.join(evaluation.SCOPES)}")
    graph = _load_graph(args, alpha=args.alpha) if args.graph else None
    analyses = None
    if args.only_correct or any(s in ("cdp", "ncdp") for s in scopes) or args.quintiles:
        analyses = analyze_many(model, X, args.alpha, args.threads, args.epsilon)
    if args.only_correct:
        keep = [i for i, a in enumerate(analyses) if a.predicted == ds.labels[i]]
        X = X[keep]
        analyses = [analyses[i] for i in keep]
    rows = []
    for s in scopes:
        rep = evaluation.inconsistency_rate(model, X, s, alpha=args.alpha, graph=graph, dataset=ds,
                                            analyses=analyses, threads=args.threads)
        rows.append(rep.to_dict())
    if args.quintiles:
        rows += [r.to_dict() for r in evaluation.quintile_mask(model, X, args.alpha, analyses, args.threads)]
    return {"command": "mask-eval", "reports": rows}


def cmd_tune(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    rows = evaluation.tune_hyperparameters(model, ds, _floats(args.alphas), _floats(args.betas), _ints(args.ks),
                                           seed=args.seed, min_inc_c=args.min_inc_c, max_inc_nc=args.max_inc_nc,
                                           threads=args.threads)
    return {"command": "tune", "ranked": [r.to_dict() for r in rows],
            "best": rows[0].to_dict() if rows and rows[0].feasible else None}


def cmd_report(args):
    model = _load_model(args)
    ds = _load_data(args, model)
    kind = args.kind
    if kind == "impartiality":
        res = coverage(ds, model, CoverageConfig("impartiality"), threads=args.threads)
        return {"command": "report", "kind": kind, "impartiality": res.value, "details": res.report}
    if kind == "similarity":
        stats = evaluation.similarity_study(model, ds, args.alpha, k=args.clusters, per_class=args.per_class,
                                            seed=args.seed, threads=args.threads)
        return {"command": "report", "kind": kind, "similarity": stats}
    graph = _load_graph(args) if args.graph else None
    if kind == "ncov":
        if graph is None:
            raise ConfigError("report ncov needs --graph")
        out = evaluation.error_sensitivity(model, graph, ds, percents=tuple(_floats(args.percents)),
                                           size=args.suite_size, repeats=args.repeats, seed=args.seed,
                                           criterion=args.criterion, threads=args.threads)
        return {"command": "report", "kind": kind, "ncov": out}
    criteria = _words(args.criteria)
    if graph is None and any(c in ("snpc", "anpc", "kmnc", "nbc") for c in criteria):
        raise ConfigError("timing of path, KMNC or NBC criteria needs --graph")
    times = evaluation.timing(model, ds.inputs_for(model), criteria, graph=graph)
    return {"command": "report", "kind": kind, "timing": times, "backend": kernels.BACKEND}


# ---------------------------------------------------------------- parser

def _common(p, alpha=True):
    p.add_argument("--model", required=True, help="model manifest (the .bin blob sits next to it)")
    p.add_argument("--blob", help="weight blob, if not next to the manifest")
    p.add_argument("--images", required=True, help="IDX or raw-float image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--format", choices=("json", "text"), default="json", help="report format")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    if alpha:
        p.add_argument("--alpha", type=float, default=0.9)


def build_parser():
    parser = _Parser(prog="npcov", description="Neuron path coverage for feed-forward classifiers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="dump the critical decision path of every input")
    _common(p)
    p.add_argument("--relevance-out", help="also dump per-layer relevance vectors here")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-graph", help="build a decision graph from training data")
    _common(p)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--buckets", type=int, default=200)
    p.add_argument("--upper-bound", type=float, default=2.0)
    p.add_argument("--graph-out", help="decision-graph file to write")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("coverage", help="coverage of a test suite")
    _common(p, alpha=False)
    p.add_argument("--criterion", choices=CRITERIA, default="snpc")
    p.add_argument("--graph", help="decision-graph file (path criteria; also supplies KMNC/NBC ranges)")
    p.add_argument("--buckets", type=int, default=None, help="defaults to the graph's value, else 200")
    p.add_argument("--upper-bound", type=float, default=None, help="defaults to the graph's value, else 2.0")
    p.add_argument("--nc-threshold", type=float, default=0.0)
    p.add_argument("--kmnc-k", type=int, default=1000)
    p.add_argument("--nbc-k", type=int, default=10)
    p.add_argument("--profile-images", help="training images used to profile KMNC/NBC ranges")
    p.add_argument("--profile-labels")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("mask-eval", help="inconsistency rates under masking")
    _common(p)
    p.add_argument("--scopes", default="cdp,ncdp", help="comma list of " + ",".join(evaluation.SCOPES))
    p.add_argument("--graph", help="decision graph built from this dataset (abstract scopes)")
    p.add_argument("--quintiles", action="store_true", help="also mask each relevance quintile")
    p.add_argument("--only-correct", action="store_true", help="per-input scopes: keep correctly predicted inputs")
    p.set_defaults(func=cmd_mask_eval)

    p = sub.add_parser("tune", help="rank (alpha, beta, k) configurations by masking")
    _common(p, alpha=False)
    p.add_argument("--alphas", default="0.7,0.8,0.9,1.0")
    p.add_argument("--betas", default="0.6,0.7,0.8,0.9")
    p.add_argument("--ks", default="1,4,7")
    p.add_argument("--min-inc-c", type=float, default=0.9)
    p.add_argument("--max-inc-nc", type=float, default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="error sensitivity, impartiality, timing or similarity summaries")
    p.add_argument("kind", choices=("ncov", "impartiality", "timing", "similarity"))
    _common(p)
    p.add_argument("--graph")
    p.add_argument("--criterion", choices=CRITERIA, default="snpc")
    p.add_argument("--criteria", default="snpc,anpc,nc,kmnc,nbc", help="timing: comma list")
    p.add_argument("--percents", default="0,1,2,3,5,7,10")
    p.add_argument("--suite-size", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.set_defaults(func=cmd_report)
    return parser


def _render_text(doc, prefix=""):
    lines = []
    if isinstance(doc, dict):
        for k in sorted(doc):
            lines += _render_text(doc[k], f"{prefix}{k}.")
    elif isinstance(doc, list) and any(isinstance(v, (dict, list)) for v in doc):
        for i, v in enumerate(doc):
            lines += _render_text(v, f"{prefix}{i}.")
    else:
        lines.append(f"{prefix[:-1]}\t{doc}")
    return lines


def _error_class(exc):
    if isinstance(exc, InvariantError):
        return "invariant"
    if isinstance(exc, FormatError):
        return "format"
    if isinstance(exc, NpcError):
        return "config"
    return "io"


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, format="npcov: %(levelname)s: %(message)s", force=True)
    try:
        args = build_parser().parse_args(argv)
        log.setLevel(logging.INFO if args.verbose else logging.WARNING)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        doc = args.func(args)
        doc["config"] = _resolved(args)
        if args.format == "text":
            text = "\n".join(_render_text(doc)) + "\n"
            if args.output:
                with open(args.output, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        else:
            text = write_report(doc, args.output)
            if not args.output:
                sys.stdout.write(text)
    except (NpcError, OSError) as exc:
        kind = _error_class(exc)
        msg = " ".join(str(exc).split())
        print(f"npcov: error[{kind}]: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_CODES[kind]
    return 0


if __name__ == "__main__":
    sys.exit(main())
