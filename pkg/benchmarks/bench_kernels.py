"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]
"""

import argparse
import json
import timeit

import numpy as np

from npcov import kernels
from npcov.cdp import layer_offsets
from npcov.coverage import CoverageConfig, coverage
from npcov.fixtures import load_fixture
from npcov.abstraction import build_decision_graph
from npcov.pipeline import analyze_many


def kernel_cases(rng, ref):
    x = rng.normal(size=(6, 28, 28))
    w = rng.normal(size=(12, 6, 3, 3))
    b = rng.normal(size=12)
    z = ref.conv2d_forward(x, w, b, 1, 1)
    r = rng.normal(size=z.shape)
    p = rng.normal(size=(12, 28, 28))
    py = ref.maxpool_forward(p, 2, 2)
    pr = rng.normal(size=py.shape)
    sizes = [128, 64]
    off = layer_offsets(sizes)
    a_bits = (rng.random((200, off[-1])) < 0.08).astype(np.uint8)
    b_bits = (rng.random((40, off[-1])) < 0.08).astype(np.uint8)
    return {
        "conv2d_forward": lambda m: m.conv2d_forward(x, w, b, 1, 1),
        "conv2d_relevance": lambda m: m.conv2d_relevance(x, w, z, r, 1, 1, 1e-6),
        "maxpool_forward": lambda m: m.maxpool_forward(p, 2, 2),
        "maxpool_relevance": lambda m: m.maxpool_relevance(p, py, pr, 2, 2),
        "path_similarity_200x40": lambda m: m.path_similarity_matrix(a_bits, b_bits, list(off)),
    }


def end_to_end(n=300):
    model, train, test = load_fixture("convnet")
    sub = train.subset(np.arange(600))
    graph, _ = build_decision_graph(model, sub, 0.9, 0.6, 4, analyses=analyze_many(model, sub.inputs_for(model), 0.9))
    X = test.inputs_for(model)[:n]
    return lambda: coverage(X, model, CoverageConfig("snpc"), graph)


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    mods = kernels.backends()
    cases = kernel_cases(np.random.default_rng(0), mods["python"])
    results = {}
    for name, fn in cases.items():
        results[name] = {b: best_of(lambda: fn(m), args.repeat) for b, m in mods.items()}

    run = end_to_end()
    results["snpc_convnet_300_inputs"] = {}
    saved = kernels._impl
    for b, m in mods.items():
        kernels._impl = m
        results["snpc_convnet_300_inputs"][b] = best_of(run, max(1, args.repeat // 2))
    kernels._impl = saved

    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
        return
    print(f"{'case':28s}" + "".join(f"{b:>14s}" for b in mods) + ("       speedup" if "cython" in mods else ""))
    for name, row in results.items():
        line = f"{name:28s}" + "".join(f"{row[b] * 1e3:12.3f}ms" for b in mods)
        if "cython" in row:
            line += f"{row['python'] / row['cython']:13.1f}x"
        print(line)


if __name__ == "__main__":
    main()
