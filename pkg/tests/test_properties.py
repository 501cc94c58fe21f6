import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npcov.abstraction import merge_cluster, threshold_abstract
from npcov.cdp import Cdp, extract_cdp, layer_jaccard, path_similarity
from npcov.coverage import CoverageState, distance_bucket, jaccard_bucket
from npcov.lrp import relevance
from npcov.nn import forward

from helpers import random_mlp

neuron_sets = st.frozensets(st.integers(0, 15), max_size=16)


@st.composite
def paths(draw, n=st.integers(1, 8), sizes=(16, 16)):
    count = draw(n)
    out = []
    for _ in range(count):
        layers = [np.array(sorted(draw(st.frozensets(st.integers(0, s - 1), max_size=s))), dtype=np.intp)
                  for s in sizes]
        out.append(Cdp(tuple(layers), tuple(np.ones(len(l)) for l in layers), sizes, 0.9, 0, 1.0))
    return out


@st.composite
def nets(draw):
    depth = draw(st.integers(1, 3))
    sizes = [draw(st.integers(2, 8))] + [draw(st.integers(1, 16)) for _ in range(depth)] + [draw(st.integers(2, 4))]
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    return random_mlp(rng, sizes), rng.normal(size=sizes[0])


@given(st.integers(1, 50), st.data())
def test_jaccard_bucket_in_range_and_monotone(m, data):
    union = data.draw(st.integers(1, 40))
    i1 = data.draw(st.integers(0, union))
    i2 = data.draw(st.integers(i1, union))
    b1, b2 = jaccard_bucket(i1, union, m), jaccard_bucket(i2, union, m)
    assert 1 <= b1 <= b2 <= m
    # bucket b holds exactly the similarities in ((b-1)/m, b/m]
    if i1 > 0:
        assert (b1 - 1) * union < i1 * m <= b1 * union


@given(st.floats(0, 10, allow_nan=False), st.floats(0.01, 5), st.integers(1, 300))
def test_distance_bucket_in_range(d, U, m):
    b = distance_bucket(d, U, m)
    assert 1 <= b <= m
    if d >= U:
        assert b == m


@given(neuron_sets, neuron_sets)
def test_jaccard_axioms(a, b):
    j = layer_jaccard(a, b)
    assert 0.0 <= j <= 1.0
    assert j == layer_jaccard(b, a)
    assert layer_jaccard(a, a) == 1.0
    if a and b and not (a & b):
        assert j == 0.0
    if a != b:
        assert j < 1.0


@given(paths(n=st.just(2)))
def test_path_similarity_symmetric_and_bounded(ps):
    p, q = ps
    s = path_similarity(p, q)
    assert 0.0 <= s <= 1.0
    assert s == path_similarity(q, p)
    assert path_similarity(p, p) == 1.0


@given(nets())
@settings(max_examples=150, deadline=None)
def test_conservation_on_bias_free_nets(case):
    model, x = case
    rel = relevance(model, forward(model, x))
    bound = 1e-3 * max(1.0, abs(rel.seed_value))
    if rel.seed_value > 0:
        assert all(abs(r.sum() - rel.seed_value) <= bound for r in rel.layers if np.any(r))


@given(nets(), st.floats(0.1, 10))
@settings(max_examples=100, deadline=None)
def test_relevance_positively_homogeneous(case, c):
    # exact only as epsilon -> 0: the stabilizer does not scale with the input
    model, x = case
    r1 = relevance(model, forward(model, x), epsilon=1e-12)
    r2 = relevance(model, forward(model, c * x), epsilon=1e-12)
    assert r2.target_class == r1.target_class
    for a, b in zip(r1.layers, r2.layers):
        assert np.allclose(b, c * a, rtol=1e-6, atol=1e-9 * (1 + c))


@given(nets(), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
@settings(max_examples=150, deadline=None)
def test_alpha_nesting(case, a1, a2):
    model, x = case
    lo, hi = sorted((a1, a2))
    rel = relevance(model, forward(model, x))
    p, q = extract_cdp(rel, lo), extract_cdp(rel, hi)
    for s, t in zip(p.ranked, q.ranked):
        assert set(s.tolist()) <= set(t.tolist())
        # the smaller path is a prefix of the larger ranking
        assert t[:len(s)].tolist() == s.tolist()


@given(paths(), st.randoms(use_true_random=False))
def test_merge_order_independent(ps, rnd):
    shuffled = list(ps)
    rnd.shuffle(shuffled)
    a, b = merge_cluster(ps), merge_cluster(shuffled)
    for u, v in zip(a.neurons, b.neurons):
        assert np.array_equal(u, v)
    for u, v in zip(a.weights, b.weights):
        assert np.array_equal(u, v)


@given(paths(), paths())
def test_merge_is_count_weighted_combination(ps, qs):
    a, b, ab = merge_cluster(ps), merge_cluster(qs), merge_cluster(ps + qs)
    for l in range(len(ab.neurons)):
        wa = dict(zip(a.neurons[l].tolist(), a.weights[l]))
        wb = dict(zip(b.neurons[l].tolist(), b.weights[l]))
        for n, w in zip(ab.neurons[l].tolist(), ab.weights[l]):
            expect = (len(ps) * wa.get(n, 0.0) + len(qs) * wb.get(n, 0.0)) / (len(ps) + len(qs))
            assert w == pytest.approx(expect, abs=1e-12)
            assert 0 < w <= 1


@given(paths(), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_beta_nesting(ps, b1, b2):
    lo, hi = sorted((b1, b2))
    merged = merge_cluster(ps)
    wide, narrow = threshold_abstract(merged, lo), threshold_abstract(merged, hi)
    for w, n in zip(wide.layers, narrow.layers):
        assert set(n.tolist()) <= set(w.tolist())


cells = st.frozensets(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1), st.integers(1, 5)))


@given(cells, cells, cells)
def test_state_union_algebra(a, b, c):
    s = [CoverageState("snpc", x, 90, (("m", 5),)) for x in (a, b, c)]
    assert (s[0] | s[1]).covered == (s[1] | s[0]).covered
    assert ((s[0] | s[1]) | s[2]).covered == (s[0] | (s[1] | s[2])).covered
    assert (s[0] | s[0]) == s[0]
    assert (s[0] | s[1]).value >= max(s[0].value, s[1].value)
    assert 0.0 <= (s[0] | s[1] | s[2]).value <= 1.0
