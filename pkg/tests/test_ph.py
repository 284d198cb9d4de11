import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree

from swarmtopo.ph import (
    PersistenceDiagram, build_rips, persistence, rips_persistence, pairwise_distances,
    enclosing_radius, bottleneck, wasserstein1, pointset_wasserstein1,
)
from ph_oracle import naive_diagrams

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)


def test_two_point_filtration():
    f = build_rips([[0, 0, 0], [1, 0, 0]], max_dim=1)
    assert f.count(0) == 2 and f.count(1) == 1 and len(f) == 3
    assert f.values[-1] == 1.0


def test_square_filtration_enumeration():
    f = build_rips(SQUARE, max_dim=2, threshold=2.0)
    assert [f.count(k) for k in range(4)] == [4, 6, 4, 1]
    edges = sorted(f.values[f.dims == 1])
    np.testing.assert_allclose(edges, [1, 1, 1, 1, math.sqrt(2), math.sqrt(2)])
    np.testing.assert_allclose(f.values[f.dims >= 2], math.sqrt(2))


def test_filtration_values_and_face_order():
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(9, 3))
    f = build_rips(cloud, max_dim=2)
    dist = pairwise_distances(cloud)
    pos = {s: i for i, s in enumerate(f.simplices)}
    for s, val in zip(f.simplices, f.values):
        if len(s) >= 2:
            assert val == max(dist[a, b] for a, b in itertools.combinations(s, 2))
            for face in itertools.combinations(s, len(s) - 1):
                assert pos[face] < pos[s]
    assert np.all(np.diff(f.values) >= 0)


def test_size_cap():
    with pytest.raises(ValueError, match="cap"):
        build_rips(np.zeros((600, 3)), max_dim=2)
    with pytest.raises(ValueError, match="cap"):
        rips_persistence(np.zeros((20, 3)), max_dim=2, cap=10)


def _kruskal_deaths(points):
    mst = minimum_spanning_tree(pairwise_distances(points)).toarray()
    return np.sort(mst[mst > 0])


def test_collinear_dim0_matches_mst():
    pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)
    expected = np.array([[0, 1], [0, 2], [0, np.inf]])
    for dgms in (persistence(build_rips(pts, 1)), rips_persistence(pts, 1)):
        np.testing.assert_array_equal(dgms[0].pairs, expected)
        np.testing.assert_array_equal(dgms[0].finite[:, 1], _kruskal_deaths(pts))


def test_square_loop():
    for dgms in (persistence(build_rips(SQUARE, 1)), rips_persistence(SQUARE, 2)):
        np.testing.assert_allclose(dgms[1].pairs, [[1.0, math.sqrt(2)]])


def test_single_point():
    for dgms in (persistence(build_rips([[0.0, 0, 0]], 1)), rips_persistence([[0.0, 0, 0]], 1)):
        np.testing.assert_array_equal(dgms[0].pairs, [[0, np.inf]])
        assert len(dgms[1]) == 0


@pytest.mark.parametrize("seed", range(50))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 11))
    cloud = rng.normal(size=(n, 3))
    if seed % 5 == 0:
        # integer grid points produce many tied distances
        cloud = rng.integers(0, 3, size=(n, 3)).astype(float)
        cloud = np.unique(cloud, axis=0)
    oracle = naive_diagrams(pairwise_distances(cloud), 2)
    explicit = persistence(build_rips(cloud, 2))
    fast = rips_persistence(cloud, 2)
    for k in range(3):
        np.testing.assert_array_equal(explicit[k].pairs, oracle[k])
        np.testing.assert_array_equal(fast[k].pairs, oracle[k])


def test_elder_rule_count():
    rng = np.random.default_rng(3)
    for m in (1, 2, 7, 40):
        cloud = rng.normal(size=(m, 3))
        d0 = rips_persistence(cloud, 1)[0]
        assert len(d0) == m and d0.n_essential == 1


def test_enclosing_radius_threshold_is_lossless():
    rng = np.random.default_rng(4)
    cloud = rng.normal(size=(25, 3))
    dist = pairwise_distances(cloud)
    full = rips_persistence(cloud, 1, threshold=dist.max() + 1)
    default = rips_persistence(cloud, 1)
    assert enclosing_radius(dist) < dist.max()
    assert all(a == b for a, b in zip(full, default))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 14))
def test_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    a = rips_persistence(cloud, 2)
    b = rips_persistence(cloud[perm], 2)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.pairs, y.pairs, rtol=0, atol=1e-12)


def test_diagram_rejects_inverted_pair():
    with pytest.raises(ValueError):
        PersistenceDiagram(1, [[2.0, 1.0]])


# ------------------------------------------------------------------ distances

def _dg(pairs, dim=1):
    return PersistenceDiagram(dim, np.array(pairs, dtype=float).reshape(-1, 2))


def _brute_matching(f, g, ground, reduce):
    """Exhaustive search over matchings of the diagonally augmented diagrams."""
    n, m = len(f), len(g)
    best = math.inf
    for perm in itertools.permutations(range(n + m)):
        costs = []
        for i, j in enumerate(perm):
            if i < n and j < m:
                costs.append(ground(f[i], g[j]))
            elif i < n:
                if j != m + i:
                    break
                costs.append(ground(f[i], np.full(2, f[i].mean())))
            elif j < m:
                if i - n != j:
                    break
                costs.append(ground(g[j], np.full(2, g[j].mean())))
            else:
                costs.append(0.0)
        else:
            best = min(best, reduce(costs))
    return best


def _random_diagram(rng, n):
    b = rng.uniform(0, 1, n)
    return np.column_stack([b, b + rng.uniform(0, 1, n)])


def test_bottleneck_examples():
    f = _dg([[0, 1], [0.2, 0.9]])
    assert bottleneck(f, f) == 0.0
    assert bottleneck(_dg([[0, 2]]), _dg([])) == pytest.approx(1.0)


def test_bottleneck_matches_brute_force():
    rng = np.random.default_rng(5)
    cheb = lambda p, q: float(np.max(np.abs(p - q)))
    for _ in range(40):
        f, g = _random_diagram(rng, rng.integers(0, 4)), _random_diagram(rng, rng.integers(0, 4))
        assert bottleneck(f, g) == pytest.approx(_brute_matching(f, g, cheb, lambda c: max(c, default=0.0)))


def test_bottleneck_death_shift_is_one_lipschitz():
    rng = np.random.default_rng(6)
    for _ in range(50):
        f = _random_diagram(rng, 5)
        eps = rng.uniform(0, 0.1)
        g = f.copy()
        g[:, 1] += eps
        assert bottleneck(f, g) <= eps + 1e-12


def test_essential_bars():
    a = _dg([[0, np.inf], [0, 1]], 0)
    b = _dg([[0.5, np.inf], [0, 1]], 0)
    assert bottleneck(a, b) == pytest.approx(0.5)
    assert wasserstein1(a, b) == pytest.approx(0.5)
    c = _dg([[0, 1]], 0)
    assert bottleneck(a, c) == math.inf and wasserstein1(a, c) == math.inf


def test_wasserstein_examples():
    f = _dg([[0, 1], [0.3, 0.7]])
    assert wasserstein1(f, f) == 0.0
    assert wasserstein1(_dg([[0, 1]]), _dg([])) == pytest.approx(1 / math.sqrt(2))
    h = 1e-3
    assert wasserstein1(_dg([[0, 1]]), _dg([[0, 1], [0.5, 0.5 + h]])) == pytest.approx(h / math.sqrt(2))


def test_wasserstein_matches_brute_force():
    rng = np.random.default_rng(7)
    eucl = lambda p, q: float(np.linalg.norm(p - q))
    for _ in range(40):
        f, g = _random_diagram(rng, rng.integers(0, 4)), _random_diagram(rng, rng.integers(0, 4))
        assert wasserstein1(f, g) == pytest.approx(_brute_matching(f, g, eucl, sum))


def test_pointset_wasserstein():
    rng = np.random.default_rng(8)
    p = rng.normal(size=(6, 3))
    assert pointset_wasserstein1(p, p) == 0.0
    assert pointset_wasserstein1(p[:1], p[1:2]) == pytest.approx(np.linalg.norm(p[0] - p[1]))
    q = rng.normal(size=(6, 3))
    brute = min(sum(np.linalg.norm(p[i] - q[j]) for i, j in enumerate(perm))
                for perm in itertools.permutations(range(6)))
    assert pointset_wasserstein1(p, q) == pytest.approx(brute / 6)
    assert pointset_wasserstein1(p, q, normalize=False) == pytest.approx(brute)
    with pytest.raises(ValueError, match="cardinality"):
        pointset_wasserstein1(p, q[:5])


def stability_chain_ratios(n_pairs=200, seed=0):
    """Largest W1(F_k, G_k) / (2 C(M-1, k) M W1(P, Q)) per k over random pairs."""
    rng = np.random.default_rng(seed)
    worst = {0: 0.0, 1: 0.0}
    excess = {0: -math.inf, 1: -math.inf}
    for t in range(n_pairs):
        m = int(rng.integers(2, 21))
        p = rng.uniform(-0.5, 0.5, size=(m, 3))
        if t % 2:
            q = p + rng.normal(scale=10 ** rng.uniform(-3, -0.5), size=(m, 3))
        else:
            q = rng.uniform(-0.5, 0.5, size=(m, 3))
        fp, fq = rips_persistence(p, 1), rips_persistence(q, 1)
        # the M factor turns the normalised transport cost back into a sum
        w = pointset_wasserstein1(p, q) * m
        for k in (0, 1):
            bound = 2 * math.comb(m - 1, k) * w
            lhs = wasserstein1(fp[k], fq[k])
            excess[k] = max(excess[k], lhs - bound)
            worst[k] = max(worst[k], lhs / bound if bound > 0 else 0.0)
    return worst, excess


def test_stability_chain():
    worst, excess = stability_chain_ratios()
    assert excess[0] <= 1e-9 and excess[1] <= 1e-9, (worst, excess)
