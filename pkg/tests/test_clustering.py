import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from powerlab.clustering import (PointSet, affinity, bandwidth, clustering_accuracy,
                                 dpic, kmeans, make_circles, make_moons,
                                 normalize_affinity, pairwise_distances,
                                 schur_deflate, symmetric_normalize)
from powerlab.core import PowerLabError, oracle_eigh, sin2_error


# --- datasets -------------------------------------------------------------------

def test_circles_noise_free_radii():
    ps = make_circles(200, 0.5, 0.0, seed=1)
    r = np.linalg.norm(ps.points, axis=1)
    assert np.allclose(r[ps.labels == 0], 1.0)
    assert np.allclose(r[ps.labels == 1], 0.5)
    assert len(ps) == 200 and np.sum(ps.labels == 0) == 100


def test_circles_factor_range():
    with pytest.raises(PowerLabError):
        make_circles(10, 1.0)


def test_moons_layout():
    ps = make_moons(500, 0.0, seed=2)
    assert len(ps) == 500
    a, b = ps.points[ps.labels == 0], ps.points[ps.labels == 1]
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(b - [1.0, 0.5], axis=1), 1.0)


def test_pointset_validation():
    with pytest.raises(PowerLabError):
        PointSet(np.zeros((3, 2)), [0, 1])


# --- affinity ---------------------------------------------------------------------

def test_affinity_identical_points():
    A = affinity(np.array([[1.0, 1.0], [1.0, 1.0]]), "gaussian", sigma=1.0)
    assert A[0, 1] == 1.0


def test_affinity_l2():
    A = affinity(np.array([[0.0, 0.0], [2.0, 0.0]]), "l2")
    assert A[0, 1] == 2.0 and A[0, 0] == 0.0


def test_affinity_collinear_gaussian():
    A = affinity(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), "gaussian", sigma=1.0)
    assert A[0, 1] == pytest.approx(math.exp(-0.5))
    assert A[0, 2] == pytest.approx(math.exp(-2.0))
    assert np.allclose(np.diag(A), 1.0) and np.allclose(A, A.T)


def test_affinity_rules():
    X = make_circles(100, seed=0).points
    D = pairwise_distances(X)
    assert bandwidth(D, "median") == pytest.approx(np.median(D[np.triu_indices(100, 1)]))
    assert bandwidth(D, "knn", 5) < bandwidth(D, "median")
    with pytest.raises(PowerLabError):
        bandwidth(D, "other")
    with pytest.raises(PowerLabError):
        affinity(X, "cosine")
    with pytest.raises(PowerLabError):
        affinity(X[:1])


# --- normalization and deflation ------------------------------------------------------

def test_normalize_all_ones():
    assert np.allclose(normalize_affinity(np.ones((3, 3))), 1 / 3)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 6), elements=st.floats(0.01, 1.0)))
def test_normalize_rows_and_similarity(B):
    A = (B + B.T) / 2
    W = normalize_affinity(A)
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)
    S, _ = symmetric_normalize(A)
    wv = np.sort(np.linalg.eigvals(W).real)[::-1]
    sv, _ = oracle_eigh(S)
    assert np.allclose(wv, sv, atol=1e-9)


def test_normalize_isolated_point():
    A = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
    with pytest.raises(PowerLabError, match="point 1"):
        normalize_affinity(A)


def test_schur_diag():
    out = schur_deflate(np.diag([2.0, 1.0]), np.array([1.0, 0.0]))
    assert np.allclose(out, np.diag([0.0, 1.0]))


def test_schur_small_denominator():
    with pytest.raises(PowerLabError):
        schur_deflate(np.diag([1.0, 0.0]), np.array([0.0, 1.0]))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (8, 8), elements=st.floats(-1, 1)))
def test_schur_exact_eigenpair_spectrum(B):
    W = (B + B.T) / 2
    vals, V = oracle_eigh(W)
    if abs(vals[0]) < 1e-3:
        return
    out = schur_deflate(W, V[:, 0])
    expected = np.sort(np.r_[vals[1:], 0.0])[::-1]
    got, _ = oracle_eigh(out)
    assert np.allclose(got, expected, atol=1e-8)
    assert np.linalg.norm(out @ V[:, 0]) <= 1e-10


def test_schur_approximate_vector():
    rng = np.random.default_rng(0)
    S, _ = symmetric_normalize(affinity(make_circles(200, seed=3)))
    vals, V = oracle_eigh(S)
    u = V[:, 0] + 1e-3 * rng.standard_normal(200) / math.sqrt(200)
    u /= np.linalg.norm(u)
    assert 1e-7 < sin2_error(u, V[:, 0]) < 1e-5
    top, _ = oracle_eigh(schur_deflate(S, u))
    assert abs(top[0] - vals[1]) <= 1e-3


# --- k-means ---------------------------------------------------------------------------

def test_kmeans_two_blobs():
    x = np.r_[np.zeros(20), np.full(20, 10.0)] + \
        np.random.default_rng(0).normal(0, 0.1, 40)
    lab = kmeans(x, 2, seed=0)
    assert clustering_accuracy(lab, np.r_[np.zeros(20), np.ones(20)]) == 1.0


def test_kmeans_k_equals_n():
    X = np.random.default_rng(1).standard_normal((5, 2))
    assert sorted(kmeans(X, 5, seed=0)) == list(range(5))


def test_kmeans_deterministic():
    X = np.random.default_rng(2).standard_normal((50, 2))
    assert np.array_equal(kmeans(X, 3, seed=4), kmeans(X, 3, seed=4))


def test_kmeans_bad_k():
    with pytest.raises(PowerLabError):
        kmeans(np.zeros((3, 1)), 4)


def test_accuracy_permutation_invariant():
    truth = np.array([0, 0, 1, 1, 1])
    lab = np.array([1, 1, 0, 0, 1])
    assert clustering_accuracy(lab, truth) == clustering_accuracy(1 - lab, truth) == 0.8


# --- DPIC --------------------------------------------------------------------------------

def test_dpic_circles_high_accuracy():
    res = dpic(make_circles(1000, seed=0), "dmpower", eps=1e-8, seed=0)
    assert res.accuracy >= 0.99 and res.converged
    assert res.embedding.shape == (1000, 2)


def test_dpic_moons_high_accuracy():
    res = dpic(make_moons(500, seed=0), "dmpower", eps=1e-8, seed=0)
    assert res.accuracy >= 0.99


def test_dpic_loose_tolerance_underresolved():
    res = dpic(make_moons(500, seed=1), "power", eps=1e-2, seed=1)
    assert res.accuracy < 0.85


def test_dpic_solver_choices():
    pts = make_moons(200, seed=3)
    for solver, kw in (("power", {}), ("power_momentum", {"beta": 0.2}),
                       ("dmpower", {"rho": 1e-3})):
        res = dpic(pts, solver, eps=1e-6, seed=0, **kw)
        assert set(np.unique(res.labels)) <= {0, 1}
        assert res.solver_iterations > 0
    with pytest.raises(PowerLabError):
        dpic(pts, "power_momentum", eps=1e-6)
    with pytest.raises(PowerLabError):
        dpic(pts, "lanczos")


def test_dpic_l2_similarity_runs():
    res = dpic(make_circles(200, seed=0), "dmpower", eps=1e-6, similarity="l2")
    assert 0.5 <= res.accuracy <= 1.0


def test_dpic_nonconvergence_flagged():
    res = dpic(make_moons(200, seed=4), "power", eps=1e-12, max_iter=5)
    assert not res.converged and res.solver_iterations == 10


def test_dpic_unlabelled_points():
    res = dpic(make_moons(100, seed=5).points, "dmpower", eps=1e-6)
    assert res.accuracy is None and res.labels.shape == (100,)


def test_dpic_accuracy_monotone_in_eps():
    acc = {e: [] for e in (1e-2, 1e-4, 1e-8)}
    for seed in range(10):
        pts = make_circles(400, seed=seed)
        for e in acc:
            acc[e].append(dpic(pts, "dmpower", eps=e, seed=seed).accuracy)
    med = {e: np.median(v) for e, v in acc.items()}
    assert med[1e-8] >= med[1e-4] >= med[1e-2]
