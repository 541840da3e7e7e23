"""Deflation-based power iteration clustering (two clusters).

Pipeline: affinity matrix A, symmetric normalization
S = D^{-1/2} A D^{-1/2} (similar to the row-stochastic W = D^{-1} A), top
eigenvector of S by an iterative solver, Schur-complement deflation, second
eigenvector, back-transform by D^{-1/2}, then k-means on the two-column
embedding.
"""

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PowerLabError, StopRule, normalize, random_unit
from .solvers import (DMPowerConfig, MomentumConfig, dmpower, power_method,
                      power_momentum)

SOLVERS = ("power", "power_momentum", "dmpower")


@dataclass
class PointSet:
    """2-D points with optional ground-truth labels."""
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise PowerLabError("points must be an n x dim array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(int)
            if self.labels.shape != (self.points.shape[0],):
                raise PowerLabError("one label per point is required")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class ClusterResult:
    labels: np.ndarray
    accuracy: Optional[float]
    solver_iterations: int
    converged: bool = True
    embedding: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def make_circles(n=1000, factor=0.5, noise_sd=0.05, seed=0):
    """Two concentric circles of radii 1 (label 0) and ``factor`` (label 1)."""
    if not 0 < factor < 1:
        raise PowerLabError("factor must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0, 2 * np.pi, n_out)
    t_in = rng.uniform(0, 2 * np.pi, n_in)
    X = np.vstack([np.c_[np.cos(t_out), np.sin(t_out)],
                   factor * np.c_[np.cos(t_in), np.sin(t_in)]])
    y = np.r_[np.zeros(n_out, int), np.ones(n_in, int)]
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    return PointSet(X, y)


def make_moons(n=500, noise_sd=0.05, seed=0):
    """Two interleaved half circles; the second is shifted by (1, -0.5)."""
    rng = np.random.default_rng(seed)
    n_a = n // 2
    n_b = n - n_a
    t_a = rng.uniform(0, np.pi, n_a)
    t_b = rng.uniform(0, np.pi, n_b)
    X = np.vstack([np.c_[np.cos(t_a), np.sin(t_a)],
                   np.c_[1 - np.cos(t_b), 0.5 - np.sin(t_b)]])
    y = np.r_[np.zeros(n_a, int), np.ones(n_b, int)]
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    return PointSet(X, y)


# ---------------------------------------------------------------------------
# affinity and normalization
# ---------------------------------------------------------------------------

KNN_DEFAULT = 20


def pairwise_distances(X):
    X = np.asarray(X, dtype=float)
    sq = np.sum(X * X, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D2, 0.0, out=D2)
    np.fill_diagonal(D2, 0.0)
    return np.sqrt(D2)


def bandwidth(D, rule="knn", k=KNN_DEFAULT):
    """Gaussian bandwidth from a distance matrix.

    ``knn``: median over points of the distance to their k-th nearest
    neighbour.  ``median``: median of all pairwise distances.
    """
    n = D.shape[0]
    if rule == "median":
        return float(np.median(D[np.triu_indices(n, 1)]))
    if rule == "knn":
        k = min(int(k), n - 1)
        return float(np.median(np.partition(D, k, axis=1)[:, k]))
    raise PowerLabError(f"unknown bandwidth rule {rule!r}")


def affinity(points, similarity="gaussian", sigma="knn", knn=KNN_DEFAULT):
    """Symmetric affinity matrix.

    ``gaussian``: exp(-||x_i - x_j||^2 / (2 sigma^2)) with unit diagonal;
    ``sigma`` is a number or a rule name (see :func:`bandwidth`).
    ``l2``: plain pairwise distances with zero diagonal.
    """
    X = points.points if isinstance(points, PointSet) else np.asarray(points, float)
    if X.shape[0] < 2:
        raise PowerLabError("need at least two points")
    D = pairwise_distances(X)
    if similarity in ("l2", "l2-distance"):
        return D
    if similarity != "gaussian":
        raise PowerLabError(f"unknown similarity {similarity!r}")
    s = bandwidth(D, sigma, knn) if isinstance(sigma, str) else float(sigma)
    if not s > 0:
        raise PowerLabError("gaussian bandwidth must be positive")
    A = np.exp(-(D * D) / (2.0 * s * s))
    np.fill_diagonal(A, 1.0)
    return A


def _degrees(A):
    deg = np.asarray(A, float).sum(axis=1)
    bad = np.flatnonzero(deg <= 0)
    if bad.size:
        raise PowerLabError(f"point {int(bad[0])} has zero total affinity")
    return deg


def normalize_affinity(A):
    """Row-stochastic W = D^{-1} A."""
    return np.asarray(A, float) / _degrees(A)[:, None]


def symmetric_normalize(A):
    """S = D^{-1/2} A D^{-1/2} and the degree vector."""
    deg = _degrees(A)
    r = 1.0 / np.sqrt(deg)
    S = (np.asarray(A, float) * r[:, None]) * r[None, :]
    return 0.5 * (S + S.T), deg


def schur_deflate(W, v):
    """W' = W - (W v v^T W) / (v^T W v).

    For an exact eigenpair (lambda, v) this is Hotelling deflation
    W - lambda v v^T, and W' v = 0 in general.
    """
    W = np.asarray(W, float)
    v = np.asarray(v, float)
    Wv = W @ v
    denom = float(v @ Wv)
    if abs(denom) < 1e-14:
        raise PowerLabError("v^T W v is too close to zero for deflation")
    out = W - np.outer(Wv, Wv) / denom
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def kmeans(embedding, k=2, seed=0, tol=1e-8, max_rounds=300):
    """Lloyd's algorithm from a k-means++ initialization.

    A cluster that empties is re-seeded at the point farthest from its
    current centroid (lowest index on ties).  Deterministic given ``seed``.
    """
    X = np.asarray(embedding, float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise PowerLabError("need 1 <= k <= n")
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(_sq_dists(X, np.array(centers)), axis=1)
        total = d2.sum()
        if total <= 0:
            # all points coincide with chosen centres; take unused indices
            centers.append(X[len(centers) % n])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    C = np.array(centers, dtype=float)
    labels = np.zeros(n, int)
    for _ in range(max_rounds):
        d2 = _sq_dists(X, C)
        labels = np.argmin(d2, axis=1)
        newC = C.copy()
        for j in range(k):
            members = labels == j
            if np.any(members):
                newC[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(n), labels]))
                newC[j] = X[far]
                labels[far] = j
        shift = np.max(np.linalg.norm(newC - C, axis=1))
        C = newC
        if shift <= tol:
            break
    return np.argmin(_sq_dists(X, C), axis=1)


def clustering_accuracy(labels, truth):
    """Fraction correct, maximized over relabelings of the clusters."""
    labels = np.asarray(labels).astype(int)
    truth = np.asarray(truth).astype(int)
    ks = np.unique(np.r_[labels, truth])
    best = 0.0
    for perm in itertools.permutations(ks):
        mapping = dict(zip(ks, perm))
        mapped = np.array([mapping[x] for x in labels])
        best = max(best, float(np.mean(mapped == truth)))
    return best


# ---------------------------------------------------------------------------
# DPIC
# ---------------------------------------------------------------------------

def _extract(S, solver, eps, q0, w0, beta, rho, rho_mode, max_iter):
    if solver == "power":
        return power_method(S, q0, StopRule("iterate-distance", eps, max_iter))
    if solver == "power_momentum":
        if beta is None:
            raise PowerLabError("power_momentum solver needs beta")
        b = beta(S) if callable(beta) else float(beta)
        return power_momentum(S, q0, MomentumConfig(b),
                              StopRule("iterate-distance", eps, max_iter))
    if solver == "dmpower":
        r = np.cbrt(eps) if rho is None else float(rho)
        cfg = DMPowerConfig(rho=r, eps=eps, rho_mode=rho_mode,
                            max_pre=max_iter, max_mom=max_iter)
        return dmpower(S, q0, w0, cfg)
    raise PowerLabError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def dpic(points, solver="dmpower", eps=1e-8, seed=0, similarity="gaussian",
         sigma="knn", knn=KNN_DEFAULT, beta=None, rho=None, rho_mode="mu-diff",
         max_iter=100_000):
    """Two-cluster deflation-based power iteration clustering.

    ``solver`` is ``power``, ``power_momentum`` (needs ``beta``: a number or
    a callable returning beta for the matrix being solved) or ``dmpower``
    (``rho`` defaults to eps^(1/3)).  Starting vectors come from ``seed`` and
    are shared by both extractions.  Non-convergence is reported through
    ``converged`` and the clustering still uses the last iterates.
    """
    if not isinstance(points, PointSet):
        points = PointSet(points)
    if len(points) < 2:
        raise PowerLabError("need at least two points")
    A = affinity(points, similarity, sigma, knn)
    S, deg = symmetric_normalize(A)
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    q0 = random_unit(n, rng)
    w0 = random_unit(n, rng)
    r1 = _extract(S, solver, eps, q0, w0, beta, rho, rho_mode, max_iter)
    u1 = r1.estimate.vector
    S2 = schur_deflate(S, u1)
    r2 = _extract(S2, solver, eps, q0, w0, beta, rho, rho_mode, max_iter)
    u2 = r2.estimate.vector
    scale = 1.0 / np.sqrt(deg)
    emb = np.c_[normalize(u1 * scale), normalize(u2 * scale)]
    labels = kmeans(emb, 2, seed)
    acc = None
    if points.labels is not None:
        acc = clustering_accuracy(labels, points.labels)
    return ClusterResult(labels, acc, r1.iterations_total + r2.iterations_total,
                         bool(r1.converged and r2.converged), emb)
