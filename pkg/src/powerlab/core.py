"""Shared dense types, error metrics, stopping rules and the Jacobi oracle.

Every other module builds on the helpers here.  Matrices are plain
``numpy`` arrays; the light dataclasses below only carry results.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


class PowerLabError(ValueError):
    """Base class for input and numerical errors raised by this package."""


class DimensionError(PowerLabError):
    """Operands have incompatible shapes."""


class NotSymmetricError(PowerLabError):
    """A matrix that must be symmetric is not."""


class AnnihilatedVectorError(PowerLabError, ArithmeticError):
    """An iterate collapsed to (numerically) zero norm."""


SYMMETRY_TOL = 1e-12
NORM_FLOOR = 1e-300
STOP_KINDS = ("iterate-distance", "rayleigh-distance",
              "sine-squared-vs-reference", "max-iterations")


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def is_symmetric(A, tol=SYMMETRY_TOL):
    """Entrywise test |A_ij - A_ji| <= tol * max(1, |A_ij|)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    diff = np.abs(A - A.T)
    return bool(np.all(diff <= tol * np.maximum(1.0, np.abs(A))))


def as_symmetric(A, tol=SYMMETRY_TOL):
    """Return ``A`` as a float array after checking it is square and symmetric."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] < 1:
        raise DimensionError("matrix dimension must be positive")
    if not is_symmetric(A, tol):
        raise NotSymmetricError("matrix is not symmetric within tolerance")
    return A


def _check_vector(q, d=None, name="vector"):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {q.shape}")
    if d is not None and q.shape[0] != d:
        raise DimensionError(f"{name} has length {q.shape[0]}, expected {d}")
    return q


def normalize(v):
    """Scale ``v`` to unit 2-norm.

    Raises AnnihilatedVectorError when the norm is below 1e-300, which in
    practice means the starting vector had no component along the
    dominant eigenspace (or a momentum step cancelled it exactly).
    """
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if not np.isfinite(nrm) or nrm < NORM_FLOOR:
        raise AnnihilatedVectorError(f"vector norm {nrm!r} cannot be normalized")
    return v / nrm


def random_unit(d, rng):
    """Uniform random point on the unit sphere in R^d."""
    rng = np.random.default_rng(rng)
    return normalize(rng.standard_normal(d))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rayleigh_quotient(A, q):
    """Quadratic form q^T A q."""
    A = np.asarray(A, dtype=float)
    q = _check_vector(q, A.shape[0], "q")
    return float(q @ (A @ q))


def sin2_error(q, v):
    """Squared sine of the angle between two unit vectors, 1 - (q.v)^2."""
    q = _check_vector(q, name="q")
    v = _check_vector(v, q.shape[0], "v")
    c = float(q @ v)
    return min(1.0, max(0.0, 1.0 - c * c))


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenEstimate:
    """Unit vector together with its Rayleigh quotient."""
    vector: np.ndarray
    value: float


@dataclass(frozen=True)
class StopRule:
    """Termination rule shared by every iterative solver.

    kind is one of ``iterate-distance`` (||q_k - q_{k-1}|| <= threshold),
    ``rayleigh-distance`` (|nu_k - nu_{k-1}| <= threshold),
    ``sine-squared-vs-reference`` (sin^2(q_k, reference) <= threshold) or
    ``max-iterations`` (always run ``max_iter`` steps).
    """
    kind: str = "iterate-distance"
    threshold: float = 1e-9
    max_iter: int = 100_000
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise PowerLabError(f"unknown stop rule kind {self.kind!r}")
        if not self.threshold > 0:
            raise PowerLabError("stop threshold must be positive")
        if int(self.max_iter) < 1:
            raise PowerLabError("max_iter must be at least 1")
        if self.kind == "sine-squared-vs-reference" and self.reference is None:
            raise PowerLabError("sine-squared rule needs a reference vector")

    def metric(self, q, q_prev, nu, nu_prev):
        """Value compared against ``threshold`` after one step."""
        if self.kind == "iterate-distance":
            return float(np.linalg.norm(q - q_prev))
        if self.kind == "rayleigh-distance":
            return abs(nu - nu_prev)
        if self.kind == "sine-squared-vs-reference":
            return sin2_error(q, self.reference)
        return float("nan")

    def met(self, value, k):
        if self.kind == "max-iterations":
            return k >= self.max_iter
        return value <= self.threshold


@dataclass
class SolveReport:
    """Per-run record of an eigensolver call.

    ``iterations_total`` is derived from the two phase counters so the two
    can never disagree.  Single-phase methods put their whole count in
    ``iterations_momentum`` (the main phase) and leave the pre-momentum
    counter at zero.
    """
    estimate: EigenEstimate
    iterations_pre_momentum: int = 0
    iterations_momentum: int = 0
    lambda2_estimate: Optional[float] = None
    beta_used: Optional[float] = None
    trajectory: Optional[List[Tuple[int, float]]] = None
    converged: bool = False
    samples_consumed: int = 0
    iterates: Optional[List[np.ndarray]] = field(default=None, repr=False)
    pre_iterates: Optional[list] = field(default=None, repr=False)
    mu_trace: Optional[List[float]] = field(default=None, repr=False)
    w_estimate: Optional[np.ndarray] = field(default=None, repr=False)
    residual: Optional[float] = None

    @property
    def iterations_total(self):
        return self.iterations_pre_momentum + self.iterations_momentum


# ---------------------------------------------------------------------------
# cyclic Jacobi oracle
# ---------------------------------------------------------------------------

def _round_robin(n):
    """Pairings for a round-robin tournament on ``n`` players (n even).

    Every unordered pair appears in exactly one of the n-1 rounds and the
    pairs within a round are disjoint, so their rotations commute.
    """
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[::-1][:half])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def oracle_eigh(A, tol=1e-13, max_sweeps=100):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Rotations are applied in parallel round-robin order (disjoint index
    pairs per round), sweeping until the off-diagonal Frobenius norm is at
    most ``tol * max(1, ||A||_F)``.

    Returns ``(values, vectors)`` with eigenvalues in descending order and
    eigenvectors as columns.  Each vector's largest-magnitude entry is made
    positive so the output is deterministic.
    """
    A = as_symmetric(A)
    n = A.shape[0]
    M = 0.5 * (A + A.T)
    V = np.eye(n)
    if n > 1:
        m = n + (n % 2)
        rounds = []
        for p, q in _round_robin(m):
            keep = q < n                      # drop pairs with the padding index
            rounds.append((p[keep], q[keep]))
        target = tol * max(1.0, np.linalg.norm(M))
        for _ in range(max_sweeps):
            offdiag = M - np.diag(np.diag(M))
            off = np.linalg.norm(offdiag)
            if off <= target:
                break
            for p, q in rounds:
                apq = M[p, q]
                active = np.abs(apq) > 0
                if not np.any(active):
                    continue
                p, q, apq = p[active], q[active], apq[active]
                app, aqq = M[p, p], M[q, q]
                # a tiny apq can overflow tau to inf; t then correctly becomes 0
                with np.errstate(over="ignore"):
                    tau = (aqq - app) / (2.0 * apq)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # columns, then rows: M <- J^T M J
                Mp, Mq = M[:, p].copy(), M[:, q].copy()
                M[:, p] = c * Mp - s * Mq
                M[:, q] = s * Mp + c * Mq
                Mp, Mq = M[p, :].copy(), M[q, :].copy()
                M[p, :] = c[:, None] * Mp - s[:, None] * Mq
                M[q, :] = s[:, None] * Mp + c[:, None] * Mq
                M[p, q] = 0.0
                M[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
        else:
            raise PowerLabError("Jacobi sweeps did not converge")
    vals = np.diag(M).copy()
    order = np.argsort(-vals, kind="stable")
    vals, V = vals[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return vals, V * signs


def top_eigenpairs(A, k=2):
    """Convenience wrapper: the top ``k`` oracle eigenvalues and vectors."""
    vals, vecs = oracle_eigh(A)
    return vals[:k], vecs[:, :k]


# ---------------------------------------------------------------------------
# perturbation diagnostics
# ---------------------------------------------------------------------------

def _sym2_norm(a, b, c):
    """Spectral norm of the symmetric 2x2 matrix [[a, b], [b, c]]."""
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return max(abs(mid + rad), abs(mid - rad))


def perturbation_norm(A, nu, q, lam1=None, v1=None):
    """Spectral norm of lam1*v1 v1^T - nu*q q^T.

    The difference has rank at most two, so its norm is computed exactly
    from the 2x2 restriction to span{v1, q}.  When ``lam1``/``v1`` are not
    supplied the oracle provides them.
    """
    A = np.asarray(A, dtype=float)
    q = _check_vector(q, A.shape[0], "q")
    if lam1 is None or v1 is None:
        vals, vecs = oracle_eigh(A)
        lam1, v1 = vals[0], vecs[:, 0]
    v1 = _check_vector(v1, A.shape[0], "v1")
    c = float(q @ v1)
    s = np.sqrt(max(0.0, 1.0 - c * c))
    # basis {v1, e2}; q = c v1 + s e2
    return float(_sym2_norm(lam1 - nu * c * c, -nu * c * s, -nu * s * s))


def hardt_price_check(g_norm, g_proj_norm, gap, eps, tau, d):
    """Noise conditions under which a noisy power method still converges.

    True iff ``5*g_norm <= eps*gap`` and ``5*g_proj_norm <= gap/(tau*sqrt(d))``.
    """
    if not gap > 0:
        raise PowerLabError("eigengap must be positive")
    if not 0 < eps < 0.5:
        raise PowerLabError("eps must lie in (0, 1/2)")
    if not tau > 1:
        raise PowerLabError("tau must exceed 1")
    if int(d) < 1:
        raise PowerLabError("d must be at least 1")
    return bool(5.0 * g_norm <= eps * gap and
                5.0 * g_proj_norm <= gap / (tau * np.sqrt(d)))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def write_matrix(path, A):
    """Write a square matrix: first line ``d``, then d rows of d reals."""
    A = np.asarray(A, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]}\n")
        for row in A:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`, validating symmetry."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise PowerLabError(f"{path}: empty matrix file")
    d = int(lines[0].split()[0])
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != d or any(len(r) != d for r in rows):
        raise DimensionError(f"{path}: expected {d} rows of {d} values")
    return as_symmetric(np.array(rows, dtype=float))


def write_table(path, X):
    """Write an n x d array with header ``n d``."""
    X = np.asarray(X, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for row in X:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def read_table(path, extra_cols=0):
    """Read an ``n d`` headed table.

    Rows may carry up to ``extra_cols`` trailing values; those are returned
    separately (``None`` when absent).
    """
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise PowerLabError(f"{path}: empty table file")
    n, d = (int(t) for t in lines[0].split()[:2])
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != n:
        raise DimensionError(f"{path}: header says {n} rows, found {len(rows)}")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or not d <= widths.pop() <= d + extra_cols:
        raise DimensionError(f"{path}: rows must have {d} values")
    data = np.array(rows, dtype=float)
    extra = data[:, d:] if data.shape[1] > d else None
    return data[:, :d], extra
