"""Deterministic eigensolvers and convergence-bound evaluators.

All solvers work on a dense symmetric ``numpy`` array and return a
:class:`~powerlab.core.SolveReport`.  Iteration counts follow one convention
throughout: one update of the main iterate is one iteration, whatever its
matvec cost.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (AnnihilatedVectorError, EigenEstimate, NORM_FLOOR,
                   PowerLabError, SolveReport, StopRule, as_symmetric,
                   _check_vector, normalize, oracle_eigh)

DEFAULT_MAX_ITER = 100_000
RHO_MODES = ("mu-diff", "w-diff", "fixed-J")


@dataclass(frozen=True)
class MomentumConfig:
    """Momentum coefficient for the two-term recurrence.

    With ``joint_scaling`` False (the default) each step is
    q_k = (A q_{k-1} - beta q_{k-2}) / ||A q_{k-1} - beta q_{k-2}|| where both
    previous iterates are unit vectors.  With ``joint_scaling`` True the pair
    (q_k, q_{k-1}) is rescaled by the same factor, so the normalized iterates
    follow the linear three-term recurrence exactly (q_k is proportional to
    p_k(A) q_0 with Chebyshev-like polynomials p_k).
    """
    beta: float = 0.0
    joint_scaling: bool = False

    def __post_init__(self):
        if not self.beta >= 0:
            raise PowerLabError("momentum coefficient beta must be nonnegative")


@dataclass(frozen=True)
class DMPowerConfig:
    """Settings for the delayed-momentum power method.

    ``rho`` is the pre-momentum exit precision and ``eps`` the threshold for
    the momentum phase.  ``rho_mode`` selects how the pre-momentum phase
    ends: ``mu-diff`` (|mu_j - mu_{j-1}| <= rho), ``w-diff``
    (||w_j - w_{j-1}|| <= rho) or ``fixed-J`` (exactly ``J`` rounds).
    """
    rho: float = 1e-3
    eps: float = 1e-9
    rho_mode: str = "mu-diff"
    J: Optional[int] = None
    max_pre: int = DEFAULT_MAX_ITER
    max_mom: int = DEFAULT_MAX_ITER
    joint_scaling: bool = False
    stop_kind: str = "iterate-distance"

    def __post_init__(self):
        if self.rho_mode not in RHO_MODES:
            raise PowerLabError(f"unknown rho_mode {self.rho_mode!r}")
        if self.rho_mode == "fixed-J":
            if self.J is None or int(self.J) < 1:
                raise PowerLabError("fixed-J mode needs J >= 1")
        elif not 0 < self.rho < 1:
            raise PowerLabError("rho must lie in (0, 1)")
        if not self.eps > 0:
            raise PowerLabError("eps must be positive")
        if self.max_pre < 1 or self.max_mom < 1:
            raise PowerLabError("phase caps must be at least 1")


def _default_stop(stop):
    return StopRule() if stop is None else stop


def _momentum_loop(A, q, Aq, beta, stop, joint=False, record=False,
                   keep_iterates=False, q_prev=None, k0=0):
    """Shared two-term recurrence; ``beta == 0`` is the plain power method.

    ``Aq`` is the product A @ q, carried so each step costs one matvec.
    Returns (q, nu, iterations, converged, trajectory, iterates).
    """
    d = q.shape[0]
    if q_prev is None:
        q_prev = np.zeros(d)
    nu = float(q @ Aq)
    traj = [] if record else None
    iterates = [q.copy()] if keep_iterates else None
    converged = False
    k = 0
    for k in range(1, stop.max_iter + 1):
        y = Aq - beta * q_prev if beta != 0.0 else Aq
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm < NORM_FLOOR:
            raise AnnihilatedVectorError(f"iterate annihilated at step {k}")
        q_old = q
        q_prev = q / nrm if joint else q
        q = y / nrm
        Aq = A @ q
        nu_old, nu = nu, float(q @ Aq)
        value = stop.metric(q, q_old, nu, nu_old)
        if traj is not None:
            traj.append((k0 + k, value))
        if iterates is not None:
            iterates.append(q.copy())
        if stop.met(value, k):
            converged = True
            break
    return q, Aq, nu, k, converged, traj, iterates


def power_method(A, q0, stop=None, record=False, keep_iterates=False):
    """Vanilla power iteration q_k = A q_{k-1} / ||A q_{k-1}||."""
    A = as_symmetric(A)
    q = normalize(_check_vector(q0, A.shape[0], "q0"))
    stop = _default_stop(stop)
    q, _, nu, k, conv, traj, its = _momentum_loop(
        A, q, A @ q, 0.0, stop, record=record, keep_iterates=keep_iterates)
    return SolveReport(EigenEstimate(q, nu), 0, k, trajectory=traj,
                       converged=conv, iterates=its)


def power_momentum(A, q0, cfg, stop=None, record=False, keep_iterates=False):
    """Power iteration with heavy-ball momentum, q_{-1} = 0.

    No convergence guarantee exists when 2*sqrt(beta) > lambda_1; such runs
    simply go to ``max_iter`` and report ``converged=False``.
    """
    if not isinstance(cfg, MomentumConfig):
        cfg = MomentumConfig(float(cfg))
    A = as_symmetric(A)
    q = normalize(_check_vector(q0, A.shape[0], "q0"))
    stop = _default_stop(stop)
    q, _, nu, k, conv, traj, its = _momentum_loop(
        A, q, A @ q, float(cfg.beta), stop, joint=cfg.joint_scaling,
        record=record, keep_iterates=keep_iterates)
    return SolveReport(EigenEstimate(q, nu), 0, k, beta_used=float(cfg.beta),
                       trajectory=traj, converged=conv, iterates=its)


def _pre_momentum_phase(A, q, w, cfg, record=False, keep_iterates=False,
                        matvec=None):
    """Power iteration on q plus inexact Hotelling deflation on w.

    Each round: q_j = normalize(A q_{j-1}), nu_j = q_j^T A q_j,
    w_j = normalize((A - nu_j q_j q_j^T) w_{j-1}), mu_j = w_j^T A w_j.

    ``matvec`` lets the streaming variant substitute a fresh estimate per
    round: it is called with the round number and returns the matrix for
    that round.
    """
    mu_prev = None
    mus, traj = [], ([] if record else None)
    pre_its = [] if keep_iterates else None
    exited = False
    j = 0
    mu = nu = float("nan")
    Aq = Aw = None
    for j in range(1, cfg.max_pre + 1):
        if matvec is None:
            # products of the previous round are still valid
            Aq = A @ q if Aq is None else Aq
            Aw = A @ w if Aw is None else Aw
            M = A
        else:
            M = matvec(j)
            Aq, Aw = M @ q, M @ w
        q = normalize(Aq)
        Aq = M @ q
        nu = float(q @ Aq)
        w_new = normalize(Aw - nu * q * float(q @ w))
        Aw = M @ w_new
        mu = float(w_new @ Aw)
        mus.append(mu)
        if cfg.rho_mode == "mu-diff":
            value = abs(mu - mu_prev) if mu_prev is not None else float("inf")
            done = value <= cfg.rho
        elif cfg.rho_mode == "w-diff":
            value = float(np.linalg.norm(w_new - w))
            done = value <= cfg.rho
        else:
            value = float("nan")
            done = j >= cfg.J
        w = w_new
        mu_prev = mu
        if traj is not None:
            traj.append((j, value))
        if pre_its is not None:
            pre_its.append((q.copy(), w.copy()))
        if done:
            exited = True
            break
    return q, w, mu, nu, j, exited, mus, traj, pre_its


def dmpower(A, q0, w0, cfg=None, record=False, keep_iterates=False):
    """Delayed-momentum power method.

    A pre-momentum phase runs power iteration on ``q`` while a second vector
    ``w`` tracks the top eigenvector of the inexactly deflated matrix
    A - nu_j q_j q_j^T, whose Rayleigh quotient mu_j estimates lambda_2.
    Once that estimate settles, momentum beta = mu_J^2 / 4 is switched on
    and the iteration continues from q_J (with q_{-1} = 0) until
    ||q_k - q_{k-1}|| <= eps.

    ``report.converged`` is False if either phase hit its cap.
    """
    cfg = DMPowerConfig() if cfg is None else cfg
    A = as_symmetric(A)
    d = A.shape[0]
    q = normalize(_check_vector(q0, d, "q0"))
    w = normalize(_check_vector(w0, d, "w0"))
    q, w, mu, _, J, exited, mus, traj, pre_its = _pre_momentum_phase(
        A, q, w, cfg, record, keep_iterates)
    beta = mu * mu / 4.0
    stop = StopRule(cfg.stop_kind, cfg.eps, cfg.max_mom)
    q, _, nu, K, conv, traj2, its = _momentum_loop(
        A, q, A @ q, beta, stop, joint=cfg.joint_scaling, record=record,
        keep_iterates=keep_iterates, k0=J)
    report = SolveReport(EigenEstimate(q, nu), J, K, lambda2_estimate=mu,
                         beta_used=beta, converged=bool(exited and conv),
                         iterates=its, pre_iterates=pre_its, mu_trace=mus,
                         w_estimate=w)
    if record:
        report.trajectory = traj + traj2
    return report


# ---------------------------------------------------------------------------
# block and Krylov baselines
# ---------------------------------------------------------------------------

@dataclass
class BlockReport:
    """Result of simultaneous iteration: top-k estimates plus bookkeeping."""
    estimates: List[EigenEstimate]
    iterations: int
    converged: bool
    trajectory: Optional[list] = field(default=None, repr=False)

    @property
    def iterations_total(self):
        return self.iterations


def gram_schmidt(Z):
    """Classical Gram-Schmidt on the columns of ``Z``."""
    Q = np.empty_like(Z, dtype=float)
    for i in range(Z.shape[1]):
        z = Z[:, i].astype(float)
        for j in range(i):
            z = z - float(Q[:, j] @ Z[:, i]) * Q[:, j]
        nrm = np.linalg.norm(z)
        if not np.isfinite(nrm) or nrm < NORM_FLOOR:
            raise AnnihilatedVectorError(f"block lost rank at column {i}")
        Q[:, i] = z / nrm
    return Q


def simultaneous_iteration(A, k=2, stop=None, q0=None, seed=None,
                           record=False):
    """Block power iteration with Gram-Schmidt re-orthonormalization.

    The start block is random orthonormal; if ``q0`` is given it becomes the
    first column so that ``k = 1`` reproduces :func:`power_method`.
    The stop rule is applied to every column and the block stops when the
    worst column meets it.
    """
    A = as_symmetric(A)
    d = A.shape[0]
    if not 1 <= k <= d:
        raise PowerLabError(f"block size must be in [1, {d}]")
    stop = _default_stop(stop)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, k))
    if q0 is not None:
        Z[:, 0] = normalize(_check_vector(q0, d, "q0"))
    Q = gram_schmidt(Z) if q0 is None or k > 1 else Z
    AQ = A @ Q
    nus = np.einsum("ij,ij->j", Q, AQ)
    traj = [] if record else None
    converged = False
    it = 0
    for it in range(1, stop.max_iter + 1):
        Q_old, nus_old = Q, nus
        Q = gram_schmidt(AQ)
        AQ = A @ Q
        nus = np.einsum("ij,ij->j", Q, AQ)
        value = max(stop.metric(Q[:, i], Q_old[:, i], nus[i], nus_old[i])
                    for i in range(k))
        if traj is not None:
            traj.append((it, value))
        if stop.met(value, it):
            converged = True
            break
    ests = [EigenEstimate(Q[:, i].copy(), float(nus[i])) for i in range(k)]
    return BlockReport(ests, it, converged, traj)


def lanczos(A, q0, m=None, reorthogonalize=True, tol=1e-8, restarts=0):
    """Top eigenpair by m-step Lanczos tridiagonalization.

    Full reorthogonalization (two Gram-Schmidt passes against all previous
    basis vectors) is on by default.  The m x m tridiagonal matrix is
    diagonalized with the Jacobi oracle and the top Ritz pair lifted back.
    ``restarts`` > 0 restarts explicitly from the current Ritz vector while
    the residual exceeds ``tol * max(1, |theta|)``.  The reported iteration
    count is the total number of Lanczos steps.
    """
    A = as_symmetric(A)
    d = A.shape[0]
    m = d if m is None else int(m)
    if not 1 <= m <= d:
        raise PowerLabError(f"m must lie in [1, {d}]")
    v = normalize(_check_vector(q0, d, "q0"))
    steps = 0
    scale = max(1.0, float(np.linalg.norm(A, 1)))
    for cycle in range(int(restarts) + 1):
        Q = np.zeros((d, m))
        alpha = np.zeros(m)
        beta = np.zeros(m)
        Q[:, 0] = v
        size = m
        for j in range(m):
            w = A @ Q[:, j]
            alpha[j] = float(Q[:, j] @ w)
            w = w - alpha[j] * Q[:, j]
            if j > 0:
                w = w - beta[j - 1] * Q[:, j - 1]
            if reorthogonalize:
                for _ in range(2):
                    w = w - Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
            beta[j] = np.linalg.norm(w)
            steps += 1
            if j + 1 < m:
                if beta[j] <= 1e-14 * scale:
                    size = j + 1          # invariant subspace found
                    break
                Q[:, j + 1] = w / beta[j]
        T = np.diag(alpha[:size])
        if size > 1:
            off = beta[:size - 1]
            T = T + np.diag(off, 1) + np.diag(off, -1)
        vals, vecs = oracle_eigh(T)
        theta, s = float(vals[0]), vecs[:, 0]
        x = normalize(Q[:, :size] @ s)
        resid = float(np.linalg.norm(A @ x - theta * x))
        converged = resid <= tol * max(1.0, abs(theta))
        if converged:
            break
        v = x
    return SolveReport(EigenEstimate(x, float(x @ (A @ x))), 0, steps,
                       converged=bool(converged), residual=resid)


# ---------------------------------------------------------------------------
# bounds and precision checks
# ---------------------------------------------------------------------------

def powerm_bound(k, lambda1, lambda2, beta, overlap):
    """Upper bound on sin^2(q_k, v_1) for momentum power iteration.

    For lambda2 < 2 sqrt(beta) <= lambda1 the bound is
    (4/overlap^2) (2 sqrt(beta) / (lambda1 + sqrt(lambda1^2 - 4 beta)))^{2k};
    for smaller beta it is
    (1/overlap^2) ((lambda2 + sqrt(lambda2^2 - 4 beta)) /
    (lambda1 + sqrt(lambda1^2 - 4 beta)))^{2k}.
    """
    if not 0 < lambda2 < lambda1 <= 1:
        raise PowerLabError("need 0 < lambda2 < lambda1 <= 1")
    if not overlap > 0:
        raise PowerLabError("overlap |q0.v1| must be positive")
    if beta < 0:
        raise PowerLabError("beta must be nonnegative")
    two_sqrt = 2.0 * math.sqrt(beta)
    if two_sqrt > lambda1:
        raise PowerLabError("outside guarantee region: 2*sqrt(beta) > lambda1")
    denom = lambda1 + math.sqrt(max(0.0, lambda1 * lambda1 - 4.0 * beta))
    if lambda2 < two_sqrt:
        return 4.0 / overlap ** 2 * (two_sqrt / denom) ** (2 * k)
    num = lambda2 + math.sqrt(max(0.0, lambda2 * lambda2 - 4.0 * beta))
    return 1.0 / overlap ** 2 * (num / denom) ** (2 * k)


def check_rho_precision(lambda2_est, spectrum):
    """True iff |lambda2 - estimate| <= lambda1 - lambda2.

    Inside this window beta = estimate^2/4 still yields a convergent
    momentum phase.
    """
    l1, l2 = float(spectrum[0]), float(spectrum[1])
    return bool(abs(l2 - lambda2_est) <= l1 - l2)


def practical_J_bound(alpha1, alpha2, rho, tau, d, theta0, c=1.0):
    """Pre-momentum round budget from lower bounds alpha1, alpha2 on the gaps.

    J = ceil(c [ (1/alpha1) ln(tan^2 theta0 / (delta alpha2))
                 + (1/alpha2) ln(d tau / rho) ]),  delta = min(rho, 1/(tau sqrt d)).
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise PowerLabError("gap lower bounds must be positive")
    if not tau > 1:
        raise PowerLabError("tau must exceed 1")
    if not 0 < rho < 0.5:
        raise PowerLabError("rho must lie in (0, 1/2)")
    if rho >= math.sqrt(alpha1):
        raise PowerLabError("rho must be below sqrt(alpha1)")
    delta = min(rho, 1.0 / (tau * math.sqrt(d)))
    t2 = math.tan(theta0) ** 2
    val = c * (math.log(t2 / (delta * alpha2)) / alpha1 +
               math.log(d * tau / rho) / alpha2)
    # guard against ceil(2.0000000000000004) = 3
    return max(1, math.ceil(val - 1e-9 * max(1.0, abs(val))))


def oracle_beta(A):
    """Optimal momentum lambda_2^2 / 4 from the oracle spectrum."""
    vals, _ = oracle_eigh(A)
    return float(vals[1]) ** 2 / 4.0
