"""Streaming PCA: sample streams and mini-batch eigenvector estimators.

Every solver here consumes one fresh batch covariance estimate
A_t = (1/n) sum x x^T per round and mirrors a deterministic solver from
:mod:`powerlab.solvers`; on a stream that replays a fixed matrix they
reproduce it.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import (EigenEstimate, PowerLabError, SolveReport, _check_vector,
                   as_symmetric, normalize)
from .solvers import DMPowerConfig, _pre_momentum_phase


class StreamExhausted(PowerLabError):
    """A one-pass stream ran out of samples.

    ``partial`` holds the report built from the rounds completed so far when
    the exhaustion happened inside a solver.
    """

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


# ---------------------------------------------------------------------------
# sample sources
# ---------------------------------------------------------------------------

class MatrixSource:
    """Rows of a fixed data matrix, shuffled once per epoch."""

    def __init__(self, X, seed=0, reshuffle=True):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise PowerLabError("data matrix must be 2-D with at least one row")
        self.rng = np.random.default_rng(seed)
        self.reshuffle = reshuffle
        self.epoch = 0
        self._order = self.rng.permutation(self.X.shape[0])
        self._pos = 0

    @property
    def d(self):
        return self.X.shape[1]

    def population(self):
        return self.X.T @ self.X / self.X.shape[0]

    def draw(self, n):
        out = []
        need = n
        while need > 0:
            if self._pos == len(self._order):
                if not self.reshuffle:
                    raise StreamExhausted(
                        f"one-pass stream exhausted after epoch {self.epoch}")
                self.epoch += 1
                self._order = self.rng.permutation(self.X.shape[0])
                self._pos = 0
            take = min(need, len(self._order) - self._pos)
            out.append(self._order[self._pos:self._pos + take])
            self._pos += take
            need -= take
        return self.X[np.concatenate(out)]


class GaussianSource:
    """i.i.d. N(0, A) samples.  ``factor`` F with F F^T = A may be supplied."""

    def __init__(self, cov, seed=0, factor=None):
        self.cov = as_symmetric(cov)
        if factor is None:
            vals, vecs = np.linalg.eigh(self.cov)
            if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
                raise PowerLabError("Gaussian covariance must be PSD")
            factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        self.factor = np.asarray(factor, dtype=float)
        self.rng = np.random.default_rng(seed)

    @property
    def d(self):
        return self.cov.shape[0]

    def population(self):
        return self.cov

    def draw(self, n):
        z = self.rng.standard_normal((n, self.factor.shape[1]))
        return z @ self.factor.T


class ConstantSource:
    """Zero-variance source: every batch estimate equals ``A`` exactly."""

    def __init__(self, A):
        self.A = as_symmetric(A)

    @property
    def d(self):
        return self.A.shape[0]

    def population(self):
        return self.A

    def draw(self, n):
        raise PowerLabError("a constant source yields estimates, not samples")


class SampleStream:
    """Seeded stream of d-dimensional samples with a consumed-sample cursor."""

    def __init__(self, source):
        self.source = source
        self.cursor = 0

    @classmethod
    def from_matrix(cls, X, seed=0, reshuffle=True):
        return cls(MatrixSource(X, seed, reshuffle))

    @classmethod
    def gaussian(cls, cov, seed=0, factor=None):
        return cls(GaussianSource(cov, seed, factor))

    @classmethod
    def from_instance(cls, instance, seed=0):
        """Gaussian stream whose covariance is a matgen instance's matrix."""
        lam = instance.spectrum.as_array()
        factor = instance.eigenvectors * np.sqrt(lam)
        return cls(GaussianSource(instance.covariance, seed, factor))

    @classmethod
    def constant(cls, A):
        return cls(ConstantSource(A))

    @property
    def d(self):
        return self.source.d

    def population(self):
        """The matrix whose unbiased estimates the stream produces."""
        return self.source.population()

    def next_batch(self, n):
        x = self.source.draw(int(n))
        self.cursor += int(n)
        return x

    def estimate(self, n):
        n = int(n)
        if n < 1:
            raise PowerLabError("batch size must be at least 1")
        if isinstance(self.source, ConstantSource):
            self.cursor += n
            return self.source.A
        x = self.next_batch(n)
        return x.T @ x / n


def batch_estimate(stream, n):
    """(1/n) sum of x x^T over the next ``n`` samples of ``stream``."""
    return stream.estimate(n)


def standardize(X):
    """Center columns and divide by (global std) * sqrt(d)."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    sd = Xc.std()
    if sd == 0:
        raise PowerLabError("cannot standardize constant data")
    return Xc / (sd * np.sqrt(X.shape[1]))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def eta_c_over_t(c):
    """Step schedule eta_t = c / t."""
    c = float(c)
    return lambda t: c / t


@dataclass
class StreamConfig:
    """Budgets and hyper-parameters for the streaming solvers.

    ``rounds`` is the total number of batches a single-phase method uses.
    DMStream runs at most ``J`` pre-momentum rounds (default ``rounds``) and
    then ``K`` momentum rounds (default: whatever is left of ``rounds``).
    ``eps`` optionally stops the momentum phase early once
    ||q_k - q_{k-1}|| <= eps.  ``eta`` is either a callable t -> eta_t or a
    number c meaning eta_t = c / t.
    """
    batch_size: int = 500
    rounds: int = 50
    J: Optional[int] = None
    K: Optional[int] = None
    rho: float = 0.1
    beta: Optional[float] = None
    eta: Union[float, Callable[[int], float]] = 27.0
    eps: Optional[float] = None

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise PowerLabError("batch size must be at least 1")
        if int(self.rounds) < 1:
            raise PowerLabError("round budget must be at least 1")
        for name in ("J", "K"):
            v = getattr(self, name)
            if v is not None and int(v) < 1:
                raise PowerLabError(f"{name} must be at least 1")

    def eta_schedule(self):
        return self.eta if callable(self.eta) else eta_c_over_t(self.eta)


def _start(stream, q0):
    d = stream.d
    return normalize(_check_vector(q0, d, "q0"))


class _RoundSource:
    """Adapter giving the shared loops one fresh estimate per round."""

    def __init__(self, stream, n):
        self.stream, self.n, self.rounds = stream, n, 0

    def __call__(self, _round):
        M = self.stream.estimate(self.n)
        self.rounds += 1
        return M


def _run_momentum(stream, q, beta, rounds, eps, n, joint=False, k0=0,
                  record=False, keep_iterates=False):
    """Momentum recurrence where round t uses its own batch estimate.

    Round t computes q_t = normalize(A_t q_{t-1} - beta q_{t-2}) and then
    nu_t = q_t^T A_t q_t with the same estimate.
    """
    src = _RoundSource(stream, n)
    d = q.shape[0]
    q_prev = np.zeros(d)
    traj = [] if record else None
    iterates = [q.copy()] if keep_iterates else None
    nu = float("nan")
    converged = eps is None
    t = 0
    for t in range(1, rounds + 1):
        M = src(t)
        y = M @ q - beta * q_prev if beta != 0.0 else M @ q
        nrm = np.linalg.norm(y)
        q_old = q
        qn = normalize(y)
        q_prev = q / nrm if joint else q
        q = qn
        nu = float(q @ (M @ q))
        dist = float(np.linalg.norm(q - q_old))
        if traj is not None:
            traj.append((k0 + t, dist))
        if iterates is not None:
            iterates.append(q.copy())
        if eps is not None and dist <= eps:
            converged = True
            break
    return q, nu, t, converged, traj, iterates, src.rounds


def stochastic_power(stream, cfg, q0, record=False, keep_iterates=False):
    """Power iteration with a fresh batch estimate every round."""
    q = _start(stream, q0)
    q, nu, t, conv, traj, its, used = _run_momentum(
        stream, q, 0.0, int(cfg.rounds), cfg.eps, int(cfg.batch_size),
        record=record, keep_iterates=keep_iterates)
    return SolveReport(EigenEstimate(q, nu), 0, t, trajectory=traj,
                       converged=conv, samples_consumed=used * int(cfg.batch_size),
                       iterates=its)


def minibatch_power_momentum(stream, cfg, q0, record=False,
                             keep_iterates=False, joint_scaling=False):
    """Momentum power iteration on mini-batch estimates, q_{-1} = 0."""
    if cfg.beta is None:
        raise PowerLabError("mini-batch momentum needs cfg.beta")
    beta = float(cfg.beta)
    if beta < 0:
        raise PowerLabError("beta must be nonnegative")
    q = _start(stream, q0)
    q, nu, t, conv, traj, its, used = _run_momentum(
        stream, q, beta, int(cfg.rounds), cfg.eps, int(cfg.batch_size),
        joint=joint_scaling, record=record, keep_iterates=keep_iterates)
    return SolveReport(EigenEstimate(q, nu), 0, t, beta_used=beta,
                       trajectory=traj, converged=conv,
                       samples_consumed=used * int(cfg.batch_size), iterates=its)


def oja(stream, cfg, q0, record=False, keep_iterates=False):
    """Oja's rule q_t = normalize(q_{t-1} + eta_t A_t q_{t-1})."""
    eta = cfg.eta_schedule()
    q = _start(stream, q0)
    n = int(cfg.batch_size)
    traj = [] if record else None
    iterates = [q.copy()] if keep_iterates else None
    nu = float("nan")
    converged = cfg.eps is None
    t = 0
    for t in range(1, int(cfg.rounds) + 1):
        M = stream.estimate(n)
        q_old = q
        q = normalize(q + eta(t) * (M @ q))
        nu = float(q @ (M @ q))
        dist = float(np.linalg.norm(q - q_old))
        if traj is not None:
            traj.append((t, dist))
        if iterates is not None:
            iterates.append(q.copy())
        if cfg.eps is not None and dist <= cfg.eps:
            converged = True
            break
    return SolveReport(EigenEstimate(q, nu), 0, t, trajectory=traj,
                       converged=converged, samples_consumed=t * n,
                       iterates=iterates)


def dmstream(stream, cfg, q0, w0, record=False, keep_iterates=False,
             joint_scaling=False):
    """Streaming delayed-momentum power method.

    Pre-momentum rounds run the deflation estimate of lambda_2 on fresh
    batches until |mu_j - mu_{j-1}| <= rho or ``J`` rounds; the momentum
    phase then uses beta = mu_J^2 / 4 for ``K`` rounds (or until the optional
    ``eps`` exit).  Exhausting a one-pass stream raises
    :class:`StreamExhausted` carrying the partial report.
    """
    n = int(cfg.batch_size)
    J = int(cfg.J) if cfg.J is not None else int(cfg.rounds)
    q = _start(stream, q0)
    w = normalize(_check_vector(w0, stream.d, "w0"))
    pre = DMPowerConfig(rho=cfg.rho, eps=cfg.eps or 1e-9, max_pre=J)
    src = _RoundSource(stream, n)
    try:
        q, w, mu, nu, Jused, _, mus, traj, pre_its = _pre_momentum_phase(
            None, q, w, pre, record, keep_iterates, matvec=src)
    except StreamExhausted as exc:
        partial = SolveReport(EigenEstimate(q, float("nan")), src.rounds, 0,
                              samples_consumed=src.rounds * n)
        raise StreamExhausted(str(exc), partial) from exc
    beta = mu * mu / 4.0
    K = int(cfg.K) if cfg.K is not None else int(cfg.rounds) - Jused
    K_ran, conv, traj2, its = 0, True, [], None
    if K > 0:
        try:
            q, nu, K_ran, conv, traj2, its, used = _run_momentum(
                stream, q, beta, K, cfg.eps, n, joint=joint_scaling, k0=Jused,
                record=record, keep_iterates=keep_iterates)
        except StreamExhausted as exc:
            partial = SolveReport(EigenEstimate(q, float("nan")), Jused, 0,
                                  lambda2_estimate=mu, beta_used=beta,
                                  samples_consumed=stream.cursor)
            raise StreamExhausted(str(exc), partial) from exc
    report = SolveReport(EigenEstimate(q, nu), Jused, K_ran, lambda2_estimate=mu,
                         beta_used=beta, converged=bool(conv),
                         samples_consumed=(Jused + K_ran) * n, iterates=its,
                         pre_iterates=pre_its, mu_trace=mus, w_estimate=w)
    if record:
        report.trajectory = (traj or []) + (traj2 or [])
    return report


# ---------------------------------------------------------------------------
# metrics and diagnostics
# ---------------------------------------------------------------------------

LOG_FLOOR = 1e-300


def log_error_metric(X, q, v1):
    """log10(1 - ||X q|| / ||X v1||) with samples as the rows of ``X``.

    The argument is clamped at 1e-300, so q = +-v1 reports -300.
    """
    X = np.asarray(X, dtype=float)
    q = _check_vector(q, X.shape[1], "q")
    v1 = _check_vector(v1, X.shape[1], "v1")
    top = np.linalg.norm(X @ v1)
    if top == 0:
        raise PowerLabError("degenerate data: ||X v1|| = 0")
    arg = 1.0 - np.linalg.norm(X @ q) / top
    return float(np.log10(max(arg, LOG_FLOOR)))


MAX_VARIANCE_DIM = 30


def empirical_variance_norm(stream, n, trials=50):
    """Monte-Carlo estimate of ||E[(A_hat - A) kron (A_hat - A)]||_2.

    A is the stream's population matrix.  The d^2 x d^2 operator is formed
    explicitly, so d is limited to 30; for larger problems reason about the
    variance through batch size instead (it decays like 1/n).
    """
    d = stream.d
    if d > MAX_VARIANCE_DIM:
        raise PowerLabError(
            f"d={d} is too large for the explicit d^2 x d^2 variance operator; "
            "the variance of a batch estimate scales like sigma^2/n, so "
            "increase the batch size to shrink it")
    if int(trials) < 1:
        raise PowerLabError("trials must be at least 1")
    A = stream.population()
    S = np.zeros((d * d, d * d))
    for _ in range(int(trials)):
        E = stream.estimate(n) - A
        S += np.kron(E, E)
    S /= int(trials)
    return float(np.linalg.norm(S, 2))
