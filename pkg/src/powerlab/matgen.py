"""Random covariance matrices with an exactly prescribed spectrum.

The construction draws two Haar-distributed orthonormal factors U (n x d)
and V (d x d), forms the data matrix X = sqrt(n) U diag(sqrt(lambda)) V^T and
the covariance A = X^T X / n = V diag(lambda) V^T.  Because the spectrum is
known by construction, every experiment has exact ground truth.
"""

from dataclasses import dataclass

import numpy as np

from .core import PowerLabError


def make_rng(seed):
    """Seeded generator; accepts ints, SeedSequences or existing generators."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def trial_seed(base, *indices):
    """Independent child seed for (base seed, cell index, trial index, ...)."""
    return np.random.SeedSequence([int(base), *(int(i) for i in indices)])


@dataclass(frozen=True)
class Spectrum:
    """Descending, nonnegative eigenvalue list."""
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise PowerLabError("spectrum must be non-empty")
        arr = np.array(vals)
        if np.any(~np.isfinite(arr)) or np.any(arr < 0):
            raise PowerLabError("spectrum entries must be finite and nonnegative")
        if np.any(np.diff(arr) > 0):
            raise PowerLabError("spectrum must be sorted in descending order")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def d(self):
        return len(self.values)

    def as_array(self):
        return np.array(self.values)

    def check_gapped(self):
        """Require 1 >= l1 > l2 > l3 (needed by the two-phase solvers)."""
        v = self.values
        if len(v) < 3:
            raise PowerLabError("two-phase experiments need d >= 3")
        if not (1.0 >= v[0] > v[1] > v[2]):
            raise PowerLabError("spectrum must satisfy 1 >= l1 > l2 > l3")
        return self

    @classmethod
    def plateau(cls, d, head=(1.0, 0.9), rest=0.8):
        """Leading values ``head`` followed by a flat tail at ``rest``."""
        head = tuple(head)
        if d < len(head):
            raise PowerLabError("d is shorter than the leading block")
        return cls(head + (rest,) * (d - len(head)))

    @classmethod
    def parse(cls, text, d=None):
        """Parse ``"1,0.9,0.8"``; with ``d`` the last value is repeated to length d."""
        vals = [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]
        if d is not None:
            if len(vals) > d:
                raise PowerLabError("spectrum has more values than d")
            vals = vals + [vals[-1]] * (d - len(vals))
        return cls(tuple(vals))

    def tag(self):
        """Short identifier such as ``1/0.9/0.8x8``."""
        v = self.values
        head = []
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[j + 1] == v[i]:
                j += 1
            run = j - i + 1
            head.append(f"{v[i]:g}" + (f"x{run}" if run > 1 else ""))
            i = j + 1
        return "/".join(head)


@dataclass(frozen=True)
class GeneratedInstance:
    """Output of :func:`synth_covariance`.

    ``eigenvectors`` holds V, so column i is the exact eigenvector for
    ``spectrum[i]``.
    """
    data_matrix: np.ndarray
    covariance: np.ndarray
    spectrum: Spectrum
    seed: object
    eigenvectors: np.ndarray

    @property
    def d(self):
        return self.covariance.shape[0]


def haar_orthogonal(rows, cols, seed):
    """``rows x cols`` matrix with Haar-distributed orthonormal columns.

    QR of an i.i.d. standard normal matrix with the signs of R's diagonal
    folded into Q, which makes the distribution exactly Haar.
    """
    rows, cols = int(rows), int(cols)
    if cols < 1 or rows < cols:
        raise PowerLabError(f"need rows >= cols >= 1, got {rows} x {cols}")
    rng = make_rng(seed)
    Z = rng.standard_normal((rows, cols))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def synth_covariance(spectrum, n_samples=1000, seed=0):
    """Data matrix and covariance with spectrum exactly ``spectrum``."""
    if not isinstance(spectrum, Spectrum):
        spectrum = Spectrum(tuple(spectrum))
    d = spectrum.d
    n = int(n_samples)
    if n < d:
        raise PowerLabError(f"n_samples={n} is smaller than d={d}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    su, sv = ss.spawn(2)
    U = haar_orthogonal(n, d, su)
    V = haar_orthogonal(d, d, sv)
    lam = spectrum.as_array()
    X = np.sqrt(n) * (U * np.sqrt(lam)) @ V.T
    A = (X.T @ X) / n
    A = 0.5 * (A + A.T)
    return GeneratedInstance(X, A, spectrum, seed, V)


def covariance_with_spectrum(spectrum, seed=0):
    """Cheap covariance V diag(lambda) V^T without the data matrix."""
    if not isinstance(spectrum, Spectrum):
        spectrum = Spectrum(tuple(spectrum))
    V = haar_orthogonal(spectrum.d, spectrum.d, seed)
    A = (V * spectrum.as_array()) @ V.T
    return 0.5 * (A + A.T), V
