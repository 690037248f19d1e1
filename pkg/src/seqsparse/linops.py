"""Dense linear algebra, measurement matrices and orthogonal wavelet dictionaries.

Matrices and vectors are plain ``float64`` numpy arrays. Constructors in this
module validate shapes and finiteness at the boundary; everything downstream
assumes well-formed arrays.

Wavelet dictionaries use periodic boundary handling, so the explicit matrix is
exactly orthogonal at every level. Coefficients are ordered
``[approximation, detail level 1 (finest), ..., detail level L (coarsest)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = [
    "ConvergenceError",
    "DictionarySpec",
    "as_matrix",
    "as_vector",
    "build_dictionary",
    "daubechies_filter",
    "make_rng",
    "matmul",
    "sample_measurement_matrix",
    "spectral_norm_sq",
]

DICTIONARY_KINDS = ("identity", "haar", "daubechies8")


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its budget.

    The last iterate is kept on ``last`` so callers can inspect or reuse it.
    """

    def __init__(self, message, last=None, iterations=0):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


def make_rng(seed: int, *streams: int) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, *streams)``.

    Distinct stream keys of the same seed are statistically independent, which
    is how per-sample and per-purpose randomness is split without global state.
    """
    key = [int(seed), *(int(s) for s in streams)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def as_vector(v, name="vector") -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def spectral_norm_sq(m, rel_tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of ``m.T @ m`` by power iteration.

    Stops once the eigen-residual ``||G v - r v||`` drops below
    ``sqrt(rel_tol) * r`` for Rayleigh quotient ``r``; the eigenvalue error is
    bounded by the squared residual over the spectral gap, i.e. on the order of
    ``rel_tol``. Raises :class:`ConvergenceError` (carrying the last iterate)
    if ``max_iter`` is reached first.
    """
    m = as_matrix(m)
    n = m.shape[1]
    if n == 0 or not np.any(m):
        return 0.0
    gram = m.T @ m
    # fixed start vector keeps the routine a pure function of its input
    v = make_rng(0x5EED, 0).standard_normal(n)
    v /= np.linalg.norm(v)
    res_tol = np.sqrt(rel_tol)
    for _ in range(max_iter):
        w = gram @ v
        est = float(v @ w)
        if np.linalg.norm(w - est * v) <= res_tol * abs(est):
            return est
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last=v, iterations=max_iter
    )


def sample_measurement_matrix(m: int, n: int, seed: int) -> np.ndarray:
    """Random ``m x n`` matrix with entries ``+-1/(3 sqrt(m))``, equiprobable."""
    if m < 1 or n < 1:
        raise ValueError("measurement matrix dims must be >= 1")
    signs = make_rng(seed, 1).integers(0, 2, size=(m, n))
    scale = 1.0 / (3.0 * np.sqrt(m))
    return np.where(signs == 1, scale, -scale)


@dataclass(frozen=True)
class DictionarySpec:
    kind: str = "identity"
    size: int = 8
    levels: int = 1

    def validate(self):
        if self.kind not in DICTIONARY_KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}; expected one of {DICTIONARY_KINDS}")
        if self.size < 1:
            raise ValueError("dictionary size must be >= 1")
        if self.kind == "identity":
            return
        if self.size & (self.size - 1):
            raise ValueError(f"wavelet dictionary size must be a power of two, got {self.size}")
        if self.levels < 1:
            raise ValueError("wavelet levels must be >= 1")
        if self.size % (2**self.levels):
            raise ValueError(f"size {self.size} not divisible by 2**{self.levels}")


def daubechies_filter(taps: int) -> np.ndarray:
    """Orthonormal Daubechies scaling filter with ``taps`` coefficients.

    Built by spectral factorisation: the minimum-phase root of the half-band
    polynomial, combined with ``taps/2`` zeros at ``z = -1``, normalised so the
    coefficients sum to ``sqrt(2)``. ``taps=2`` is Haar.
    """
    if taps < 2 or taps % 2:
        raise ValueError("taps must be an even integer >= 2")
    p = taps // 2
    # P(y) = sum_k C(p-1+k, k) y^k with y = (1 - cos w)/2 = -(z - 2 + 1/z)/4
    poly_y = [comb(p - 1 + k, k) for k in range(p)]
    roots_y = np.roots(poly_y[::-1]) if p > 1 else np.array([])
    zeros = []
    for y in roots_y:
        # z^2 - (2 - 4y) z + 1 = 0; keep the root inside the unit circle
        c = 2.0 - 4.0 * y
        disc = np.sqrt(c * c - 4.0 + 0j)
        z1, z2 = (c + disc) / 2.0, (c - disc) / 2.0
        zeros.append(z1 if abs(z1) < 1.0 else z2)
    h = np.array([1.0 + 0j])
    for z in zeros:
        h = np.convolve(h, [1.0, -z])
    for _ in range(p):
        h = np.convolve(h, [1.0, 1.0])
    h = np.real(h)
    h *= np.sqrt(2.0) / h.sum()
    return h


def _analysis_level(n: int, lo: np.ndarray) -> np.ndarray:
    """One periodic analysis stage as an ``n x n`` orthogonal matrix."""
    taps = len(lo)
    hi = np.array([(-1) ** k * lo[taps - 1 - k] for k in range(taps)])
    half = n // 2
    op = np.zeros((n, n))
    for r in range(half):
        for k in range(taps):
            col = (2 * r + k) % n
            op[r, col] += lo[k]
            op[half + r, col] += hi[k]
    return op


def build_dictionary(spec: DictionarySpec) -> np.ndarray:
    """Explicit ``N x N`` synthesis matrix for ``spec``.

    Column ``j`` is the signal synthesised from the ``j``-th unit coefficient
    vector, so ``y = D @ h`` and ``h = D.T @ y``.
    """
    spec.validate()
    n = spec.size
    if spec.kind == "identity":
        return np.eye(n)
    lo = daubechies_filter(2 if spec.kind == "haar" else 8)
    # analysis operator in natural (coarse-to-fine) band order
    analysis = np.eye(n)
    length = n
    for _ in range(spec.levels):
        stage = np.eye(n)
        stage[:length, :length] = _analysis_level(length, lo)
        analysis = stage @ analysis
        length //= 2
    # reorder detail bands fine-to-coarse after the approximation block
    coarse = n >> spec.levels
    order = list(range(coarse))
    for lev in range(1, spec.levels + 1):
        start = n >> lev
        order.extend(range(start, 2 * start))
    return analysis[order].T.copy()
