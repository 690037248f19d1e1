"""Synthetic sequences, image-column sequences, and reconstruction metrics.

The latent model: codes ``h_t`` are sparse, signals ``y_t = D h_t`` are
linearly predictable (``y_t ~ F y_{t-1}``) and observed as
``x_t = A y_t + noise``. Exact sampling from that model is intractable, so
:func:`sample_sequence` uses a surrogate: predict, perturb with Gaussian
noise of variance ``1/nu2``, then soft-threshold at ``1/nu1``. It produces
sparse, temporally correlated codes; nothing in the solvers relies on it
being exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import FormatError, read_pgm
from .linops import as_matrix, as_vector, make_rng
from .recovery import soft_threshold

__all__ = [
    "SequenceSample",
    "SequentialModelSpec",
    "load_image_columns",
    "measure",
    "mse",
    "psnr",
    "sample_sequence",
    "sparse_initial_code",
    "synthetic_split",
]

# stream keys under a sample seed
_LATENT, _NOISE, _INIT = 2, 3, 6


@dataclass
class SequentialModelSpec:
    A: np.ndarray
    D: np.ndarray
    F: np.ndarray
    sigma2: float = 0.0
    nu1: float = 10.0
    nu2: float = 100.0
    T: int = 16
    h_init: np.ndarray | None = None

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        self.D = as_matrix(self.D, "D")
        self.F = as_matrix(self.F, "F")
        n = self.D.shape[0]
        if self.A.shape[1] != n or self.D.shape != (n, n) or self.F.shape != (n, n):
            raise ValueError("inconsistent model dims")
        self.h_init = np.zeros(n) if self.h_init is None else as_vector(self.h_init, "h_init")
        if self.h_init.shape != (n,):
            raise ValueError("h_init must have length N")
        if self.sigma2 < 0 or not self.nu1 > 0 or not self.nu2 > 0:
            raise ValueError("need sigma2 >= 0, nu1 > 0, nu2 > 0")
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass
class SequenceSample:
    """Observations ``x_seq`` (T, M), signals ``y_seq`` (T, N), codes ``h_seq`` (T, N).

    Image-derived samples have no latent codes, and no observations until
    :func:`measure` is applied.
    """

    x_seq: np.ndarray | None
    y_seq: np.ndarray
    h_seq: np.ndarray | None = None


def sample_sequence(spec: SequentialModelSpec, seed: int, index: int = 0) -> SequenceSample:
    """Draw one sequence; ``(seed, index)`` fully determines the result."""
    rng = make_rng(seed, index, _LATENT)
    n = spec.D.shape[0]
    predict = spec.D.T @ spec.F @ spec.D
    thresh = 1.0 / spec.nu1
    scale = np.sqrt(1.0 / spec.nu2)
    hs = np.zeros((spec.T, n))
    prev = spec.h_init
    for t in range(spec.T):
        cand = predict @ prev + scale * rng.standard_normal(n)
        prev = soft_threshold(cand, thresh)
        hs[t] = prev
    ys = hs @ spec.D.T
    xs = measure(ys, spec.A, spec.sigma2, seed, index)
    return SequenceSample(xs, ys, hs)


def sparse_initial_code(n: int, nonzeros: int, scale: float, seed: int, index: int = 0) -> np.ndarray:
    """Length-``n`` code with ``nonzeros`` Gaussian entries of std ``scale``."""
    rng = make_rng(seed, index, _INIT)
    h = np.zeros(n)
    support = rng.choice(n, size=min(nonzeros, n), replace=False)
    h[np.sort(support)] = scale * rng.standard_normal(len(support))
    return h


def synthetic_split(spec: SequentialModelSpec, count: int, seed: int, init_nonzeros: int = 0,
                    init_scale: float = 1.0, init_level: float = 0.0):
    """``count`` sequences stacked as ``(x, y, h)`` arrays of shape (count, T, .).

    Sample ``i`` starts from ``spec.h_init`` plus a random sparse code
    (``init_nonzeros`` entries of std ``init_scale``) plus the code of the
    constant signal ``init_level``, then follows :func:`sample_sequence`.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    n, m = spec.D.shape[0], spec.A.shape[0]
    xs, ys, hs = np.zeros((count, spec.T, m)), np.zeros((count, spec.T, n)), np.zeros((count, spec.T, n))
    offset = spec.D.T @ np.full(n, float(init_level))
    for i in range(count):
        start = spec.h_init + offset
        if init_nonzeros:
            start = start + sparse_initial_code(n, init_nonzeros, init_scale, seed, i)
        sub = SequentialModelSpec(spec.A, spec.D, spec.F, spec.sigma2, spec.nu1, spec.nu2, spec.T, start)
        smp = sample_sequence(sub, seed, i)
        xs[i], ys[i], hs[i] = smp.x_seq, smp.y_seq, smp.h_seq
    return xs, ys, hs


def measure(y_seq, A, sigma2: float, seed: int, index: int = 0) -> np.ndarray:
    """``x_t = A y_t + N(0, sigma2)`` for every row ``y_t`` of ``y_seq``."""
    y = np.asarray(y_seq, dtype=np.float64)
    A = as_matrix(A, "A")
    x = y @ A.T
    if sigma2 > 0:
        x = x + np.sqrt(sigma2) * make_rng(seed, index, _NOISE).standard_normal(x.shape)
    return x


def load_image_columns(path, n: int) -> SequenceSample:
    """Columns of a P5 PGM image as a signal sequence.

    The image is centre-cropped to a square whose side is a multiple of
    ``n``, box-averaged down to ``n x n`` and scaled to [0, 1]; column ``t``
    becomes ``y_seq[t]``.
    """
    img = read_pgm(path).astype(np.float64) / 255.0
    rows, cols = img.shape
    side = min(rows, cols)
    if n < 1 or n > side:
        raise FormatError(f"cannot produce {n}x{n} columns from a {rows}x{cols} image")
    side -= side % n
    r0, c0 = (rows - side) // 2, (cols - side) // 2
    sq = img[r0 : r0 + side, c0 : c0 + side]
    f = side // n
    small = sq.reshape(n, f, n, f).mean(axis=(1, 3))
    return SequenceSample(None, np.ascontiguousarray(small.T))


def mse(y_hat_seq, y_seq) -> float:
    """Mean squared error per element."""
    a = np.asarray(y_hat_seq, dtype=np.float64)
    b = np.asarray(y_seq, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def psnr(y_hat_seq, y_seq, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / mse)`` with per-element MSE; ``inf`` when exact."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    err = mse(y_hat_seq, y_seq)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))
