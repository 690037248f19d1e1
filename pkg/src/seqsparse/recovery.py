"""Iterative sparse recovery: soft-thresholding, ISTA and sequential ISTA.

``ista`` solves the basis-pursuit-denoising / LASSO problem

    min_h  1/2 ||x - A D h||^2 + lam ||h||_1

by proximal gradient steps with fixed inverse step size ``alpha``.
``sista`` solves the sequential problem

    min_{h_1..T}  sum_t 1/2 ||x_t - A D h_t||^2 + lam1 ||h_t||_1
                        + lam2/2 ||D h_t - F D h_{t-1}||^2

one time step at a time, warm-starting each step from the linear prediction
``D^T F D h_{t-1}`` of the previous estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linops import as_matrix, as_vector

__all__ = [
    "LassoProblem",
    "RecoveryResult",
    "SistaParams",
    "ista",
    "ista_converged",
    "lasso_objective",
    "sista",
    "sista_converged",
    "sista_objective",
    "sista_step_objective",
    "soft_threshold",
    "stacked_problem",
]

OBJ_FLOOR = 1e-300


def soft_threshold(z, b):
    """Elementwise ``sign(z) * max(|z| - b, 0)``, with ``soft(0) = 0``."""
    if np.any(np.asarray(b) < 0):
        raise ValueError(f"soft-threshold level must be non-negative, got {b}")
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - b, 0.0)


@dataclass(frozen=True)
class LassoProblem:
    A: np.ndarray
    D: np.ndarray
    x: np.ndarray
    lam: float

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        D = as_matrix(self.D, "D")
        x = as_vector(self.x, "x")
        if D.shape[0] != D.shape[1] or A.shape[1] != D.shape[0] or A.shape[0] != x.shape[0]:
            raise ValueError(f"inconsistent dims: A {A.shape}, D {D.shape}, x {x.shape}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "x", x)

    @property
    def effective(self) -> np.ndarray:
        """Total measurement operator ``A @ D``."""
        return self.A @ self.D


def lasso_objective(p: LassoProblem, h) -> float:
    r = p.x - p.effective @ h
    return float(0.5 * (r @ r) + p.lam * np.abs(h).sum())


class IstaRun(NamedTuple):
    h: np.ndarray
    iters: int
    converged: bool


def _ista_operators(p: LassoProblem, alpha: float):
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    ad = p.effective
    step = np.eye(ad.shape[1]) - (ad.T @ ad) / alpha
    drive = (ad.T @ p.x) / alpha
    return step, drive


def ista(p: LassoProblem, h0, alpha: float, k: int, trace: bool = True):
    """Run exactly ``k`` ISTA iterations from ``h0``.

    Returns ``(h, objectives)``; ``objectives[i]`` is the objective after
    iteration ``i + 1``, or ``None`` when ``trace`` is off.
    """
    step, drive = _ista_operators(p, alpha)
    thresh = p.lam / alpha
    h = as_vector(h0, "h0").copy()
    objs = [] if trace else None
    for _ in range(k):
        h = soft_threshold(step @ h + drive, thresh)
        if trace:
            objs.append(lasso_objective(p, h))
    return h, objs


def ista_converged(p: LassoProblem, h0, alpha: float, rel_tol: float = 1e-4, max_iter: int = 10_000) -> IstaRun:
    """ISTA until the relative objective improvement drops below ``rel_tol``."""
    if rel_tol <= 0:
        raise ValueError("rel_tol must be > 0")
    step, drive = _ista_operators(p, alpha)
    thresh = p.lam / alpha
    h = as_vector(h0, "h0").copy()
    prev = lasso_objective(p, h)
    for it in range(1, max_iter + 1):
        h = soft_threshold(step @ h + drive, thresh)
        obj = lasso_objective(p, h)
        if (prev - obj) / max(prev, OBJ_FLOOR) < rel_tol:
            return IstaRun(h, it, True)
        prev = obj
    return IstaRun(h, max_iter, False)


@dataclass
class SistaParams:
    """Parameters of the sequential model and its solver.

    ``A`` (M x N) measures, ``D`` (N x N) synthesises signals from codes,
    ``F`` (N x N) linearly predicts the next signal, ``h0`` is the code
    estimate before the first step, ``alpha`` the inverse step size and
    ``lambda1``/``lambda2`` weight sparsity and prediction error.
    """

    A: np.ndarray
    D: np.ndarray
    F: np.ndarray
    h0: np.ndarray
    alpha: float = 1.0
    lambda1: float = 0.02
    lambda2: float = 0.002

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        self.D = as_matrix(self.D, "D")
        self.F = as_matrix(self.F, "F")
        self.h0 = as_vector(self.h0, "h0")
        n = self.D.shape[0]
        if self.D.shape != (n, n) or self.F.shape != (n, n) or self.A.shape[1] != n or self.h0.shape != (n,):
            raise ValueError(
                f"inconsistent dims: A {self.A.shape}, D {self.D.shape}, F {self.F.shape}, h0 {self.h0.shape}"
            )
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        self.alpha = float(self.alpha)
        self.lambda1 = float(self.lambda1)
        self.lambda2 = float(self.lambda2)

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def copy(self) -> "SistaParams":
        return SistaParams(
            self.A.copy(), self.D.copy(), self.F.copy(), self.h0.copy(), self.alpha, self.lambda1, self.lambda2
        )


@dataclass
class RecoveryResult:
    h_seq: np.ndarray
    y_seq: np.ndarray
    objective_trace: list | None = None
    iterations: list = field(default_factory=list)
    converged: bool = True


def _as_sequence(x_seq, m: int) -> np.ndarray:
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, m)
    if x.ndim != 2 or x.shape[1] != m:
        raise ValueError(f"expected a (T, {m}) observation sequence, got shape {x.shape}")
    return x


def sista_step_objective(params: SistaParams, h, x_t, h_prev) -> float:
    """Objective of one time step given the previous estimate ``h_prev``."""
    D = params.D
    r = x_t - params.A @ (D @ h)
    e = D @ h - params.F @ (D @ h_prev)
    return float(0.5 * (r @ r) + params.lambda1 * np.abs(h).sum() + 0.5 * params.lambda2 * (e @ e))


def sista_objective(params: SistaParams, h_seq, x_seq) -> float:
    """Full sequential objective; the first prediction term uses ``params.h0``."""
    h_seq = np.asarray(h_seq, dtype=np.float64)
    x_seq = _as_sequence(x_seq, params.m)
    total = 0.0
    prev = params.h0
    for h, x in zip(h_seq, x_seq):
        total += sista_step_objective(params, h, x, prev)
        prev = h
    return total


class _SistaOps:
    """Precomputed matrices of the SISTA inner update."""

    def __init__(self, params: SistaParams):
        A, D, a, l2 = params.A, params.D, params.alpha, params.lambda2
        n = params.n
        gram = D.T @ (A.T @ A + l2 * np.eye(n)) @ D
        self.step = np.eye(n) - gram / a
        self.input = (D.T @ A.T) / a
        self.predict = D.T @ params.F @ D
        self.coupling = l2 / a
        self.thresh = params.lambda1 / a
        if self.thresh < 0:
            raise ValueError("lambda1/alpha must be >= 0 for the iterative solver")

    def iterate(self, h, drive):
        return soft_threshold(self.step @ h + drive, self.thresh)


def sista(x_seq, params: SistaParams, k: int, trace: bool = False, h0=None) -> RecoveryResult:
    """Sequential ISTA with exactly ``k`` inner iterations per time step.

    ``h0`` overrides ``params.h0`` (e.g. for oracle initialisation). With
    ``trace`` on, ``objective_trace[t]`` holds the per-step objective after
    each inner iteration.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x_seq = _as_sequence(x_seq, params.m)
    ops = _SistaOps(params)
    prev = params.h0 if h0 is None else as_vector(h0, "h0")
    hs = np.zeros((len(x_seq), params.n))
    traces = [] if trace else None
    for t, x in enumerate(x_seq):
        pred = ops.predict @ prev
        drive = ops.input @ x + ops.coupling * pred
        h = pred
        objs = []
        for _ in range(k):
            h = ops.iterate(h, drive)
            if trace:
                objs.append(sista_step_objective(params, h, x, prev))
        if trace:
            traces.append(np.array(objs))
        hs[t] = h
        prev = h
    return RecoveryResult(hs, hs @ params.D.T, traces, [k] * len(x_seq), True)


def sista_converged(
    x_seq, params: SistaParams, rel_tol: float = 1e-4, max_iter: int = 10_000, h0=None
) -> RecoveryResult:
    """Sequential ISTA run to convergence at every time step.

    Each step iterates until the relative improvement of that step's
    objective falls below ``rel_tol``; ``iterations[t]`` records how many
    inner iterations step ``t`` used. ``converged`` is False if any step hit
    ``max_iter``.
    """
    if rel_tol <= 0 or max_iter < 1:
        raise ValueError("need rel_tol > 0 and max_iter >= 1")
    x_seq = _as_sequence(x_seq, params.m)
    ops = _SistaOps(params)
    prev = params.h0 if h0 is None else as_vector(h0, "h0")
    hs = np.zeros((len(x_seq), params.n))
    iters = []
    all_converged = True
    for t, x in enumerate(x_seq):
        pred = ops.predict @ prev
        drive = ops.input @ x + ops.coupling * pred
        h = pred
        obj = sista_step_objective(params, h, x, prev)
        done = False
        for it in range(1, max_iter + 1):
            h = ops.iterate(h, drive)
            new = sista_step_objective(params, h, x, prev)
            if (obj - new) / max(obj, OBJ_FLOOR) < rel_tol:
                done = True
                break
            obj = new
        all_converged &= done
        iters.append(it)
        hs[t] = h
        prev = h
    return RecoveryResult(hs, hs @ params.D.T, None, iters, all_converged)


def stacked_problem(params: SistaParams, x_t, h_prev) -> LassoProblem:
    """Single-step LASSO equivalent of the sequential objective.

    Stacks ``[A D; -sqrt(lam2) D]`` and ``[x_t; -sqrt(lam2) F D h_prev]`` so
    one time step becomes an ordinary LASSO with ``lam = lambda1``; returned
    with ``A`` set to the stacked operator and ``D`` to the identity.
    Requires ``lambda2 >= 0``.
    """
    if params.lambda2 < 0:
        raise ValueError("stacked form needs lambda2 >= 0")
    r = np.sqrt(params.lambda2)
    D = params.D
    op = np.vstack([params.A @ D, -r * D])
    obs = np.concatenate([np.asarray(x_t, dtype=np.float64), -r * (params.F @ (D @ h_prev))])
    return LassoProblem(op, np.eye(params.n), obs, params.lambda1)
