"""Finite-difference verification of the reverse pass.

The loss is ``sum(w * y_hat)`` for a fixed random weight tensor ``w``, so the
upstream gradient is ``w`` and the check exercises every output entry.
Points where some pre-activation sits within ``kink_tol`` of a threshold are
rejected and redrawn, since the soft threshold is not differentiable there.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .linops import make_rng
from .recovery import SistaParams
from .unfolded import (
    StackedRnnParams,
    TiedSistaNet,
    UntiedSistaParams,
    backward,
    forward,
    forward_tied,
    forward_untied,
    map_sista_to_rnn,
)

__all__ = [
    "GradCheckResult",
    "KINDS",
    "check_gradients",
    "gradcheck_suite",
    "kink_margin",
    "random_instance",
    "relative_error",
]

KINDS = ("tied", "untied", "rnn_sista", "rnn_generic")

_INSTANCE_STREAM = 7


class GradCheckResult(NamedTuple):
    errors: dict  # parameter name -> relative error
    margin: float  # smallest ||z| - b| over all pre-activations

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_error < tol


def relative_error(a, n) -> float:
    """``|a - n| / (|a| + |n|)``; zero when both vanish."""
    a = np.ravel(a)
    n = np.ravel(n)
    den = np.linalg.norm(a) + np.linalg.norm(n)
    return 0.0 if den == 0.0 else float(np.linalg.norm(a - n) / den)


def _run(obj, x):
    if isinstance(obj, TiedSistaNet):
        return forward_tied(obj, x)
    if isinstance(obj, UntiedSistaParams):
        return forward_untied(obj, x)
    return forward(obj, x)


def kink_margin(obj, x) -> float:
    _, tape = _run(obj, x)
    b = tape.rnn.b[None, :, None, :]
    if tape.pre.size == 0:
        return np.inf
    return float(np.min(np.abs(np.abs(tape.pre) - b)))


def random_instance(kind: str, seed: int, n: int = 6, m: int = 3, t: int = 3, k: int = 2):
    """Random parameters, observations (T, M) and loss weights (T, N)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    rng = make_rng(seed, _INSTANCE_STREAM)
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    D = np.linalg.qr(rng.standard_normal((n, n)))[0]
    F = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    h0 = 0.5 * rng.standard_normal(n)
    p = SistaParams(A, D, F, h0, alpha=rng.uniform(1.5, 3.0), lambda1=rng.uniform(0.05, 0.3),
                    lambda2=rng.uniform(0.05, 0.5))
    x = rng.standard_normal((t, m))
    w = rng.standard_normal((t, n))
    if kind == "tied":
        return TiedSistaNet(p, k), x, w
    if kind == "untied":
        u = UntiedSistaParams.from_tied(p, k)
        jitter = lambda a: a + 0.05 * rng.standard_normal(a.shape)  # noqa: E731
        return u.replace(A=jitter(u.A), D=jitter(u.D), F=jitter(u.F),
                         alpha=u.alpha * rng.uniform(0.9, 1.1, k)), x, w
    rnn = map_sista_to_rnn(p, k)
    if kind == "rnn_sista":
        return rnn.replace(c=0.1 * rng.standard_normal(n)), x, w
    return StackedRnnParams(
        0.5 * rng.standard_normal((k, n)), rng.uniform(0.05, 0.2, (k, n)),
        0.5 * rng.standard_normal((k, n, n)), rng.standard_normal((1, n, m)),
        0.5 * rng.standard_normal((k - 1, n, n)), rng.standard_normal((n, n)),
        0.1 * rng.standard_normal(n), connectivity="generic",
    ), x, w


def check_gradients(obj, x, w, step: float = 1e-6, inject_sign_flip: str | None = None) -> GradCheckResult:
    """Central differences against :func:`backward` for every parameter entry.

    ``inject_sign_flip`` negates the analytic gradient of one parameter; it
    is a test hook proving that the check can fail.
    """
    _, tape = _run(obj, x)
    analytic = backward(tape, w)
    if inject_sign_flip is not None:
        if inject_sign_flip not in analytic:
            raise ValueError(f"unknown parameter {inject_sign_flip!r}")
        analytic[inject_sign_flip] = -np.asarray(analytic[inject_sign_flip])
    base = {name: np.array(a, dtype=np.float64) for name, a in obj.arrays().items()}
    errors = {}
    for name, arr in base.items():
        numeric = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1.0, -1.0):
                moved = arr.copy()
                moved[idx] += sgn * step
                y = _run(obj.replace(**{name: moved}), x)[0]
                vals.append(float(np.sum(w * y)))
            numeric[idx] = (vals[0] - vals[1]) / (2.0 * step)
        errors[name] = relative_error(analytic[name], numeric)
    return GradCheckResult(errors, kink_margin(obj, x))


def gradcheck_suite(kinds=KINDS, instances: int = 20, seed: int = 0, kink_tol: float = 1e-3,
                    step: float = 1e-6, max_draws: int = 1000, inject_sign_flip: str | None = None, **dims):
    """Check ``instances`` kink-free random points per kind.

    Returns ``{kind: [GradCheckResult, ...]}``. Draws whose kink margin is at
    most ``kink_tol`` are skipped.
    """
    out = {}
    for kind in kinds:
        results, draw = [], 0
        while len(results) < instances:
            if draw >= max_draws:
                raise RuntimeError(f"{kind}: no kink-free instance in {max_draws} draws")
            obj, x, w = random_instance(kind, seed * 100_003 + draw, **dims)
            draw += 1
            if kink_margin(obj, x) <= kink_tol:
                continue
            results.append(check_gradients(obj, x, w, step, inject_sign_flip))
        out[kind] = results
    return out
