"""Sequential ISTA viewed as a stacked recurrent network.

Three parameterisations share one forward/backward engine:

* ``StackedRnnParams`` -- free RNN weights, either with conventional stacked
  connectivity (``"generic"``) or with the SISTA wiring (``"sista"``: input
  feeds every layer, every layer recurs from the previous step's last layer).
* ``UntiedSistaParams`` -- one copy of (A, D, F, alpha, lambda1, lambda2) per
  layer, mapped to RNN weights layer by layer.
* ``TiedSistaNet`` -- a single ``SistaParams`` shared by all ``k`` layers.

Mapping one SISTA parameter set to RNN weights (``P = D^T F D``,
``G = D^T (A^T A + lambda2 I) D``)::

    V_k = D^T A^T / alpha            S_k = I - G / alpha          (k > 1)
    W_1 = (1 + lambda2/alpha) P - G P / alpha
    W_k = (lambda2 / alpha) P        (k > 1)
    b_k = lambda1 / alpha            U = D,  c = 0

With these weights the network output equals the SISTA reconstruction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .recovery import SistaParams, sista

__all__ = [
    "EquivalenceReport",
    "ForwardTape",
    "StackedRnnParams",
    "TiedSistaNet",
    "UntiedSistaParams",
    "backward",
    "equivalence_check",
    "forward",
    "forward_tied",
    "forward_untied",
    "map_sista_to_rnn",
    "map_untied_to_rnn",
]

CONNECTIVITY = ("generic", "sista")


@dataclass
class StackedRnnParams:
    """Free weights of a ``K``-layer stacked RNN with soft-threshold units.

    Shapes: ``W`` (K, N, N); ``S`` (K-1, N, N) for layers 2..K; ``V``
    (Kv, N, M) -- layer ``k`` adds ``V[k] x_t`` for ``k < Kv`` (Kv = K under
    SISTA wiring); ``b`` (K, N); ``U`` (N, N); ``c`` (N,). ``h0`` is (N,) for
    SISTA wiring and (K, N) for generic wiring.
    """

    h0: np.ndarray
    b: np.ndarray
    W: np.ndarray
    V: np.ndarray
    S: np.ndarray
    U: np.ndarray
    c: np.ndarray
    connectivity: str = "generic"

    names = ("h0", "b", "W", "V", "S", "U", "c")

    def __post_init__(self):
        for name in self.names:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.connectivity not in CONNECTIVITY:
            raise ValueError(f"connectivity must be one of {CONNECTIVITY}")
        K, N, _ = self.W.shape
        if K < 1:
            raise ValueError("need at least one layer")
        kv = self.V.shape[0]
        problems = [
            self.W.shape != (K, N, N),
            self.S.shape != (K - 1, N, N),
            self.b.shape != (K, N),
            self.V.ndim != 3 or self.V.shape[1] != N or not 1 <= kv <= K,
            self.U.ndim != 2 or self.U.shape[1] != N,
            self.c.shape != (self.U.shape[0],),
            self.h0.shape != ((N,) if self.connectivity == "sista" else (K, N)),
            self.connectivity == "sista" and kv != K,
        ]
        if any(problems):
            raise ValueError(f"inconsistent stacked-RNN shapes: { {n: getattr(self, n).shape for n in self.names} }")

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.V.shape[2]

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in self.names}

    def replace(self, **arrays) -> "StackedRnnParams":
        values = self.arrays()
        values.update(arrays)
        return StackedRnnParams(**values, connectivity=self.connectivity)

    def copy(self) -> "StackedRnnParams":
        return self.replace(**{n: a.copy() for n, a in self.arrays().items()})


@dataclass
class UntiedSistaParams:
    """Per-layer SISTA parameters: ``A`` (K, M, N), ``D``/``F`` (K, N, N), scalars (K,)."""

    A: np.ndarray
    D: np.ndarray
    F: np.ndarray
    alpha: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    h0: np.ndarray

    names = ("A", "D", "F", "alpha", "lambda1", "lambda2", "h0")

    def __post_init__(self):
        for name in self.names:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        K, M, N = self.A.shape
        bad = [
            self.D.shape != (K, N, N),
            self.F.shape != (K, N, N),
            self.alpha.shape != (K,),
            self.lambda1.shape != (K,),
            self.lambda2.shape != (K,),
            self.h0.shape != (N,),
            K < 1,
        ]
        if any(bad):
            raise ValueError("inconsistent untied SISTA parameter shapes")
        if np.any(self.alpha == 0):
            raise ValueError("alpha must be non-zero in every layer")

    @classmethod
    def from_tied(cls, p: SistaParams, k: int) -> "UntiedSistaParams":
        rep = lambda a: np.repeat(np.asarray(a, dtype=np.float64)[None], k, axis=0)  # noqa: E731
        return cls(
            rep(p.A), rep(p.D), rep(p.F),
            np.full(k, p.alpha), np.full(k, p.lambda1), np.full(k, p.lambda2),
            p.h0.copy(),
        )

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in self.names}

    def replace(self, **arrays) -> "UntiedSistaParams":
        values = self.arrays()
        values.update(arrays)
        return UntiedSistaParams(**values)

    def copy(self) -> "UntiedSistaParams":
        return self.replace(**{n: a.copy() for n, a in self.arrays().items()})


@dataclass
class TiedSistaNet:
    params: SistaParams
    k: int = 3

    names = ("A", "D", "F", "h0", "alpha", "lambda1", "lambda2")

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def arrays(self) -> dict:
        p = self.params
        return {
            "A": p.A, "D": p.D, "F": p.F, "h0": p.h0,
            "alpha": np.float64(p.alpha), "lambda1": np.float64(p.lambda1), "lambda2": np.float64(p.lambda2),
        }

    def replace(self, **arrays) -> "TiedSistaNet":
        values = self.arrays()
        values.update(arrays)
        p = SistaParams(
            values["A"], values["D"], values["F"], values["h0"],
            float(values["alpha"]), float(values["lambda1"]), float(values["lambda2"]),
        )
        return TiedSistaNet(p, self.k)

    def copy(self) -> "TiedSistaNet":
        return TiedSistaNet(self.params.copy(), self.k)


def _layer_weights(A, D, F, alpha, lam1, lam2, first):
    """RNN weights of one unfolded SISTA layer plus the intermediates backprop needs."""
    n = D.shape[0]
    M = A @ D
    G = M.T @ M + lam2 * (D.T @ D)
    P = D.T @ F @ D
    if first:
        W = (1.0 + lam2 / alpha) * P - (G @ P) / alpha
        S = None
    else:
        W = (lam2 / alpha) * P
        S = np.eye(n) - G / alpha
    V = M.T / alpha
    b = np.full(n, lam1 / alpha)
    return W, S, V, b, (M, G, P)


def _layer_weights_backward(A, D, F, alpha, lam1, lam2, first, inter, gW, gS, gV, gb):
    """Chain ``(gW, gS, gV, gb)`` through :func:`_layer_weights`."""
    M, G, P = inter
    a2 = alpha * alpha
    g_alpha = 0.0
    g_lam2 = 0.0
    if first:
        gP = (1.0 + lam2 / alpha) * gW - (G.T @ gW) / alpha
        gG = -(gW @ P.T) / alpha
        PW = float(np.vdot(P, gW))
        g_alpha += -lam2 * PW / a2 + float(np.vdot(G @ P, gW)) / a2
        g_lam2 += PW / alpha
    else:
        gG = -gS / alpha
        g_alpha += float(np.vdot(G, gS)) / a2
        PW = float(np.vdot(P, gW))
        gP = (lam2 / alpha) * gW
        g_lam2 += PW / alpha
        g_alpha += -lam2 * PW / a2
    gM = gV.T / alpha
    g_alpha += -float(np.vdot(M.T, gV)) / a2
    sb = float(gb.sum())
    g_lam1 = sb / alpha
    g_alpha += -lam1 * sb / a2
    gGs = gG + gG.T
    gM = gM + M @ gGs
    gD = lam2 * (D @ gGs)
    g_lam2 += float(np.vdot(D.T @ D, gG))
    gD += F @ D @ gP.T + F.T @ D @ gP
    gF = D @ gP @ D.T
    gA = gM @ D.T
    gD += A.T @ gM
    return gA, gD, gF, g_alpha, g_lam1, g_lam2


def map_untied_to_rnn(u: UntiedSistaParams, with_intermediates: bool = False):
    K = u.k
    N = u.D.shape[1]
    W = np.empty((K, N, N))
    S = np.empty((K - 1, N, N))
    V = np.empty((K, N, u.A.shape[1]))
    b = np.empty((K, N))
    inters = []
    for k in range(K):
        Wk, Sk, Vk, bk, inter = _layer_weights(
            u.A[k], u.D[k], u.F[k], u.alpha[k], u.lambda1[k], u.lambda2[k], k == 0
        )
        W[k], V[k], b[k] = Wk, Vk, bk
        if k:
            S[k - 1] = Sk
        inters.append(inter)
    rnn = StackedRnnParams(u.h0.copy(), b, W, V, S, u.D[K - 1].copy(), np.zeros(N), connectivity="sista")
    return (rnn, inters) if with_intermediates else rnn


def map_sista_to_rnn(p: SistaParams, k: int) -> StackedRnnParams:
    """RNN weights (SISTA wiring) whose forward pass reproduces ``sista(x, p, k)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return map_untied_to_rnn(UntiedSistaParams.from_tied(p, k))


@dataclass
class ForwardTape:
    """Everything the reverse pass needs from one forward call."""

    kind: str
    rnn: StackedRnnParams
    x: np.ndarray
    pre: np.ndarray
    hid: np.ndarray
    h0_full: np.ndarray
    y_hat: np.ndarray
    batched: bool
    backend: object = None
    source: object = None
    intermediates: list = field(default_factory=list)

    @property
    def h_last(self) -> np.ndarray:
        """Last-layer states as (B, T, N)."""
        return self.hid[:, -1].transpose(1, 0, 2)


def _batch(x_seq, m):
    x = np.asarray(x_seq, dtype=np.float64)
    batched = x.ndim == 3
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 1 and x.size == 0:
        x = np.zeros((1, 0, m))
    if x.ndim != 3 or x.shape[2] != m:
        raise ValueError(f"expected observations of shape (T, {m}) or (B, T, {m}), got {np.shape(x_seq)}")
    return x, batched


def _run(rnn: StackedRnnParams, x_seq, backend=None, kind="rnn"):
    impl = kernels.get_backend(backend)
    x, batched = _batch(x_seq, rnn.m)
    B, T, _ = x.shape
    K, N = rnn.k, rnn.n
    xt = x.transpose(1, 0, 2)
    drive = np.zeros((T, K, B, N))
    for k in range(rnn.V.shape[0]):
        drive[:, k] = xt @ rnn.V[k].T
    h0_full = np.zeros((K, B, N))
    if rnn.connectivity == "sista":
        h0_full[K - 1] = rnn.h0
    else:
        h0_full[:] = rnn.h0[:, None, :]
    S_full = np.zeros((K, N, N))
    S_full[1:] = rnn.S
    pre, hid = impl.forward_recurrence(
        np.ascontiguousarray(rnn.W), S_full, drive, np.ascontiguousarray(rnn.b), h0_full,
        rnn.connectivity == "sista",
    )
    y = hid[:, K - 1].transpose(1, 0, 2) @ rnn.U.T + rnn.c
    tape = ForwardTape(kind, rnn, x, pre, hid, h0_full, y, batched, impl)
    return (y if batched else y[0]), tape


def forward(params: StackedRnnParams, x_seq, backend=None):
    """Run the stacked RNN on ``x_seq`` of shape (T, M) or (B, T, M)."""
    return _run(params, x_seq, backend)


def forward_untied(params: UntiedSistaParams, x_seq, backend=None):
    rnn, inters = map_untied_to_rnn(params, with_intermediates=True)
    y, tape = _run(rnn, x_seq, backend, kind="untied")
    tape.source = params
    tape.intermediates = inters
    return y, tape


def forward_tied(net: TiedSistaNet, x_seq, backend=None):
    untied = UntiedSistaParams.from_tied(net.params, net.k)
    y, tape = forward_untied(untied, x_seq, backend)
    tape.kind = "tied"
    tape.source = net
    return y, tape


def _rnn_backward(tape: ForwardTape, grad_y):
    rnn = tape.rnn
    g = np.asarray(grad_y, dtype=np.float64)
    if not tape.batched:
        g = g[None]
    if g.shape != tape.x.shape[:2] + (rnn.U.shape[0],):
        raise ValueError(f"grad_y shape {np.shape(grad_y)} does not match the taped output")
    K = rnn.k
    h_last = tape.h_last
    gU = np.einsum("bto,btn->on", g, h_last)
    gc = g.sum(axis=(0, 1))
    g_out = np.ascontiguousarray((g @ rnn.U).transpose(1, 0, 2))
    S_full = np.zeros((K, rnn.n, rnn.n))
    S_full[1:] = rnn.S
    g_pre, gW, gS_full, gb, gh0_full = tape.backend.backward_recurrence(
        np.ascontiguousarray(rnn.W), S_full, np.ascontiguousarray(rnn.b), tape.h0_full,
        tape.pre, tape.hid, g_out, rnn.connectivity == "sista",
    )
    kv = rnn.V.shape[0]
    gV = np.einsum("tkbn,btm->knm", g_pre[:, :kv], tape.x)
    if rnn.connectivity == "sista":
        gh0 = gh0_full[K - 1].sum(axis=0)
    else:
        gh0 = gh0_full.sum(axis=1)
    return {"h0": gh0, "b": gb, "W": gW, "V": gV, "S": gS_full[1:], "U": gU, "c": gc}


def _untied_backward(tape: ForwardTape, rg: dict) -> dict:
    u: UntiedSistaParams = tape.source if tape.kind == "untied" else UntiedSistaParams.from_tied(
        tape.source.params, tape.source.k
    )
    K = u.k
    out = {name: np.zeros_like(arr) for name, arr in u.arrays().items()}
    for k in range(K):
        gS = rg["S"][k - 1] if k else None
        gA, gD, gF, ga, gl1, gl2 = _layer_weights_backward(
            u.A[k], u.D[k], u.F[k], u.alpha[k], u.lambda1[k], u.lambda2[k], k == 0,
            tape.intermediates[k], rg["W"][k], gS, rg["V"][k], rg["b"][k],
        )
        out["A"][k] += gA
        out["D"][k] += gD
        out["F"][k] += gF
        out["alpha"][k] += ga
        out["lambda1"][k] += gl1
        out["lambda2"][k] += gl2
    out["D"][K - 1] += rg["U"]
    out["h0"] = rg["h0"]
    return out


def backward(tape: ForwardTape, grad_y) -> dict:
    """Loss gradients for every trainable array of the taped parameterisation.

    ``grad_y`` is dL/dy_hat with the same shape as the forward output. Keys
    follow the parameter object's ``names``; tied scalars come back as 0-d
    floats.
    """
    rg = _rnn_backward(tape, grad_y)
    if tape.kind == "rnn":
        return rg
    if tape.kind not in ("untied", "tied"):
        raise ValueError(f"unknown tape kind {tape.kind!r}")
    ug = _untied_backward(tape, rg)
    if tape.kind == "untied":
        return ug
    if not isinstance(tape.source, TiedSistaNet):
        raise ValueError("tied tape does not carry a tied parameter set")
    # tied weights are shared, so their gradient is the sum over layers
    return {
        "A": ug["A"].sum(axis=0), "D": ug["D"].sum(axis=0), "F": ug["F"].sum(axis=0),
        "h0": ug["h0"],
        "alpha": float(ug["alpha"].sum()), "lambda1": float(ug["lambda1"].sum()),
        "lambda2": float(ug["lambda2"].sum()),
    }


class EquivalenceReport(NamedTuple):
    max_dev_h: float
    max_dev_y: float
    tol: float
    passed: bool

    @property
    def max_dev(self) -> float:
        return max(self.max_dev_h, self.max_dev_y)


def equivalence_check(p: SistaParams, k: int, x_seq, tol: float = 1e-9, rnn: StackedRnnParams | None = None,
                      backend=None) -> EquivalenceReport:
    """Compare iterative SISTA against the forward pass of its mapped network.

    ``rnn`` substitutes the network weights (e.g. a deliberately perturbed
    mapping); by default ``map_sista_to_rnn(p, k)`` is used.
    """
    x = np.asarray(x_seq, dtype=np.float64).reshape(-1, p.m)
    if len(x) == 0:
        return EquivalenceReport(0.0, 0.0, tol, True)
    ref = sista(x, p, k)
    net = map_sista_to_rnn(p, k) if rnn is None else rnn
    y, tape = forward(net, x, backend)
    dh = float(np.max(np.abs(tape.h_last[0] - ref.h_seq)))
    dy = float(np.max(np.abs(y - ref.y_seq)))
    return EquivalenceReport(dh, dy, tol, max(dh, dy) < tol)
