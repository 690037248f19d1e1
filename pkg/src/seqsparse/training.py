"""Supervised training of unfolded networks.

Parameters are handled as a dict of named arrays so one optimiser serves
all three parameterisations (generic RNN weights, untied per-layer SISTA
parameters, tied SISTA parameters). Training is deterministic given the data
and the config: batches come from a seeded shuffle and gradients are summed
in a fixed order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linops import make_rng
from .recovery import SistaParams, sista
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

log = logging.getLogger(__name__)

__all__ = [
    "SplitData",
    "TrainConfig",
    "TrainReport",
    "glorot_uniform",
    "init_params",
    "mse_loss",
    "predict",
    "random_search_lambdas",
    "rmsprop_step",
    "sgd_step",
    "train",
]

MODES = ("generic", "untied_sista", "tied_sista")
INITS = ("sista", "random")
OPTIMIZERS = ("sgd", "rmsprop")
RMSPROP_EPS = 1e-8

# stream keys under the config seed
_INIT_STREAM, _SHUFFLE_STREAM, _SEARCH_STREAM = 4, 5, 8


@dataclass
class TrainConfig:
    mode: str = "tied_sista"
    init: str = "sista"
    k_layers: int = 3
    lr: float = 1e-4
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0
    optimizer: str = "rmsprop"
    rmsprop_momentum: float = 0.9
    rmsprop_avg: float = 0.1
    clamp_lambda2_nonneg: bool = False
    freeze_mask: frozenset = frozenset()
    # generic mode only: None picks "sista" wiring for SISTA init, "generic" otherwise
    connectivity: str | None = None
    log_alpha: bool = False
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.k_layers < 1:
            raise ValueError("need batch_size >= 1, epochs >= 0, k_layers >= 1")
        if self.connectivity not in (None, "generic", "sista"):
            raise ValueError("connectivity must be generic or sista")
        self.freeze_mask = frozenset(self.freeze_mask)


class SplitData(NamedTuple):
    x: np.ndarray  # (B, T, M)
    y: np.ndarray  # (B, T, N)


def mse_loss(y_hat_seq, y_seq):
    """Per-element MSE and its gradient with respect to ``y_hat_seq``."""
    a = np.asarray(y_hat_seq, dtype=np.float64)
    b = np.asarray(y_seq, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    count = max(diff.size, 1)
    return float(np.sum(diff * diff) / count), (2.0 / count) * diff


def glorot_uniform(rng, shape):
    """Uniform on +-sqrt(6 / (fan_in + fan_out)) over the last two axes."""
    fan_out, fan_in = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: TrainConfig, n: int, m: int, base: SistaParams | None = None):
    """Initial parameter object for ``cfg.mode``.

    SISTA initialisation needs ``base`` and reproduces the untrained solver
    exactly. Random initialisation draws every weight matrix Glorot-uniform
    and zeros biases and initial states; SISTA scalars come from ``base`` if
    given, else alpha=1, lambda1=0.02, lambda2=0.002.
    """
    k = cfg.k_layers
    if cfg.init == "sista":
        if base is None:
            raise ValueError("SISTA initialisation requires base SISTA parameters")
        if cfg.mode == "tied_sista":
            return TiedSistaNet(base.copy(), k)
        if cfg.mode == "untied_sista":
            return UntiedSistaParams.from_tied(base, k)
        if cfg.connectivity == "generic":
            raise ValueError("SISTA initialisation implies SISTA connectivity")
        return map_sista_to_rnn(base, k)

    rng = make_rng(cfg.seed, _INIT_STREAM)
    alpha, lam1, lam2 = (base.alpha, base.lambda1, base.lambda2) if base is not None else (1.0, 0.02, 0.002)
    if cfg.mode == "tied_sista":
        A = glorot_uniform(rng, (m, n))
        D = glorot_uniform(rng, (n, n))
        F = glorot_uniform(rng, (n, n))
        return TiedSistaNet(SistaParams(A, D, F, np.zeros(n), alpha, lam1, lam2), k)
    if cfg.mode == "untied_sista":
        return UntiedSistaParams(
            glorot_uniform(rng, (k, m, n)), glorot_uniform(rng, (k, n, n)), glorot_uniform(rng, (k, n, n)),
            np.full(k, alpha), np.full(k, lam1), np.full(k, lam2), np.zeros(n),
        )
    wiring = cfg.connectivity or "generic"
    kv = k if wiring == "sista" else 1
    W = glorot_uniform(rng, (k, n, n))
    V = glorot_uniform(rng, (kv, n, m))
    S = glorot_uniform(rng, (k - 1, n, n))
    U = glorot_uniform(rng, (n, n))
    h0 = np.zeros(n) if wiring == "sista" else np.zeros((k, n))
    return StackedRnnParams(h0, np.zeros((k, n)), W, V, S, U, np.zeros(n), connectivity=wiring)


def _forward(obj, x):
    if isinstance(obj, TiedSistaNet):
        return forward_tied(obj, x)
    if isinstance(obj, UntiedSistaParams):
        return forward_untied(obj, x)
    return forward(obj, x)


def predict(obj, x) -> np.ndarray:
    """Network output for observations ``x`` of shape (T, M) or (B, T, M)."""
    return _forward(obj, x)[0]


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    return {name: params[name] - lr * grads[name] if name in grads else params[name] for name in params}


def rmsprop_step(params: dict, grads: dict, state: dict | None, lr: float, momentum: float = 0.9, avg: float = 0.1):
    """One RMSProp step with momentum on the velocity; returns ``(params, state)``.

    ``a <- (1-avg) a + avg g^2``; ``v <- momentum v - lr g / sqrt(a + eps)``;
    ``theta <- theta + v``. Inputs are not modified.
    """
    state = state or {}
    new_params, new_state = {}, {}
    for name, value in params.items():
        if name not in grads:
            new_params[name] = value
            if name in state:
                new_state[name] = state[name]
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        acc, vel = state.get(name, (np.zeros_like(g), np.zeros_like(g)))
        acc = (1.0 - avg) * acc + avg * g * g
        vel = momentum * vel - lr * g / np.sqrt(acc + RMSPROP_EPS)
        new_params[name] = value + vel
        new_state[name] = (acc, vel)
    return new_params, new_state


def _clip(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    return {k: g * (max_norm / total) for k, g in grads.items()}


@dataclass
class TrainReport:
    """Per-epoch history; row 0 is the untrained network."""

    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    val_sum_sq: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False
    params: object = None
    best_params: object = None

    def to_csv(self, include_seconds: bool = False) -> str:
        header = ["epoch", "train_loss", "val_mse"] + (["seconds"] if include_seconds else [])
        lines = [",".join(header)]
        for i, e in enumerate(self.epochs):
            row = [str(e), repr(float(self.train_loss[i])), repr(float(self.val_mse[i]))]
            if include_seconds:
                row.append(f"{self.seconds[i]:.3f}")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


class _Trainable:
    """Named-array view of a parameter object, with optional log-alpha."""

    def __init__(self, obj, log_alpha: bool):
        self.obj = obj
        self.log_alpha = log_alpha and not isinstance(obj, StackedRnnParams)

    def arrays(self) -> dict:
        arrs = {k: np.array(v, dtype=np.float64) for k, v in self.obj.arrays().items()}
        if self.log_alpha:
            arrs["alpha"] = np.log(arrs["alpha"])
        return arrs

    def rebuild(self, arrs: dict):
        arrs = dict(arrs)
        if self.log_alpha:
            arrs["alpha"] = np.exp(arrs["alpha"])
        return self.obj.replace(**arrs)

    def grads(self, raw: dict) -> dict:
        g = {k: np.array(v, dtype=np.float64) for k, v in raw.items()}
        if self.log_alpha:
            g["alpha"] = g["alpha"] * np.asarray(self.obj.arrays()["alpha"])
        return g


def _evaluate(obj, data: SplitData):
    y_hat = predict(obj, data.x)
    diff = y_hat - data.y
    per_seq = np.sum(diff * diff, axis=(1, 2))
    return float(np.mean(diff * diff)), float(np.mean(per_seq))


def train(train_data: SplitData, val_data: SplitData, cfg: TrainConfig, base: SistaParams | None = None,
          initial=None) -> TrainReport:
    """Minimise per-element MSE of the network output over ``train_data``.

    ``initial`` overrides :func:`init_params`. Validation MSE is recorded
    before training (epoch 0) and after every epoch; ``best_params`` is the
    checkpoint with the lowest validation MSE. A non-finite loss stops
    training with ``diverged`` set and the history kept up to that point.
    """
    n = train_data.y.shape[2]
    m = train_data.x.shape[2]
    obj = initial if initial is not None else init_params(cfg, n, m, base)
    view = _Trainable(obj, cfg.log_alpha)
    names = set(view.arrays())
    unknown = cfg.freeze_mask - names
    if unknown:
        raise ValueError(f"freeze_mask names {sorted(unknown)} not in {sorted(names)}")

    report = TrainReport()
    t0 = time.perf_counter()
    tr_mse, _ = _evaluate(obj, train_data)
    val, val_sum = _evaluate(obj, val_data)
    report.epochs.append(0)
    report.train_loss.append(tr_mse)
    report.val_mse.append(val)
    report.val_sum_sq.append(val_sum)
    report.seconds.append(time.perf_counter() - t0)
    best_val = val
    report.best_params = obj
    log.info("epoch 0: train %.6g val %.6g", tr_mse, val)

    state = None
    count = len(train_data.x)
    for epoch in range(1, cfg.epochs + 1):
        order = make_rng(cfg.seed, _SHUFFLE_STREAM, epoch).permutation(count)
        losses = []
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            y_hat, tape = _forward(obj, train_data.x[idx])
            loss, g_y = mse_loss(y_hat, train_data.y[idx])
            if not np.isfinite(loss):
                report.diverged = True
                break
            losses.append(loss * len(idx))
            grads = view.grads(backward(tape, g_y))
            for name in cfg.freeze_mask:
                grads.pop(name, None)
            if cfg.max_grad_norm:
                grads = _clip(grads, cfg.max_grad_norm)
            arrs = view.arrays()
            if cfg.optimizer == "sgd":
                arrs = sgd_step(arrs, grads, cfg.lr)
            else:
                arrs, state = rmsprop_step(arrs, grads, state, cfg.lr, cfg.rmsprop_momentum, cfg.rmsprop_avg)
            if cfg.clamp_lambda2_nonneg and "lambda2" in arrs:
                arrs["lambda2"] = np.maximum(arrs["lambda2"], 0.0)
            if not all(np.all(np.isfinite(a)) for a in arrs.values()):
                report.diverged = True
                break
            try:
                obj = view.rebuild(arrs)
            except ValueError:  # e.g. alpha driven to a non-positive value
                report.diverged = True
                break
            view = _Trainable(obj, cfg.log_alpha)
        if report.diverged:
            log.warning("training diverged in epoch %d", epoch)
            break
        val, val_sum = _evaluate(obj, val_data)
        if not np.isfinite(val):
            report.diverged = True
            log.warning("validation MSE non-finite after epoch %d", epoch)
            break
        report.epochs.append(epoch)
        report.train_loss.append(sum(losses) / count)
        report.val_mse.append(val)
        report.val_sum_sq.append(val_sum)
        report.seconds.append(time.perf_counter() - t0)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            report.best_params = obj
        log.info("epoch %d: train %.6g val %.6g", epoch, report.train_loss[-1], val)
    report.params = obj
    return report


def random_search_lambdas(data: SplitData, base: SistaParams, k: int = 3, trials: int = 40, seed: int = 0,
                          log10_range=(-3.0, 1.0)):
    """Pick ``(lambda1, lambda2)`` for ``k``-iteration SISTA by random search.

    Both exponents are drawn uniformly from ``log10_range``; the pair with
    the lowest per-element MSE on ``data`` wins. Returns
    ``(lambda1, lambda2, mse)``; ties keep the earlier draw.
    """
    rng = make_rng(seed, _SEARCH_STREAM)
    best = None
    for _ in range(trials):
        l1, l2 = 10.0 ** rng.uniform(*log10_range, size=2)
        p = base.copy()
        p.lambda1, p.lambda2 = float(l1), float(l2)
        y_hat = np.array([sista(x, p, k).y_seq for x in data.x]).reshape(data.y.shape)
        err = float(np.mean((y_hat - data.y) ** 2))
        if best is None or err < best[2]:
            best = (float(l1), float(l2), err)
    return best
