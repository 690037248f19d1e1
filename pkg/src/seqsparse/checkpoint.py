"""Save and load trainable parameter objects as named-matrix containers.

The manifest records the parameterisation (``kind``), layer count and sizes;
tied scalars are stored in the manifest as hex floats. Every array is stored
as an SSR1 matrix flattened to 2-D, with its true shape in ``shape.<name>``.
"""
from __future__ import annotations

import numpy as np

from .formats import FormatError, read_container, write_container
from .recovery import SistaParams
from .unfolded import StackedRnnParams, TiedSistaNet, UntiedSistaParams

__all__ = ["load_checkpoint", "save_checkpoint"]

_SCALARS = ("alpha", "lambda1", "lambda2")


def _flat(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim <= 1:
        return a.reshape(-1, 1)
    return a.reshape(-1, a.shape[-1])


def save_checkpoint(path, obj, extra: dict | None = None):
    """Write ``obj`` (tied, untied or stacked-RNN parameters) to ``path``."""
    manifest = {"format": "seqsparse-checkpoint-1"}
    if isinstance(obj, TiedSistaNet):
        p = obj.params
        manifest.update(kind="tied", k=obj.k, n=p.n, m=p.m)
        manifest.update({s: float(getattr(p, s)) for s in _SCALARS})
        arrays = {"A": p.A, "D": p.D, "F": p.F, "h0": p.h0}
    elif isinstance(obj, UntiedSistaParams):
        manifest.update(kind="untied", k=obj.k, n=obj.D.shape[1], m=obj.A.shape[1])
        arrays = obj.arrays()
    elif isinstance(obj, StackedRnnParams):
        manifest.update(kind="rnn", k=obj.k, n=obj.n, m=obj.m, connectivity=obj.connectivity)
        arrays = obj.arrays()
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    for name, a in arrays.items():
        manifest[f"shape.{name}"] = "x".join(str(d) for d in np.shape(a)) or "scalar"
    manifest.update(extra or {})
    write_container(path, manifest, {name: _flat(a) for name, a in arrays.items()})


def _shape(text) -> tuple:
    text = str(text)
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split("x"))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(obj, manifest)``."""
    manifest, mats = read_container(path)
    kind = manifest.get("kind")
    try:
        arrays = {name: m.reshape(_shape(manifest[f"shape.{name}"])) for name, m in mats.items()}
        if kind == "tied":
            p = SistaParams(arrays["A"], arrays["D"], arrays["F"], arrays["h0"],
                            *(float(manifest[s]) for s in _SCALARS))
            return TiedSistaNet(p, int(manifest["k"])), manifest
        if kind == "untied":
            return UntiedSistaParams(**arrays), manifest
        if kind == "rnn":
            return StackedRnnParams(**arrays, connectivity=manifest["connectivity"]), manifest
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent checkpoint ({exc})") from exc
    raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
