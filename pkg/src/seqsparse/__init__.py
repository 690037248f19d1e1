"""Sequential sparse recovery (SISTA) and its unfolding into a stacked RNN."""
from .kernels import BACKEND
from .linops import DictionarySpec, build_dictionary, sample_measurement_matrix, spectral_norm_sq
from .recovery import LassoProblem, RecoveryResult, SistaParams, ista, sista, sista_converged, soft_threshold
from .unfolded import (
    StackedRnnParams,
    TiedSistaNet,
    UntiedSistaParams,
    backward,
    equivalence_check,
    forward,
    map_sista_to_rnn,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DictionarySpec",
    "LassoProblem",
    "RecoveryResult",
    "SistaParams",
    "StackedRnnParams",
    "TiedSistaNet",
    "UntiedSistaParams",
    "backward",
    "build_dictionary",
    "equivalence_check",
    "forward",
    "ista",
    "map_sista_to_rnn",
    "sample_measurement_matrix",
    "sista",
    "sista_converged",
    "soft_threshold",
    "spectral_norm_sq",
]
