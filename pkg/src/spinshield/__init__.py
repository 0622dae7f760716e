"""Temporal-spectral invariance toolkit: phase-preserving amplitude attacks,
a learnable spectral adversary, and shortcut-suppression training for a toy
patch-signal detector."""

from .attacks import AttackSpec, apply_attack, build_mask, sample_attack
from .errors import DataFormatError, NumericalAbort
from .evaluation import (
    EvalReport,
    adaptive_attack,
    compute_auc,
    evaluate_under_attacks,
    notch_sweep,
)
from .models import ModelBundle, init_bundle, load_bundle, lsa_perturb, save_bundle
from .objectives import KernelSpec, LossWeights, mmd, symmetric_kl
from .spectral import (
    FrequencyGrid,
    OneSidedSpectrum,
    PatchSignalClip,
    dft_onesided,
    extract_patch_signals,
    idft_real,
    minmax_normalize_amplitude,
    recompose,
)
from .synthdata import DatasetSpec, LabeledClip, generate_dataset, load_clips
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "DataFormatError",
    "DatasetSpec",
    "EvalReport",
    "FrequencyGrid",
    "KernelSpec",
    "LabeledClip",
    "LossWeights",
    "ModelBundle",
    "NumericalAbort",
    "OneSidedSpectrum",
    "PatchSignalClip",
    "TrainConfig",
    "adaptive_attack",
    "apply_attack",
    "build_mask",
    "compute_auc",
    "dft_onesided",
    "evaluate_under_attacks",
    "extract_patch_signals",
    "generate_dataset",
    "idft_real",
    "init_bundle",
    "load_bundle",
    "load_clips",
    "lsa_perturb",
    "minmax_normalize_amplitude",
    "mmd",
    "notch_sweep",
    "recompose",
    "sample_attack",
    "save_bundle",
    "symmetric_kl",
    "train",
]
