"""Spatially coupled sensing matrices, Bayes-optimal AMP and state evolution."""

from .amp import AmpDivergence, reconstruct_augmented, run_amp
from .coupling import (BaseMatrix, SensingMatrix, augment_identity, build_base_matrix, build_shape,
                       sample_sensing_matrix)
from .priors import SignalPrior, amp_threshold, mmse, mutual_information
from .state_evolution import run_state_evolution, run_uncoupled_se

__all__ = [
    "AmpDivergence", "BaseMatrix", "SensingMatrix", "SignalPrior", "amp_threshold",
    "augment_identity", "build_base_matrix", "build_shape", "mmse", "mutual_information",
    "reconstruct_augmented", "run_amp", "run_state_evolution", "run_uncoupled_se",
    "sample_sensing_matrix",
]
