"""Equalized focal loss family with gradient-guided category state.

Kernels live in :mod:`eqfocal.losses`, the per-category statistics in
:mod:`eqfocal.state`, and the synthetic long-tailed benchmark in
:mod:`eqfocal.synth`, :mod:`eqfocal.trainer` and :mod:`eqfocal.metrics`.
"""
__version__ = "0.1.0"

from .losses import (LossHyperParams, Variant, batch_loss, efl, efl_grad, eqfl, eqfl_grad, eqfl_logits,
                     eqlv2_focal, eqlv2_focal_grad, focal_grad, focal_loss)
from .state import CategoryState, gather_stats

__all__ = [
    "LossHyperParams", "Variant", "CategoryState", "batch_loss", "gather_stats",
    "focal_loss", "focal_grad", "efl", "efl_grad", "eqlv2_focal", "eqlv2_focal_grad",
    "eqfl", "eqfl_grad", "eqfl_logits",
]
