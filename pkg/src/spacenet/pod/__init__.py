"""Proof of distribution: robust spatial/temporal estimation of service quality."""

from .em import Component, DegenerateComponentWarning, EmResult, em_fit
from .engine import (
    Cause,
    Classification,
    PodError,
    PodReport,
    PodState,
    ReceiverResult,
    next_state,
    pod_epoch,
    spatial_loss,
    temporal_loss,
)
from .kernels import KernelRangeError, gaussian_kernel_exact, gaussian_kernel_poly, required_terms, sampling_weights
from .robust import soft_trim

__all__ = [
    "Cause",
    "Classification",
    "Component",
    "DegenerateComponentWarning",
    "EmResult",
    "KernelRangeError",
    "PodError",
    "PodReport",
    "PodState",
    "ReceiverResult",
    "em_fit",
    "gaussian_kernel_exact",
    "gaussian_kernel_poly",
    "next_state",
    "pod_epoch",
    "required_terms",
    "sampling_weights",
    "soft_trim",
    "spatial_loss",
    "temporal_loss",
]
