"""Gaussian spatial kernels and sampling-density weights.

The polynomial kernel is the truncated Taylor series of exp(-x^2/2) with
x = d / sigma, usable inside an arithmetic circuit. Receivers are assumed to
lie within 3 sigma, so ``required_terms(eps, 3.0)`` fixes the truncation.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..signal import DomainError, Position

POLY_RANGE = 3.0


class KernelRangeError(DomainError):
    """Polynomial kernel evaluated beyond its 3-sigma validity range."""


def gaussian_kernel_exact(distance, sigma: float):
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    d = np.asarray(distance, dtype=float)
    out = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def taylor_term_magnitude(x: float, k: int) -> float:
    """|k-th term| of the series: x^(2k) / (2^k k!)."""
    return math.exp(2 * k * math.log(x) - k * math.log(2) - math.lgamma(k + 1)) if x > 0 else float(k == 0)


def _poly(x2: np.ndarray, n_terms: int) -> np.ndarray:
    # Horner over t = -x^2/2: sum_{k<n} t^k / k!
    t = -0.5 * x2
    acc = np.full_like(t, 1.0 / math.factorial(n_terms - 1))
    for k in range(n_terms - 2, -1, -1):
        acc = acc * t + 1.0 / math.factorial(k)
    return acc


def gaussian_kernel_poly(distance, sigma: float, n_terms: int):
    """Truncated series keeping the terms k = 0 .. n_terms - 1.

    Truncation error is bounded by the first dropped term,
    ``taylor_term_magnitude(x, n_terms)`` (alternating series).
    """
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    if n_terms < 1:
        raise DomainError("n_terms must be >= 1")
    x = np.abs(np.asarray(distance, dtype=float)) / sigma
    if np.any(x > POLY_RANGE * (1 + 1e-12)):
        raise KernelRangeError(f"|d/sigma| = {float(np.max(x)):.4g} exceeds {POLY_RANGE}")
    out = _poly(x * x, n_terms)
    return float(out) if out.ndim == 0 else out


def poly_kernel_clamped(distance: np.ndarray, sigma: float, n_terms: int) -> np.ndarray:
    """Polynomial kernel with weight 0 outside the 3-sigma range."""
    x = np.abs(distance) / sigma
    inside = x <= POLY_RANGE
    out = np.zeros_like(x)
    out[inside] = _poly(x[inside] ** 2, n_terms)
    return out


def required_terms(epsilon: float, x_max: float) -> int:
    """Smallest k whose series term x_max^(2k) / (2^k k!) drops below epsilon."""
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    if x_max < 0:
        raise DomainError("x_max must be >= 0")
    term, k = 1.0, 0
    half_x2 = 0.5 * x_max * x_max
    while term >= epsilon:
        k += 1
        term *= half_x2 / k
    return k


def stirling_terms(epsilon: float, x_max: float) -> int:
    """Same threshold using Stirling's log k! ~ 0.5 log(2 pi k) + k (log k - 1).

    Only a sanity bound for :func:`required_terms`; the two agree for the
    usual (eps, 3) inputs.
    """
    k = 1
    log_eps = math.log(epsilon)
    while True:
        log_fact = 0.5 * math.log(2 * math.pi * k) + k * (math.log(k) - 1)
        if 2 * k * math.log(x_max) - k * math.log(2) - log_fact < log_eps:
            return k
        k += 1


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    return cdist(coords, coords)


def _inverse_density(kernel_matrix: np.ndarray) -> np.ndarray:
    inv = 1.0 / kernel_matrix.sum(axis=1)
    return inv * (len(inv) / inv.sum())


def sampling_weights(positions: Sequence[Position], sigma_alpha: float) -> np.ndarray:
    """Inverse local-density weights, normalised to sum to len(positions)."""
    if not positions:
        raise DomainError("positions must be non-empty")
    coords = np.array([[p.x, p.y, p.z] for p in positions], dtype=float)
    return _inverse_density(gaussian_kernel_exact(pairwise_distances(coords), sigma_alpha))
