"""Soft-trimming M-estimator rho(x) = x (1 - (x/theta_r)^2)^2 on |x| <= theta_r."""

from __future__ import annotations

import numpy as np


def soft_trim(x, theta_r):
    """Elementwise; ``theta_r`` may be a scalar or broadcast against ``x``."""
    theta = np.asarray(theta_r, dtype=float)
    if not np.all(theta > 0):
        raise ValueError("theta_r must be > 0")
    x = np.asarray(x, dtype=float)
    u = x / theta
    out = np.where(np.abs(u) <= 1.0, x * (1.0 - u * u) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out
