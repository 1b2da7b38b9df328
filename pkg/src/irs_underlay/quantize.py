"""Mapping continuous reflection phases onto an F-level grid."""
from __future__ import annotations

import numpy as np

from .sysmodel import ReflectVector


def quantize_phases(ups: ReflectVector, F: int, circular: bool = True) -> ReflectVector:
    """Nearest grid level; ties go to the lower index.

    With ``circular=False`` the plain |theta - level| distance on [0, 2pi) is
    used, which never wraps around to level 0 from above.
    """
    if F < 2:
        raise ValueError("need at least two levels")
    theta = np.asarray(ups.phases if isinstance(ups, ReflectVector) else ups, dtype=float)
    theta = np.mod(theta, 2 * np.pi)
    levels = 2 * np.pi * np.arange(F) / F
    d = np.abs(theta[:, None] - levels[None, :])
    if circular:
        d = np.minimum(d, 2 * np.pi - d)
    # argmin returns the first minimizer, i.e. the lower index on ties; round
    # off so that exact midpoints are not decided by floating-point noise
    idx = np.argmin(np.round(d, 12), axis=1)
    return ReflectVector.from_phases(levels[idx])


def max_quantization_error(F: int) -> float:
    return np.pi / F
