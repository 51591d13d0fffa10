"""Basis-conversion constants for cubic curve enclosures.

``A_MV`` holds the minimum-volume enclosing basis for cubics on [-1, 1],
row i giving the monomial coefficients [t^3, t^2, t, 1] of basis function i.
The entries are not trusted blindly: the test suite re-checks nonnegativity,
partition of unity, and curve-in-hull containment at 1e-9.

``M_B`` is the cubic Bernstein basis on [0, 1] in the same layout.
"""
from math import comb

import numpy as np

from .errors import SingularConversion

A_MV = np.array([
    [-4.3020386797472715e-01, 4.5677544971738548e-01,
     -2.6981880794379270e-02, 4.1029905172090017e-04],
    [8.3490734681770740e-01, -4.5677544971738554e-01,
     -7.9209309558681384e-01, 4.9958970094827904e-01],
    [-8.3490734681770740e-01, -4.5677544971738554e-01,
     7.9209309558681384e-01, 4.9958970094827904e-01],
    [4.3020386797472715e-01, 4.5677544971738548e-01,
     2.6981880794379270e-02, 4.1029905172090017e-04],
])

M_B = np.array([
    [-1.0, 3.0, -3.0, 1.0],
    [3.0, -6.0, 3.0, 0.0],
    [-3.0, 3.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
])


def _power_shift(alpha: float, beta: float) -> np.ndarray:
    """Matrix expressing powers of ``s = alpha*t + beta`` in powers of t."""
    T = np.zeros((4, 4))
    for k in range(4):
        p = 3 - k
        for j in range(p + 1):
            T[k, 3 - j] = comb(p, j) * alpha ** j * beta ** (p - j)
    return T


def k_bezier(dt: float) -> np.ndarray:
    """Conversion matrix: curve(t) = Q_bezier @ k_bezier(dt) @ [t^3,t^2,t,1]."""
    if dt <= 0:
        raise ValueError("duration must be positive")
    return M_B @ np.diag([dt ** -3, dt ** -2, dt ** -1, 1.0])


def k_minvo(dt: float) -> np.ndarray:
    """Conversion matrix for the tight basis, time axis mapped to [0, dt]."""
    if dt <= 0:
        raise ValueError("duration must be positive")
    return A_MV @ _power_shift(2.0 / dt, -1.0)


def conversion(dt: float) -> np.ndarray:
    """W with Q_tight = Q_bezier @ W; raises if the basis matrix degenerates."""
    km = k_minvo(dt)
    if not np.isfinite(np.linalg.cond(km)) or np.linalg.cond(km) > 1e12:
        raise SingularConversion(f"basis conversion ill-conditioned at dt={dt}")
    return k_bezier(dt) @ np.linalg.inv(km)
