"""Smooth compactly supported weight for family averages.

The canonical window rises smoothly from 0 on [1/2, 1], sits at 1 on [1, 2],
and falls back to 0 on [2, 5/2].  Both shoulders use the standard smooth ramp

    psi(t) = g(t) / (g(t) + g(1 - t)),   g(t) = exp(-1/t) for t > 0 else 0,

which satisfies psi(t) + psi(1 - t) = 1, so each shoulder integrates to
exactly half its width and the Mellin transform at 1 (the plain integral)
is exactly 3/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

SUPPORT = (0.5, 2.5)
PLATEAU = (1.0, 2.0)

# largest safe argument for exp() inside the ramp quotient
_EXP_CLIP = 700.0


def _ramp(t: np.ndarray) -> np.ndarray:
    """psi(t) elementwise, exact 0/1 outside (0, 1), overflow-safe inside."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape)
    out[t >= 1.0] = 1.0
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    # psi = 1 / (1 + exp(1/t - 1/(1-t))), argument clipped against overflow
    arg = np.clip(1.0 / ti - 1.0 / (1.0 - ti), -_EXP_CLIP, _EXP_CLIP)
    out[inside] = 1.0 / (1.0 + np.exp(arg))
    return out


def phi_array(x: np.ndarray) -> np.ndarray:
    """The window Phi evaluated elementwise; exact 0 outside [1/2, 5/2]."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    plateau = (x >= PLATEAU[0]) & (x <= PLATEAU[1])
    out[plateau] = 1.0
    up = (x > SUPPORT[0]) & (x < PLATEAU[0])
    out[up] = _ramp(2.0 * x[up] - 1.0)
    down = (x > PLATEAU[1]) & (x < SUPPORT[1])
    out[down] = _ramp(5.0 - 2.0 * x[down])
    return out


@dataclass(frozen=True)
class SmoothingWeight:
    """Canonical window with its quadrature-certified Mellin value at 1."""

    ramp: str
    support: tuple[float, float]
    plateau: tuple[float, float]
    mellin_at_1: float
    quadrature_tol: float

    def __call__(self, x):
        scalar = np.isscalar(x)
        v = phi_array(np.atleast_1d(np.asarray(x, dtype=np.float64)))
        return float(v[0]) if scalar else v

    def mellin(self, s: float) -> float:
        """Mellin transform integral Phi(x) x^(s-1) dx over the support."""
        val, est = quad(lambda x: float(phi_array(np.array([x]))[0]) * x ** (s - 1.0),
                        SUPPORT[0], SUPPORT[1],
                        points=[PLATEAU[0], PLATEAU[1]],
                        epsabs=self.quadrature_tol / 4, epsrel=0, limit=200)
        return val


def smoothing_weight(kind: str = "canonical", tol: float = 1e-9) -> SmoothingWeight:
    """The canonical smooth window; tol controls the Mellin quadrature."""
    if kind != "canonical":
        raise DomainError(f"unknown smoothing kind {kind!r}")
    if not 0.0 < tol <= 1e-6:
        raise DomainError("smoothing tol must lie in (0, 1e-6]")
    w = SmoothingWeight("exp(-1/t) quotient ramp", SUPPORT, PLATEAU, 0.0, tol)
    object.__setattr__(w, "mellin_at_1", w.mellin(1.0))
    return w
