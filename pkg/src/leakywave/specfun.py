"""Special functions on complex arguments.

The dispersion branch ``alpha_star`` is written out as the literal two-factor
product so that its behaviour off the real axis follows from the principal
square root alone. Hankel functions and erf are delegated to scipy.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import AccuracyLoss, BranchCutHit, DomainError

CUT_RTOL = 1e-12


@dataclass(frozen=True)
class BranchedValue:
    value: complex
    branch_ok: bool


def _near_cut(xi, k):
    xi = np.asarray(xi, dtype=complex)
    tol = CUT_RTOL * np.max(np.abs(k))
    right = (np.abs(xi.real - k) <= tol) & (xi.imag > tol)
    left = (np.abs(xi.real + k) <= tol) & (xi.imag < -tol)
    return right | left


def alpha_star(xi, k, check=True):
    """Branch ``-sqrt(i(xi-k)) * sqrt(-i(xi+k))`` with vertical cuts at +-k.

    ``k`` may be an array broadcastable against ``xi`` (local wavenumbers).
    """
    xi = np.asarray(xi, dtype=complex)
    if check and np.any(_near_cut(xi, k)):
        raise BranchCutHit("xi lies on a branch cut of alpha_star")
    out = -np.sqrt(1j * (xi - k)) * np.sqrt(-1j * (xi + k))
    return out if out.ndim else complex(out)


def alpha_star_checked(xi, k):
    """Scalar variant that reports cut proximity instead of raising."""
    ok = not bool(_near_cut(xi, k))
    return BranchedValue(alpha_star(xi, k, check=False), ok)


def hankel_outgoing(z, tol=1e-12):
    """First-kind Hankel functions (H0, H1) at complex ``z``."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("Hankel functions are singular at z = 0")
    if np.any(z.imag < -tol * np.maximum(1.0, np.abs(z))):
        warnings.warn("Hankel evaluation in the exponentially growing half-plane",
                      AccuracyLoss, stacklevel=2)
    h0 = special.hankel1(0, z)
    h1 = special.hankel1(1, z)
    if h0.ndim == 0:
        return complex(h0), complex(h1)
    return h0, h1


def complex_distance(x1, x2, y2, tol=1e-14):
    """Principal ``sqrt(x1**2 + (y2 - x2)**2)`` for real target, complex source.

    The radicand belongs to the closed upper half-plane, so on the negative
    axis itself the value from above (i sqrt|rad|) is returned. Radicands at
    the origin or just below the cut are refused.
    """
    x1 = np.asarray(x1, dtype=float)
    rad = x1 ** 2 + (np.asarray(y2, dtype=complex) - np.asarray(x2)) ** 2
    scale = np.maximum(1.0, np.abs(rad))
    below = (rad.real < 0) & (rad.imag < 0) & (-rad.imag <= tol * scale)
    if np.any(below | (np.abs(rad) <= tol)):
        raise BranchCutHit("distance radicand at or just below the negative real axis")
    r = np.sqrt(np.where(rad.imag == 0, rad.real + 0j, rad))
    return r if r.ndim else complex(r)


def erf_real(t):
    """Error function for real arguments."""
    if np.ndim(t) == 0:
        return math.erf(float(t))
    return special.erf(np.asarray(t, dtype=float))
