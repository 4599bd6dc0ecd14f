"""Bessel functions split into logarithmic and regular parts.

For integer n,

    Y_n(z) = (2/pi) log(z/2) J_n(z) + P_n(z) + R_n(z)

where P_n is the finite sum of negative powers and R_n is an entire series.
The local-wavenumber kernels need R_n on its own near z = 0, where forming
it as a difference would cancel catastrophically.
"""

import math

import numpy as np
from scipy import special

SERIES_LIMIT = 2.0
_TERMS = 40


def _digamma_int(m):
    return -np.euler_gamma + sum(1.0 / j for j in range(1, m))


_PSI = np.array([_digamma_int(m) for m in range(1, _TERMS + 4)])  # psi(m) at index m-1


def negative_part(n, z):
    """P_n(z) = -(1/pi) sum_{j<n} (n-j-1)!/j! (z/2)^(2j-n)."""
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    for j in range(n):
        out += math.factorial(n - j - 1) / math.factorial(j) * (0.5 * z) ** (2 * j - n)
    return -out / math.pi


def _series(n, z):
    h = 0.25 * z * z
    J = np.zeros_like(z)
    R = np.zeros_like(z)
    term = (0.5 * z) ** n / math.factorial(n)
    for j in range(_TERMS):
        J += term
        R += (_PSI[j] + _PSI[n + j]) * term
        term = term * (-h) / ((j + 1) * (n + j + 1))
    return J, -R / math.pi


def split(n, z):
    """(J_n(z), R_n(z)) for complex z with Re z > 0 or small |z|."""
    z = np.asarray(z, dtype=complex)
    J = np.empty_like(z)
    R = np.empty_like(z)
    small = np.abs(z) < SERIES_LIMIT
    if np.any(small):
        J[small], R[small] = _series(n, z[small])
    big = ~small
    if np.any(big):
        zb = z[big]
        jb = special.jv(n, zb)
        yb = special.yv(n, zb)
        J[big] = jb
        R[big] = yb - (2.0 / math.pi) * np.log(0.5 * zb) * jb - negative_part(n, zb)
    return J, R
