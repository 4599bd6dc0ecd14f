"""Nystrom discretisation of the complexified interface equations.

With the ansatz u = S[tau] - D[sigma] and G normalised so that
(Laplace + n^2) G = -delta, the transmission conditions read

    sigma - int k_D tau = f_D,      tau + int k_C sigma = f_N,

with f_D = u_i^r - u_i^l and f_N = d1 u_i^r - d1 u_i^l on the interface. The
system matrix is [[I, D], [C, I]] with D = -(k_D w dz) and C = +(k_C w dz).
Channel pairs use product integration of A log|x - y| + B.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, onenormest

from .errors import ConfigError, NearSingular, SeparationTooSmall
from .geometry import gauss_legendre, log_weights

MAGIC = b"LWBIE001"
COND_LIMIT = 1e12
NEAR_PANELS = 2.5   # product integration when the target is this many half-panels away


@dataclass
class BoundaryData:
    f_D: np.ndarray
    f_N: np.ndarray
    disc: object = None
    evaluate: object = None      # callable z -> (f_D(z), f_N(z)) for off-node use
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f_D = np.asarray(self.f_D, dtype=complex)
        self.f_N = np.asarray(self.f_N, dtype=complex)
        if not (np.all(np.isfinite(self.f_D)) and np.all(np.isfinite(self.f_N))):
            raise ConfigError("boundary data must be finite at every node")

    @property
    def stacked(self):
        return np.concatenate([self.f_D, self.f_N])

    def __add__(self, other):
        return BoundaryData(self.f_D + other.f_D, self.f_N + other.f_N, self.disc,
                            None, dict(self.tags))


@dataclass
class Density:
    sigma: np.ndarray
    tau: np.ndarray
    disc: object
    residual: float = 0.0
    cond: float = math.nan

    def __add__(self, other):
        return Density(self.sigma + other.sigma, self.tau + other.tau, self.disc,
                       max(self.residual, other.residual), self.cond)


@dataclass
class SystemMatrix:
    matrix: np.ndarray
    disc: object
    corrected: np.ndarray        # (N, N) pairs integrated with log weights
    cond: float = math.nan

    @property
    def n(self):
        return self.disc.n

    @property
    def D(self):
        return self.matrix[:self.n, self.n:]

    @property
    def C(self):
        return self.matrix[self.n:, :self.n]

    def apply_K(self, sigma, tau):
        """(K [sigma; tau]) split into its two halves."""
        return self.D @ tau, self.C @ sigma


def _panel_geometry(disc):
    a, b = disc.panels[:, 0], disc.panels[:, 1]
    return 0.5 * (a + b), 0.5 * (b - a)


def product_weights(disc, targets, near_mask):
    """Log-kernel weights L[i, j] = int log|x_i - t| l_j(t) dt on real panels.

    Only entries with ``near_mask`` set are computed; others are zero.
    """
    n = disc.nodes_per_panel
    mid, half = _panel_geometry(disc)
    L = np.zeros(near_mask.shape)
    rows, cols = np.nonzero(near_mask)
    if rows.size == 0:
        return L
    pan = disc.panel_of[cols]
    key = np.unique(np.column_stack([rows, pan]), axis=0)
    _, gw = gauss_legendre(n)
    for i, p in key:
        h = half[p]
        s = (targets[i].real - mid[p]) / h
        lw = h * (log_weights(s, n) + math.log(h) * gw)
        sl = slice(p * n, (p + 1) * n)
        L[i, sl] = lw
    return L * near_mask


def _near_mask(disc, targets, local):
    """Local pairs whose source panel is close to the target."""
    mid, half = _panel_geometry(disc)
    p = disc.panel_of
    s = np.abs(targets.real[:, None] - mid[p][None, :]) / half[p][None, :]
    return local & (s <= NEAR_PANELS)


def kernel_blocks(disc, kev, targets=None):
    """Quadrature-weighted kernel blocks (kD w dz, kC w dz) at targets."""
    targets = disc.z if targets is None else np.asarray(targets, dtype=complex)
    A_D, B_D, A_C, B_C, local = kev.split(targets, disc.z)
    wdz = disc.wdz[None, :]
    delta = np.abs(targets[:, None] - disc.z[None, :])
    # coincident pairs are always near, so their log is never used
    live = local & (delta > 0)
    logd = np.where(live, np.log(np.where(live, delta, 1.0)), 0.0)
    near = _near_mask(disc, targets, local)
    L = product_weights(disc, targets, near)
    far = local & ~near
    if np.any(far & (delta < kev.delta_min)):
        raise SeparationTooSmall("uncorrected channel pair below delta_min")
    KD = B_D * wdz + A_D * np.where(near, L, logd * wdz)
    KC = B_C * wdz + A_C * np.where(near, L, logd * wdz)
    return KD, KC, near


def assemble_system(disc, kev):
    """Dense [[I, D], [C, I]] on the panel nodes."""
    n = disc.n
    KD, KC, near = kernel_blocks(disc, kev)
    M = np.eye(2 * n, dtype=complex)
    M[:n, n:] = -KD
    M[n:, :n] = KC
    return SystemMatrix(M, disc, near)


def _factor(M):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu = linalg.lu_factor(M)
    if np.any(lu[0].diagonal() == 0):
        raise NearSingular("matrix is exactly singular")
    return lu


def _condition(lu_piv, M):
    n = M.shape[0]
    lu, piv = lu_piv
    inv = LinearOperator((n, n), dtype=complex,
                         matvec=lambda x: linalg.lu_solve((lu, piv), x),
                         rmatvec=lambda x: linalg.lu_solve((lu, piv), x, trans=2))
    return float(np.linalg.norm(M, 1) * onenormest(inv))


def solve_system(system, data, schur=False, check_cond=True):
    """Dense LU solve with residual and 1-norm condition estimate."""
    n = system.n
    b = data.stacked
    M = system.matrix
    if schur:
        D, C = system.D, system.C
        S = np.eye(n, dtype=complex) - D @ C
        lu = _factor(S)
        sigma = linalg.lu_solve(lu, data.f_D - D @ data.f_N)
        tau = data.f_N - C @ sigma
        x = np.concatenate([sigma, tau])
        cond = _condition(lu, S)
    else:
        lu = _factor(M)
        x = linalg.lu_solve(lu, b)
        cond = _condition(lu, M)
    system.cond = cond
    if check_cond and cond > COND_LIMIT:
        raise NearSingular(f"condition estimate {cond:.3g} exceeds {COND_LIMIT:.0e}")
    scale = max(np.max(np.abs(b)), 1e-300)
    res = float(np.max(np.abs(M @ x - b)) / scale) if np.any(b) else 0.0
    return Density(x[:n], x[n:], system.disc, res, cond)


def extend_density(density, data_at, kev, z):
    """[sigma; tau](z) = [f_D; f_N](z) - K[sigma; tau](z) at points of Gamma_C.

    ``data_at(z)`` returns (f_D, f_N) there. Points coinciding with nodes
    return the nodal values.
    """
    disc = density.disc
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    fD, fN = data_at(z)
    KD, KC, _ = kernel_blocks(disc, kev, z)
    sigma = fD + KD @ density.tau
    tau = fN - KC @ density.sigma
    hit = np.abs(z[:, None] - disc.z[None, :]) < 1e-14 * np.maximum(1.0, np.abs(z))[:, None]
    rows, cols = np.nonzero(hit)
    sigma[rows] = density.sigma[cols]
    tau[rows] = density.tau[cols]
    return sigma, tau


def weighted_norm(values, z, alpha, beta):
    """sup of exp(beta |Im z|) (1 + |z|)^alpha |f| over the nodes."""
    z = np.asarray(z, dtype=complex)
    return float(np.max(np.exp(beta * np.abs(z.imag)) * (1 + np.abs(z)) ** alpha
                        * np.abs(values)))


def dump_matrix(path, matrix):
    """Raw dump: 8-byte magic then row-major little-endian complex128."""
    m = np.ascontiguousarray(matrix, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(m.tobytes(order="C"))


def load_matrix(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigError("not a matrix dump")
        flat = np.frombuffer(fh.read(), dtype="<c16")
    n = math.isqrt(flat.size)
    if n * n != flat.size:
        raise ConfigError("matrix dump is not square")
    return flat.reshape(n, n).astype(complex)
