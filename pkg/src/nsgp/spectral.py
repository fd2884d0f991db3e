"""Quasi-Matern spectral densities on lattice Fourier frequencies.

The density for one stationary process on an (m1, m2) lattice is

    f(g) = sigma2 * [ c * (1 - tau) * g(g) + tau ],
    g(g) = (alpha^2 + sin^2(g1/2) + sin^2(g2/2)) ** (-1 - nu),

evaluated at frequencies g = (2*pi*j1/m1, 2*pi*j2/m2).  The normalizing
constant is c = m1*m2 / sum_g g, so that the lag-zero covariance obtained by
the inverse discrete transform equals sigma2 exactly and tau is the nugget
proportion of the variance.  All parameter derivatives differentiate through
c, which depends on alpha and nu.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatchError, DimensionOverflowError, InvalidParameterError

# Lattices above this size are refused; per-table memory is 8 bytes/point.
MAX_LATTICE_POINTS = 1 << 24

GRAD_ORDER = ("sigma2", "alpha", "nu", "tau")


@dataclass(frozen=True)
class QuasiMaternParams:
    """Scale, inverse range, smoothness and nugget fraction of one process."""

    sigma2: float
    alpha: float
    nu: float
    tau: float

    def __post_init__(self):
        for name in ("sigma2", "alpha", "nu"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise InvalidParameterError(f"{name} must be positive and finite, got {v}")
        if not np.isfinite(self.tau) or not 0.0 < self.tau < 1.0:
            raise InvalidParameterError(f"tau must lie strictly in (0, 1), got {self.tau}")
        # transformed representation (log, log, log, logit) must be finite
        t = np.array([np.log(self.sigma2), np.log(self.alpha), np.log(self.nu),
                      np.log(self.tau) - np.log1p(-self.tau)])
        if not np.all(np.isfinite(t)):
            raise InvalidParameterError(f"log/logit transform of {self} is not finite")

    def astuple(self):
        return (self.sigma2, self.alpha, self.nu, self.tau)


@dataclass(frozen=True)
class SpectralField:
    """Real function tabulated on the (m1, m2) lattice Fourier frequencies.

    `values` has shape (m1, m2), entry (j1, j2) belonging to the frequency
    (2*pi*j1/m1, 2*pi*j2/m2).  Densities are non-negative; derivative fields
    may be signed.  All constructors here produce even functions of the
    frequency, so values[j] == values[-j mod m] holds exactly.
    """

    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != tuple(self.dims):
            raise DimensionMismatchError(
                f"values shape {self.values.shape} does not match dims {self.dims}")

    @property
    def half(self):
        """Columns 0..m2//2 of `values`, as consumed by real transforms."""
        return self.values[:, : self.dims[1] // 2 + 1]


def _check_dims(dims):
    m1, m2 = int(dims[0]), int(dims[1])
    if m1 < 1 or m2 < 1:
        raise InvalidParameterError(f"lattice dims must be positive, got {dims}")
    if m1 * m2 > MAX_LATTICE_POINTS:
        raise DimensionOverflowError(
            f"lattice {m1}x{m2} exceeds the {MAX_LATTICE_POINTS}-point budget")
    return m1, m2


@lru_cache(maxsize=64)
def _sin2_sum(dims):
    """sin^2(g1/2) + sin^2(g2/2) over the lattice, exactly symmetric.

    Built from min(j, m-j) so the required conjugate symmetry holds to the
    last bit rather than up to rounding of pi - x.
    """
    m1, m2 = dims

    def axis(m):
        j = np.arange(m)
        j = np.minimum(j, m - j)
        return np.sin(np.pi * j / m) ** 2

    return axis(m1)[:, None] + axis(m2)[None, :]


def qm_density(params, dims):
    """Quasi-Matern spectral density table on the (m1, m2) lattice."""
    m1, m2 = _check_dims(dims)
    s2, alpha, nu, tau = params.astuple()
    s = _sin2_sum((m1, m2))
    # log-space evaluation keeps g finite for small alpha / large nu
    g = np.exp(-(1.0 + nu) * np.log(alpha * alpha + s))
    c = (m1 * m2) / g.sum()
    values = s2 * (c * (1.0 - tau) * g + tau)
    return SpectralField((m1, m2), values)


def qm_density_grad(params, dims):
    """Derivatives of `qm_density` w.r.t. (sigma2, alpha, nu, tau).

    Returns four signed SpectralFields in GRAD_ORDER.  The normalizing
    constant c depends on alpha and nu and is differentiated through.
    """
    m1, m2 = _check_dims(dims)
    s2, alpha, nu, tau = params.astuple()
    s = _sin2_sum((m1, m2))
    log_base = np.log(alpha * alpha + s)
    g = np.exp(-(1.0 + nu) * log_base)
    gsum = g.sum()
    c = (m1 * m2) / gsum

    dg_dalpha = -2.0 * alpha * (1.0 + nu) * np.exp(-(2.0 + nu) * log_base)
    dg_dnu = -log_base * g
    dc_dalpha = -c * dg_dalpha.sum() / gsum
    dc_dnu = -c * dg_dnu.sum() / gsum

    cg = c * g
    d_sigma2 = (1.0 - tau) * cg + tau
    d_alpha = s2 * (1.0 - tau) * (dc_dalpha * g + c * dg_dalpha)
    d_nu = s2 * (1.0 - tau) * (dc_dnu * g + c * dg_dnu)
    d_tau = s2 * (1.0 - cg)

    dims = (m1, m2)
    return (SpectralField(dims, d_sigma2), SpectralField(dims, d_alpha),
            SpectralField(dims, d_nu), SpectralField(dims, d_tau))


def combined_density(f0, fi):
    """Elementwise sum of two spectral fields on the same lattice."""
    if f0.dims != fi.dims:
        raise DimensionMismatchError(f"cannot combine {f0.dims} with {fi.dims}")
    return SpectralField(f0.dims, f0.values + fi.values)


def covariance_from_density(f):
    """Lag-domain covariance table C(h) = (1/(m1*m2)) sum_g f(g) cos(g.h).

    The output is an (m1, m2) real array indexed by lattice lags; C(h) equals
    C(-h mod m) and C(0, 0) is the mean of the density values.
    """
    table = np.fft.irfft2(f.half.astype(np.complex128), s=f.dims)
    return table
