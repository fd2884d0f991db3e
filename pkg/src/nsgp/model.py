"""The assembled non-stationary model and its parameterization.

The field is Y(s) = X(s) beta + Z0(s) + sum_i w_i(s) Z_i(s) where the w_i are
indicator weights of the partition segments, Z0 is a globally stationary
process and each Z_i is stationary within its segment.  The implied
covariance is K = K0 + sum_i W_i K_i W_i, defined on the embedding torus.

Covariance parameters are optimized on a transformed scale: log for sigma2,
alpha, nu and logit for tau.  Under the scale link, local variances are tied
to the global one by sigma2_i = phi_i * sigma0^2 and sigma0^2 is profiled out
in closed form rather than moved by gradient steps.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameterError, RankDeficientDesignError
from .grids import DataField, EmbeddingGeometry, GridGeometry, Partition, embed_dims
from .spectral import QuasiMaternParams

PARAM_NAMES = ("sigma2", "alpha", "nu", "tau")


def logit(x):
    return np.log(x) - np.log1p(-x)


def expit(t):
    return 1.0 / (1.0 + np.exp(-t))


def to_transformed(p):
    """(log sigma2, log alpha, log nu, logit tau) for one parameter set."""
    return np.array([np.log(p.sigma2), np.log(p.alpha), np.log(p.nu), logit(p.tau)])


def from_transformed(t):
    return QuasiMaternParams(float(np.exp(t[0])), float(np.exp(t[1])),
                             float(np.exp(t[2])), float(expit(t[3])))


def natural_jacobian(p):
    """d(natural)/d(transformed) for one parameter set, in PARAM_NAMES order."""
    return np.array([p.sigma2, p.alpha, p.nu, p.tau * (1.0 - p.tau)])


@dataclass(frozen=True)
class ParamId:
    """Addresses one free covariance parameter: process 0 is global."""

    process: int
    name: str  # 'sigma2' | 'phi' | 'alpha' | 'nu' | 'tau'


@dataclass(frozen=True)
class ProjectionBox:
    """Componentwise bounds on the transformed scale.

    Defaults keep the embedded spectrum strictly positive and the dense
    reference computations Cholesky-stable.
    """

    log_sigma2: tuple = (-20.0, 20.0)
    log_phi: tuple = (-10.0, 10.0)
    log_alpha: tuple = (np.log(1e-4), np.log(20.0))
    log_nu: tuple = (np.log(1e-3), np.log(20.0))
    logit_tau: tuple = (logit(1e-4), logit(0.9))

    def bounds_for(self, name):
        return {"sigma2": self.log_sigma2, "phi": self.log_phi,
                "alpha": self.log_alpha, "nu": self.log_nu,
                "tau": self.logit_tau}[name]

    def clamp(self, name, value):
        lo, hi = self.bounds_for(name)
        return min(max(value, lo), hi)


@dataclass(frozen=True)
class NonStatModel:
    """Grid geometry, partition, per-process parameters and mean coefficients.

    `theta` has one entry per partition segment; the empty list is allowed
    and means the model has no local processes (pure Z0).  `beta` has shape
    (q, 1 + n_covariates); it may be None for a zero mean.
    """

    grid: GridGeometry
    embed: EmbeddingGeometry
    partition: Partition
    theta0: QuasiMaternParams
    theta: tuple
    beta: np.ndarray | None = None
    sigma0_link: bool = True

    def __post_init__(self):
        self.partition.validate(self.grid)
        if len(self.theta) not in (0, self.partition.q):
            raise InvalidParameterError(
                f"got {len(self.theta)} local parameter sets for "
                f"{self.partition.q} segments")
        if self.beta is not None and self.beta.shape[0] != self.partition.q:
            raise InvalidParameterError("beta must have one row per segment")

    @property
    def q(self):
        """Number of local processes."""
        return len(self.theta)

    def params_of(self, process):
        return self.theta0 if process == 0 else self.theta[process - 1]

    def phi(self, i):
        return self.theta[i - 1].sigma2 / self.theta0.sigma2

    def free_params(self):
        """Canonical ordering of free covariance parameters.

        With the sigma0 link active the global scale is profiled out and
        local scales appear as phi; otherwise every sigma2 is free.
        """
        ids = []
        if self.sigma0_link:
            ids += [ParamId(0, n) for n in ("alpha", "nu", "tau")]
            for i in range(1, self.q + 1):
                ids += [ParamId(i, n) for n in ("phi", "alpha", "nu", "tau")]
        else:
            for i in range(self.q + 1):
                ids += [ParamId(i, n) for n in PARAM_NAMES]
        return ids

    def free_values_transformed(self):
        """Current free-parameter vector on the transformed scale."""
        out = []
        for pid in self.free_params():
            p = self.params_of(pid.process)
            if pid.name == "phi":
                out.append(np.log(self.phi(pid.process)))
            elif pid.name == "sigma2":
                out.append(np.log(p.sigma2))
            elif pid.name == "alpha":
                out.append(np.log(p.alpha))
            elif pid.name == "nu":
                out.append(np.log(p.nu))
            else:
                out.append(logit(p.tau))
        return np.array(out)

    def with_free_values(self, values):
        """Rebuild the model from a transformed free-parameter vector."""
        theta = [list(to_transformed(self.params_of(i))) for i in range(self.q + 1)]
        sigma0 = self.theta0.sigma2
        for pid, v in zip(self.free_params(), values):
            slot = {"sigma2": 0, "phi": 0, "alpha": 1, "nu": 2, "tau": 3}[pid.name]
            if pid.name == "phi":
                theta[pid.process][slot] = np.log(sigma0) + v
            else:
                theta[pid.process][slot] = v
        new0 = from_transformed(theta[0])
        news = tuple(from_transformed(t) for t in theta[1:])
        return replace(self, theta0=new0, theta=news)

    def with_sigma0(self, new_sigma0):
        """Rescale the global variance, preserving phi_i under the link."""
        ratio = new_sigma0 / self.theta0.sigma2
        new0 = replace(self.theta0, sigma2=new_sigma0)
        if self.sigma0_link:
            news = tuple(replace(p, sigma2=p.sigma2 * ratio) for p in self.theta)
        else:
            news = self.theta
        return replace(self, theta0=new0, theta=news)

    def chain_factor(self, pid):
        """d(natural)/d(transformed) for one free parameter."""
        p = self.params_of(pid.process)
        if pid.name in ("phi", "sigma2"):
            return p.sigma2  # dK/dlog phi_i == dK/dlog sigma2_i
        if pid.name == "alpha":
            return p.alpha
        if pid.name == "nu":
            return p.nu
        return p.tau * (1.0 - p.tau)

    def project(self, box):
        """Clamp every free parameter (and log sigma0^2) into the box."""
        vals = self.free_values_transformed()
        clamped = np.array([box.clamp(pid.name, v)
                            for pid, v in zip(self.free_params(), vals)])
        m = self.with_free_values(clamped)
        s0 = float(np.exp(box.clamp("sigma2", np.log(m.theta0.sigma2))))
        if s0 != m.theta0.sigma2:
            m = m.with_sigma0(s0)
        return m


def make_model(grid, partition, theta0, theta, beta=None, factor=1.25,
               sigma0_link=True):
    embed = embed_dims(grid.n1, grid.n2, factor)
    return NonStatModel(grid, embed, partition, theta0, tuple(theta),
                        None if beta is None else np.asarray(beta, dtype=float),
                        sigma0_link)


def build_design_matrix(model, data):
    """Mean design: {segment indicator} x {1, each covariate}.

    Z0 carries no mean columns.  Raises when a segment has too few observed
    pixels to identify its coefficients.
    """
    grid = model.grid
    q = model.partition.q
    covs = data.covariates_obs()
    p_seg = 1 + len(covs)
    weights = model.partition.segment_weights(grid)
    for i, w in enumerate(weights):
        if int(w.sum()) <= p_seg:
            raise RankDeficientDesignError(
                f"segment {i + 1} has {int(w.sum())} observed pixels, "
                f"needs more than {p_seg}")
    X = np.zeros((grid.n_obs, q * p_seg))
    for i, w in enumerate(weights):
        X[w, i * p_seg] = 1.0
        for k, cov in enumerate(covs):
            X[w, i * p_seg + 1 + k] = cov[w]
    return X


def mean_vector(model, data):
    """X beta over observed pixels; zeros when the model carries no mean."""
    if model.beta is None:
        return np.zeros(model.grid.n_obs)
    X = build_design_matrix(model, data)
    return X @ model.beta.ravel()
