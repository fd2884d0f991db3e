"""Dense, exact reference computations for desk-scale problems.

Everything here forms the n x n covariance explicitly and is capped at
ORACLE_CAP observations; the scalable path never needs these quantities.
Used for verification, likelihood-gain reporting and Fisher information.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.optimize

from .errors import InvalidParameterError, OptimizerFailureError, TooLargeError
from .model import ProjectionBox, build_design_matrix, mean_vector
from .spectral import covariance_from_density, qm_density, qm_density_grad

ORACLE_CAP = 4096


def _check_cap(n_obs, cap=ORACLE_CAP):
    if n_obs > cap:
        raise TooLargeError(f"{n_obs} observations exceed the dense cap {cap}")


def _lag_indices(model):
    r, c = model.grid.obs_rows_cols()
    m1, m2 = model.embed.dims
    dr = (r[:, None] - r[None, :]) % m1
    dc = (c[:, None] - c[None, :]) % m2
    return dr.astype(np.int32), dc.astype(np.int32)


def assemble_dense_cov(model, cap=ORACLE_CAP):
    """K = K0 + sum_i W_i K_i W_i from the lag-domain covariance tables."""
    _check_cap(model.grid.n_obs, cap)
    dr, dc = _lag_indices(model)
    table0 = covariance_from_density(qm_density(model.theta0, model.embed.dims))
    K = table0[dr, dc]
    if model.q:
        weights = model.partition.segment_weights(model.grid)
        for i in range(1, model.q + 1):
            pos = np.nonzero(weights[i - 1])[0]
            if len(pos) == 0:
                continue
            ti = covariance_from_density(qm_density(model.theta[i - 1], model.embed.dims))
            sub = np.ix_(pos, pos)
            K[sub] += ti[dr[sub], dc[sub]]
    return K


def assemble_dense_dcov(model, pid, cap=ORACLE_CAP):
    """dK/dtheta for one free parameter, natural scale."""
    _check_cap(model.grid.n_obs, cap)
    name = "sigma2" if pid.name == "phi" else pid.name
    grads = qm_density_grad(model.params_of(pid.process), model.embed.dims)
    gfield = dict(zip(("sigma2", "alpha", "nu", "tau"), grads))[name]
    table = covariance_from_density(gfield)
    dr, dc = _lag_indices(model)
    n = model.grid.n_obs
    if pid.process == 0:
        return table[dr, dc]
    out = np.zeros((n, n))
    pos = np.nonzero(model.partition.segment_weights(model.grid)[pid.process - 1])[0]
    sub = np.ix_(pos, pos)
    out[sub] = table[dr[sub], dc[sub]]
    return out


@dataclass
class DenseProblem:
    """Assembled covariance with a cached Cholesky factor."""

    model: object
    K: np.ndarray
    chol: tuple
    X: np.ndarray | None
    Y: np.ndarray | None

    @staticmethod
    def build(model, data=None, cap=ORACLE_CAP):
        K = assemble_dense_cov(model, cap)
        try:
            chol = sla.cho_factor(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InvalidParameterError(f"covariance is not positive definite: {exc}")
        X = Y = None
        if data is not None:
            Y = data.y_obs
            if model.beta is not None or data.covariates:
                X = build_design_matrix(model, data)
        return DenseProblem(model, K, chol, X, Y)

    def solve(self, b):
        return sla.cho_solve(self.chol, b)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol[0]))))

    def inv(self):
        return self.solve(np.eye(self.K.shape[0]))


def exact_loglik(model, data, cap=ORACLE_CAP):
    """2 log L of the Gaussian model (the doubled convention used for gains)."""
    prob = DenseProblem.build(model, data, cap)
    y0 = data.y_obs - mean_vector(model, data)
    n = len(y0)
    quad = float(y0 @ prob.solve(y0))
    return -n * np.log(2.0 * np.pi) - prob.logdet() - quad


def exact_score(model, y0, pids=None, scale="transformed", cap=ORACLE_CAP):
    """Exact score 0.5*y0'K^-1 K_a K^-1 y0 - 0.5*tr(K^-1 K_a) per parameter."""
    prob = DenseProblem.build(model, cap=cap)
    if pids is None:
        pids = model.free_params()
    v = prob.solve(y0)
    Kinv = prob.inv()
    out = np.empty(len(pids))
    for k, pid in enumerate(pids):
        Ka = assemble_dense_dcov(model, pid, cap)
        s = 0.5 * float(v @ (Ka @ v)) - 0.5 * float(np.sum(Kinv * Ka))
        if scale == "transformed":
            s *= model.chain_factor(pid)
        out[k] = s
    return out


def exact_score_sigma0(model, y0, scale="transformed", cap=ORACLE_CAP):
    """Score w.r.t. sigma0^2 under the scale link (dK/dlog sigma0^2 = K)."""
    prob = DenseProblem.build(model, cap=cap)
    v = prob.solve(y0)
    s_log = 0.5 * (float(y0 @ v) - len(y0))
    if scale == "transformed":
        return s_log
    return s_log / model.theta0.sigma2


def fisher_information_dense(K, K_list, N=None):
    """Information matrix of the stochastic-score estimator, dense inputs.

    B_ij = (1/2 + 1/(2N)) tr(K^-1 K_i K^-1 K_j)
           - 1/(2N) * sum_a diag(K_i K^-1)_a diag(K_j K^-1)_a,
    with N=None taken as the exact-score limit (the 1/(2N) terms dropped),
    which is the usual 0.5 tr(K^-1 K_i K^-1 K_j).
    """
    chol = sla.cho_factor(K, lower=True)
    A = [sla.cho_solve(chol, Ka) for Ka in K_list]  # A_i = K^-1 K_i
    p = len(A)
    T = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            T[i, j] = T[j, i] = float(np.sum(A[i] * A[j].T))
    if N is None:
        return 0.5 * T
    diags = np.array([np.diag(Ai) for Ai in A])
    D = diags @ diags.T
    return (0.5 + 0.5 / N) * T - (0.5 / N) * D


def fisher_information(model, N=None, pids=None, scale="transformed", cap=ORACLE_CAP):
    if pids is None:
        pids = model.free_params()
    K = assemble_dense_cov(model, cap)
    K_list = [assemble_dense_dcov(model, pid, cap) for pid in pids]
    if scale == "transformed":
        K_list = [Ka * model.chain_factor(pid) for Ka, pid in zip(K_list, pids)]
    return fisher_information_dense(K, K_list, N)


def likelihood_gain(model_hat, model_true, data, cap=ORACLE_CAP):
    """2logL(fitted) - 2logL(generating parameters); positive favors the fit."""
    return exact_loglik(model_hat, data, cap) - exact_loglik(model_true, data, cap)


def _profile_beta_dense(prob, X, Y):
    KX = prob.solve(X)
    A = X.T @ KX
    b = KX.T @ Y
    return np.linalg.solve(A, b)


def dense_mle(data, model0, box=None, fit_mean=True, maxiter=200, cap=ORACLE_CAP,
              gtol=1e-9, ftol=1e-12):
    """Box-constrained quasi-Newton MLE on the exact dense likelihood.

    Deliberately a generic optimizer (scipy L-BFGS-B with analytic score),
    independent of the sign-preserving solver, so the two can cross-check.
    Optimizes log sigma0^2 jointly with the transformed free parameters;
    beta is profiled exactly inside each evaluation.
    """
    _check_cap(data.grid.n_obs, cap)
    box = box or ProjectionBox()
    model0 = model0.project(box)
    pids = model0.free_params()
    link = model0.sigma0_link  # adds log sigma0^2 as one extra coordinate
    use_mean = fit_mean and (model0.beta is not None or data.covariates or model0.partition.q > 0)
    X = build_design_matrix(model0, data) if use_mean else None
    Y = data.y_obs
    n = len(Y)

    def unpack(x):
        if link:
            return model0.with_free_values(x[1:]).with_sigma0(float(np.exp(x[0])))
        return model0.with_free_values(x)

    def negloglik_and_grad(x):
        m = unpack(x)
        prob = DenseProblem.build(m, cap=cap)
        if use_mean:
            beta = _profile_beta_dense(prob, X, Y)
            y0 = Y - X @ beta
        else:
            y0 = Y
        v = prob.solve(y0)
        ll = -0.5 * (n * np.log(2.0 * np.pi) + prob.logdet() + float(y0 @ v))
        Kinv = prob.inv()
        g = np.empty(int(link) + len(pids))
        if link:
            g[0] = 0.5 * (float(y0 @ v) - n)  # dK/dlog sigma0^2 = K
        for k, pid in enumerate(pids):
            Ka = assemble_dense_dcov(m, pid, cap)
            s = 0.5 * float(v @ (Ka @ v)) - 0.5 * float(np.sum(Kinv * Ka))
            g[int(link) + k] = s * m.chain_factor(pid)
        return -ll, -g

    x0 = model0.free_values_transformed()
    bounds = [box.bounds_for(p.name) for p in pids]
    if link:
        x0 = np.concatenate([[np.log(model0.theta0.sigma2)], x0])
        bounds = [box.bounds_for("sigma2")] + bounds
    res = scipy.optimize.minimize(negloglik_and_grad, x0, jac=True,
                                  method="L-BFGS-B", bounds=bounds,
                                  options={"maxiter": maxiter, "gtol": gtol,
                                           "ftol": ftol})
    if not np.all(np.isfinite(res.x)):
        raise OptimizerFailureError(f"dense MLE produced non-finite parameters: {res.message}")
    m = unpack(res.x)
    if use_mean:
        prob = DenseProblem.build(m, cap=cap)
        beta = _profile_beta_dense(prob, X, Y)
        m = replace(m, beta=beta.reshape(m.partition.q, -1))
    return m, res
