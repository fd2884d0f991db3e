"""Stochastic score equations with Rademacher probes.

The score of the Gaussian log likelihood w.r.t. one covariance parameter is
estimated by

    S~(a) = 0.5 * y0' K^-1 K_a K^-1 y0  -  (1/2N) sum_j U_j' K^-1 K_a U_j,

with U_j i.i.d. +-1 probe vectors.  One PCG solve for K^-1 y0 and one per
probe are shared across all parameters; the K_a products use the
differentiated circulant tables.  Scores are reported on the transformed
(log / logit) scale used by the solver.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, PcgFailureError, RankDeficientDesignError
from .model import build_design_matrix
from .pcg import pcg_solve

PROBE_STREAM = 1  # spawn key of the probe sub-stream under the master seed


@dataclass
class ProbeSet:
    """Fixed +-1 probe vectors; drawn once per fit and then frozen."""

    n_obs: int
    vectors: np.ndarray  # shape (N, n_obs), entries in {-1.0, +1.0}
    seed: int | None

    @property
    def count(self):
        return self.vectors.shape[0]


def make_probes(n_obs, n_probes, seed):
    """Independent symmetric-sign probes, deterministic given `seed`."""
    if n_probes < 1:
        raise InvalidParameterError(f"need at least one probe, got {n_probes}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(PROBE_STREAM,)))
    vecs = rng.integers(0, 2, size=(n_probes, n_obs)).astype(float) * 2.0 - 1.0
    return ProbeSet(n_obs, vecs, seed)


def hadamard_probes(n_obs):
    """Complete orthogonal sign basis (power-of-two sizes).

    With all n columns as probes the trace term is exact: sum_j u_j u_j' = n I.
    """
    if n_obs & (n_obs - 1):
        raise InvalidParameterError(f"Hadamard basis needs a power of two, got {n_obs}")
    H = scipy.linalg.hadamard(n_obs).astype(float)
    return ProbeSet(n_obs, H.T.copy(), None)


@dataclass
class SolverConfig:
    """PCG settings used for the likelihood linear systems."""

    tol: float = 1e-6
    max_iter: int = 1000
    precond: str = "g2"

    def precond_for(self, op):
        kind = self.precond
        if op.model.q == 0 and kind in ("g2", "g3", "g4"):
            kind = "g1"  # no local processes to build a blockwise symbol from
        return op.preconditioner(kind)


class WarmStarts:
    """Previous PCG solutions keyed by system name, reused across iterations."""

    def __init__(self):
        self._sols = {}

    def get(self, key):
        return self._sols.get(key)

    def put(self, key, x):
        self._sols[key] = x


def _solve(op, y, solver, warm, key):
    x0 = warm.get(key) if warm is not None else None
    precond = solver.precond_for(op)
    report = pcg_solve(op.cov_matvec, y, precond=precond, tol=solver.tol,
                       max_iter=solver.max_iter, x0=x0)
    if not report.converged:
        raise PcgFailureError(
            f"system {key!r} stalled at relative residual "
            f"{report.residual_norm / max(np.linalg.norm(y), 1e-300):.3e} "
            f"after {report.iterations} iterations")
    if warm is not None:
        warm.put(key, report.x)
    return report


@dataclass
class ScoreEstimate:
    """Per-parameter stochastic score on the transformed scale."""

    param_ids: list
    values: np.ndarray            # transformed scale
    quad_terms: np.ndarray        # 0.5 y0' K^-1 K_a K^-1 y0, natural scale
    probe_quadratics: np.ndarray  # (n_params, N): U_j' K^-1 K_a U_j, natural
    pcg_iterations: int
    n_solves: int

    @property
    def trace_estimates(self):
        """(1/N) sum_j U_j' K^-1 K_a U_j per parameter (natural scale)."""
        return self.probe_quadratics.mean(axis=1)

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


def stochastic_score(op, y0, probes, solver=None, warm=None):
    """Estimate the score for every free covariance parameter.

    Exactly N+1 PCG solves regardless of how many parameters the model has;
    per-parameter work is one differentiated matvec per solve.
    """
    solver = solver or SolverConfig()
    model = op.model
    pids = model.free_params()

    rep = _solve(op, y0, solver, warm, "y0")
    v = rep.x
    iters = rep.iterations
    w = []
    for j in range(probes.count):
        repj = _solve(op, probes.vectors[j], solver, warm, ("probe", j))
        w.append(repj.x)
        iters += repj.iterations

    n_params = len(pids)
    quad = np.empty(n_params)
    contrib = np.empty((n_params, probes.count))
    values = np.empty(n_params)
    for k, pid in enumerate(pids):
        quad[k] = 0.5 * float(v @ op.param_matvec(pid, v))
        for j in range(probes.count):
            contrib[k, j] = float(w[j] @ op.param_matvec(pid, probes.vectors[j]))
        natural = quad[k] - 0.5 * contrib[k].mean()
        values[k] = natural * model.chain_factor(pid)

    return ScoreEstimate(pids, values, quad, contrib, iters, probes.count + 1)


def profile_sigma0(op, y0, solver=None, warm=None):
    """Closed-form profile of the global scale under K = sigma0^2 Omega.

    (1/n) y0' Omega^-1 y0 costs a single solve; with the current operator it
    equals (sigma0^2 / n) y0' K^-1 y0, so the solve is reusable for scoring.
    """
    solver = solver or SolverConfig()
    rep = _solve(op, y0, solver, warm, "y0")
    sigma0 = op.model.theta0.sigma2
    n = len(y0)
    return float(sigma0 / n * (y0 @ rep.x)), rep


def gls_beta(op, data, solver=None, warm=None):
    """Generalized least squares mean fit via p_mean PCG solves.

    Returns (beta as a (q, 1+n_cov) array, residual vector, total PCG
    iterations).
    """
    solver = solver or SolverConfig()
    model = op.model
    X = build_design_matrix(model, data)
    Y = data.y_obs
    KinvX = np.empty_like(X)
    iters = 0
    for col in range(X.shape[1]):
        rep = _solve(op, X[:, col], solver, warm, ("gls", col))
        KinvX[:, col] = rep.x
        iters += rep.iterations
    A = X.T @ KinvX
    b = KinvX.T @ Y
    try:
        beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientDesignError(f"normal equations are singular: {exc}")
    y0 = Y - X @ beta
    return beta.reshape(model.partition.q, -1), y0, iters


def ols_beta(model, data):
    """Ordinary least squares on the same design (the K = I special case)."""
    X = build_design_matrix(model, data)
    beta, *_ = np.linalg.lstsq(X, data.y_obs, rcond=None)
    return beta.reshape(model.partition.q, -1), data.y_obs - X @ beta
