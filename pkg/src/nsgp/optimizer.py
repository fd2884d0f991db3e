"""Sign-preserving, thresholded gradient solver for the score equations.

The likelihood value is unavailable at scale, so step-size control works on
the score itself: a candidate step is kept only when no moved parameter's
score component changes sign (the iterate has not jumped over its root).
Only components above a threshold move, the global scale is profiled in
closed form each iteration rather than stepped, and every iterate is
projected into a box that keeps the covariance numerically safe.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .circulant import CirculantOperator
from .errors import NoProgressError, OptimizerFailureError
from .grids import Partition
from .model import ProjectionBox, make_model
from .score import SolverConfig, WarmStarts, gls_beta, make_probes, ols_beta, profile_sigma0, stochastic_score
from .spectral import QuasiMaternParams


def project_params(values, names, box):
    """Componentwise clamp of transformed parameter values; idempotent."""
    return np.array([box.clamp(name, v) for name, v in zip(names, values)])


@dataclass
class FitConfig:
    n_probes: int = 5
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    box: ProjectionBox = field(default_factory=ProjectionBox)
    max_outer: int = 200
    rel_move_tol: float = 1e-6
    max_rejections: int = 25
    stop_score: float | None = None  # absolute override of the 2*g0/sqrt(n) rule
    init_alpha: float = 0.5
    init_nu: float = 0.5
    init_tau: float = 0.05
    fit_mean: bool = True
    expansion_factor: float = 1.25

    def __post_init__(self):
        if self.max_outer < 1:
            raise OptimizerFailureError("max_outer must be >= 1")


@dataclass
class IterationRecord:
    """One outer iteration of the solver, for auditing its decisions."""

    index: int
    step: float
    threshold: float
    moved: np.ndarray
    score_before: np.ndarray
    score_candidate: np.ndarray
    accepted: bool
    sigma0: float
    rel_move: float | None


@dataclass
class FitResult:
    model: object
    termination: str  # 'score-small' | 'relative-move-small' | 'max-iter'
    iterations: int
    accepted: int
    rejected: int
    score_norms: list
    records: list
    g0: float
    stop_threshold: float
    initial: dict
    pcg_iterations: int
    n_probes: int
    seed: int


def initial_model(data, partition, config):
    """Shared stationary start: one parameter set for every process.

    The global scale starts at the variance of the OLS residuals (recorded
    in the fit report), shape parameters at mid-box values, every phi at 1.
    """
    base = QuasiMaternParams(1.0, config.init_alpha, config.init_nu, config.init_tau)
    model = make_model(data.grid, partition, base, [base] * partition.q,
                       factor=config.expansion_factor, sigma0_link=True)
    if config.fit_mean:
        beta, y0 = ols_beta(model, data)
        model = replace(model, beta=beta)
    else:
        y0 = data.y_obs
    sigma0 = float(np.var(y0))
    model = model.with_sigma0(sigma0).project(config.box)
    return model, y0


def fit(data, partition, config=None, init_model=None):
    """Run the full estimation loop on one data field.

    Per iteration: move thresholded parameters by step * score, project,
    profile sigma0^2, evaluate the candidate score, and accept only if every
    moved component kept its sign.  Acceptance re-profiles beta and sigma0^2,
    doubles the step and refreshes the threshold; rejection shrinks the step
    by 10.  Stops on a small score, a small relative move, or max_outer.

    `init_model` overrides the shared-stationary starting point (it must use
    the sigma0 link and live on this data's grid).
    """
    config = config or FitConfig()
    if not isinstance(partition, Partition):
        raise OptimizerFailureError("fit requires a Partition")
    n = data.grid.n_obs
    if init_model is None:
        model, y0 = initial_model(data, partition, config)
    else:
        model = init_model.project(config.box)
        if config.fit_mean and model.beta is not None:
            from .model import mean_vector
            y0 = data.y_obs - mean_vector(model, data)
        else:
            y0 = data.y_obs
    initial_record = {
        "sigma2": model.theta0.sigma2, "alpha": config.init_alpha,
        "nu": config.init_nu, "tau": config.init_tau, "phi": 1.0,
        "beta": None if model.beta is None else model.beta.tolist(),
        "custom_start": init_model is not None,
    }

    probes = make_probes(n, config.n_probes, config.seed)
    warm = WarmStarts()
    solver = config.solver
    # profile sigma0^2 at the start as well: the candidate path profiles it,
    # so the reference score must sit at profiled scale for the sign test to
    # be consistent as the step size shrinks
    op = CirculantOperator(model)
    sigma0_hat, rep = profile_sigma0(op, y0, solver, warm)
    pcg_total = rep.iterations
    sigma0_hat = float(np.exp(config.box.clamp("sigma2", np.log(sigma0_hat))))
    warm.put("y0", rep.x * (model.theta0.sigma2 / sigma0_hat))
    model = model.with_sigma0(sigma0_hat)
    initial_record["sigma2_profiled"] = sigma0_hat
    op = CirculantOperator(model)
    score = stochastic_score(op, y0, probes, solver, warm)
    pcg_total += score.pcg_iterations

    g0 = score.max_abs
    stop = config.stop_score if config.stop_score is not None else 2.0 * g0 / np.sqrt(n)
    records = []
    score_norms = [g0]
    accepted = rejected = 0

    def finish(reason, it):
        return FitResult(model, reason, it, accepted, rejected, score_norms,
                         records, g0, stop, initial_record, pcg_total,
                         config.n_probes, config.seed)

    if g0 <= stop:
        return finish("score-small", 0)

    step = 0.5 / g0
    threshold = g0 / 10.0
    consecutive_rejections = 0

    for it in range(1, config.max_outer + 1):
        free = model.free_values_transformed()
        moved = np.abs(score.values) > threshold
        cand_free = free + np.where(moved, step * score.values, 0.0)
        cand = model.with_free_values(cand_free).project(config.box)
        cand_op = CirculantOperator(cand)

        sigma0_hat, rep = profile_sigma0(cand_op, y0, solver, warm)
        pcg_total += rep.iterations
        sigma0_hat = float(np.exp(config.box.clamp("sigma2", np.log(sigma0_hat))))
        ratio = sigma0_hat / cand.theta0.sigma2
        cand = cand.with_sigma0(sigma0_hat)
        cand_op = CirculantOperator(cand)
        # K scales by `ratio`, so the cached y0 solution rescales exactly
        warm.put("y0", rep.x / ratio)

        cand_score = stochastic_score(cand_op, y0, probes, solver, warm)
        pcg_total += cand_score.pcg_iterations

        same_sign = np.sign(cand_score.values[moved]) == np.sign(score.values[moved])
        keep = bool(np.all(same_sign | (cand_score.values[moved] == 0.0)))

        if not keep:
            records.append(IterationRecord(it, step, threshold, moved,
                                           score.values, cand_score.values,
                                           False, cand.theta0.sigma2, None))
            rejected += 1
            consecutive_rejections += 1
            step *= 0.1
            if consecutive_rejections >= config.max_rejections:
                raise NoProgressError(
                    f"{consecutive_rejections} consecutive rejected steps at "
                    f"iteration {it}; final step size {step:.3e}")
            continue

        # accepted: adopt candidate, re-profile beta and sigma0^2, rescore
        prev_state = np.concatenate([[np.log(model.theta0.sigma2)], free])
        prev_score_values = score.values
        model = cand
        op = cand_op
        if config.fit_mean:
            beta, y0, it_gls = gls_beta(op, data, solver, warm)
            pcg_total += it_gls
            model = replace(model, beta=beta)
        sigma0_hat, rep = profile_sigma0(op, y0, solver, warm)
        pcg_total += rep.iterations
        sigma0_hat = float(np.exp(config.box.clamp("sigma2", np.log(sigma0_hat))))
        ratio = sigma0_hat / model.theta0.sigma2
        model = model.with_sigma0(sigma0_hat)
        op = CirculantOperator(model)
        warm.put("y0", rep.x / ratio)
        score = stochastic_score(op, y0, probes, solver, warm)
        pcg_total += score.pcg_iterations

        new_state = np.concatenate([[np.log(model.theta0.sigma2)],
                                    model.free_values_transformed()])
        rel_move = float(np.max(np.abs(new_state - prev_state)
                                / (np.abs(prev_state) + 1e-8)))
        records.append(IterationRecord(it, step, threshold, moved,
                                       prev_score_values, cand_score.values,
                                       True, model.theta0.sigma2, rel_move))
        accepted += 1
        consecutive_rejections = 0
        step *= 2.0
        threshold = score.max_abs / 10.0
        score_norms.append(score.max_abs)

        if not np.all(np.isfinite(score.values)):
            raise OptimizerFailureError(f"non-finite score at iteration {it}")
        if score.max_abs <= stop:
            return finish("score-small", it)
        if rel_move < config.rel_move_tol:
            return finish("relative-move-small", it)

    return finish("max-iter", config.max_outer)
