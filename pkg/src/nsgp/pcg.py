"""Preconditioned conjugate gradient for K(theta) x = y."""

from dataclasses import dataclass

import numpy as np

from .errors import BreakdownError


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def pcg_solve(matvec, y, precond=None, tol=1e-6, max_iter=1000, x0=None,
              callback=None):
    """Solve A x = y for symmetric positive definite A.

    Converged means ||A x - y|| <= tol * ||y||.  `precond` applies an SPD
    approximation of A^{-1}.  `x0` warm-starts the iteration (an exact start
    returns in zero iterations).  `callback(k, x)` runs after each update,
    which the preconditioner benchmark uses to watch the error directly.

    Raises BreakdownError when a curvature or preconditioner inner product
    turns non-positive, which signals a non-SPD operator (invalid
    parameters) rather than ordinary non-convergence.
    """
    y = np.asarray(y, dtype=float)
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        return SolveReport(np.zeros_like(y), 0, 0.0, True)

    x = np.zeros_like(y) if x0 is None else np.array(x0, dtype=float)
    r = y - matvec(x) if x0 is not None else y.copy()
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol * ynorm:
        return SolveReport(x, 0, rnorm, True)

    z = r if precond is None else precond(r)
    d = z.copy()
    rz = float(r @ z)
    if rz <= 0.0:
        raise BreakdownError(f"preconditioned inner product r'Mr = {rz:g} <= 0")

    best_x, best_rnorm = x.copy(), rnorm
    for k in range(1, max_iter + 1):
        Ad = matvec(d)
        dAd = float(d @ Ad)
        if dAd <= 0.0:
            raise BreakdownError(f"curvature d'Ad = {dAd:g} <= 0 at iteration {k}")
        step = rz / dAd
        x = x + step * d
        r = r - step * Ad
        rnorm = float(np.linalg.norm(r))
        if callback is not None:
            callback(k, x)
        if rnorm < best_rnorm:
            best_x, best_rnorm = x.copy(), rnorm
        if rnorm <= tol * ynorm:
            return SolveReport(x, k, rnorm, True)
        z = r if precond is None else precond(r)
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            raise BreakdownError(f"preconditioned inner product {rz_new:g} <= 0")
        d = z + (rz_new / rz) * d
        rz = rz_new

    return SolveReport(best_x, max_iter, best_rnorm, False)
