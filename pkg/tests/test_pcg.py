import numpy as np
import pytest
import scipy.linalg as sla

from nsgp.circulant import CirculantOperator
from nsgp.errors import BreakdownError
from nsgp.grids import GridGeometry, compact_partition, single_segment_partition
from nsgp.model import make_model
from nsgp.pcg import pcg_solve
from nsgp.spectral import QuasiMaternParams

from conftest import brute_force_cov, rand_params


def small_system(seed=0, n1=6, n2=6):
    rng = np.random.default_rng(seed)
    grid = GridGeometry.full(n1, n2)
    labels = np.ones((n1, n2), dtype=np.int64)
    labels[:, n2 // 2:] = 2
    part = compact_partition(labels, grid.mask)
    model = make_model(grid, part, rand_params(rng),
                       [rand_params(rng), rand_params(rng)])
    op = CirculantOperator(model)
    y = rng.normal(size=grid.n_obs)
    return model, op, y


def test_identity_operator_converges_in_one_iteration():
    grid = GridGeometry.full(5, 5)
    p = QuasiMaternParams(1.0, 1e6, 0.5, 0.5)  # flat density: K = I
    model = make_model(grid, single_segment_partition(grid), p, [])
    op = CirculantOperator(model)
    y = np.random.default_rng(1).normal(size=25)
    rep = pcg_solve(op.cov_matvec, y, tol=1e-10)
    assert rep.converged
    assert rep.iterations == 1
    assert np.allclose(rep.x, y, rtol=1e-9)


def test_matches_dense_cholesky():
    model, op, y = small_system(2)
    K = brute_force_cov(model)
    want = sla.solve(K, y, assume_a="pos")
    rep = pcg_solve(op.cov_matvec, y, precond=op.preconditioner("g2"),
                    tol=1e-10, max_iter=500)
    assert rep.converged
    assert np.max(np.abs(rep.x - want)) <= 1e-8 * np.max(np.abs(want))


def test_converged_residual_meets_tolerance():
    model, op, y = small_system(3)
    for tol in (1e-4, 1e-8):
        rep = pcg_solve(op.cov_matvec, y, tol=tol, max_iter=500)
        assert rep.converged
        resid = np.linalg.norm(op.cov_matvec(rep.x) - y)
        assert resid <= tol * np.linalg.norm(y)


def test_monotone_error_norm():
    # The residual norm of (P)CG is not monotone even in exact arithmetic;
    # the error is, in both the operator norm and l2.  Track the error
    # against the dense solution.
    for seed in range(10):
        model, op, y = small_system(seed)
        K = brute_force_cov(model)
        exact = sla.solve(K, y, assume_a="pos")
        seen = []

        def watch(k, x):
            e = x - exact
            seen.append(float(np.sqrt(e @ (K @ e))))

        pcg_solve(op.cov_matvec, y, precond=op.preconditioner("g2"),
                  tol=1e-10, max_iter=500, callback=watch)
        drops = np.diff(np.array(seen))
        assert np.all(drops <= 1e-13 + 1e-9 * np.array(seen[:-1]))


def test_solution_independent_of_preconditioner():
    model, op, y = small_system(5)
    tol = 1e-8
    sols = {}
    for kind in (None, "g1", "g2", "g3", "g4"):
        rep = pcg_solve(op.cov_matvec, y, precond=op.preconditioner(kind),
                        tol=tol, max_iter=1000)
        assert rep.converged, kind
        sols[kind] = rep.x
    base = sols[None]
    norm = np.linalg.norm(base)
    for kind, x in sols.items():
        assert np.linalg.norm(x - base) <= 10 * tol * norm, kind


def test_warm_start_from_solution_takes_zero_iterations():
    model, op, y = small_system(6)
    rep = pcg_solve(op.cov_matvec, y, tol=1e-10, max_iter=500)
    rep2 = pcg_solve(op.cov_matvec, y, tol=1e-8, max_iter=500, x0=rep.x)
    assert rep2.converged
    assert rep2.iterations == 0


def test_zero_rhs():
    model, op, _ = small_system(7)
    rep = pcg_solve(op.cov_matvec, np.zeros(model.grid.n_obs))
    assert rep.converged and rep.iterations == 0
    assert np.array_equal(rep.x, np.zeros(model.grid.n_obs))


def test_breakdown_on_non_spd_operator():
    y = np.ones(4)
    with pytest.raises(BreakdownError):
        pcg_solve(lambda x: -x, y, tol=1e-8, max_iter=10)


def test_not_converged_returns_best_iterate():
    model, op, y = small_system(8)
    rep = pcg_solve(op.cov_matvec, y, tol=1e-14, max_iter=2)
    assert not rep.converged
    assert rep.iterations == 2
    assert np.isfinite(rep.residual_norm)
