import numpy as np
import pytest

from nsgp.circulant import CirculantOperator, sample_field
from nsgp.errors import DimensionMismatchError, UnknownKindError, UnknownParameterError
from nsgp.grids import GridGeometry, compact_partition, single_segment_partition
from nsgp.model import ParamId, make_model
from nsgp.spectral import QuasiMaternParams, covariance_from_density, qm_density

from conftest import brute_force_cov, rand_model, rand_params


def flat_model(sigma2, n1=5, n2=5):
    """alpha large enough that the density is flat: white noise K = v I."""
    grid = GridGeometry.full(n1, n2)
    p = QuasiMaternParams(sigma2, 1e6, 0.5, 0.5)
    return make_model(grid, single_segment_partition(grid), p, [])


def dense_dcov(model, pid):
    """Segment-masked dense derivative via the brute-force pattern."""
    from nsgp.spectral import qm_density_grad
    grid = model.grid
    r, c = grid.obs_rows_cols()
    m1, m2 = model.embed.dims
    labels = model.partition.labels[grid.mask]
    name = "sigma2" if pid.name == "phi" else pid.name
    slot = ("sigma2", "alpha", "nu", "tau").index(name)
    table = covariance_from_density(
        qm_density_grad(model.params_of(pid.process), (m1, m2))[slot])
    n = grid.n_obs
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if pid.process > 0 and not (labels[a] == pid.process == labels[b]):
                continue
            out[a, b] = table[(r[a] - r[b]) % m1, (c[a] - c[b]) % m2]
    return out


def dense_precond(model, kind):
    """Dense preconditioner from covariance tables of the inverse densities."""
    grid = model.grid
    r, c = grid.obs_rows_cols()
    m1, m2 = model.embed.dims
    labels = model.partition.labels[grid.mask]
    n = grid.n_obs
    fs = [qm_density(model.params_of(i), (m1, m2)).values
          for i in range(model.q + 1)]

    def table_for(vals):
        from nsgp.spectral import SpectralField
        return covariance_from_density(SpectralField((m1, m2), vals))

    P = np.zeros((n, n))
    if kind in ("g1", "g3"):
        t = table_for(1.0 / fs[0])
        for a in range(n):
            for b in range(n):
                P[a, b] += t[(r[a] - r[b]) % m1, (c[a] - c[b]) % m2]
    if kind in ("g2", "g3"):
        for i in range(1, model.q + 1):
            t = table_for(1.0 / fs[i])
            for a in range(n):
                for b in range(n):
                    if labels[a] == i == labels[b]:
                        P[a, b] += t[(r[a] - r[b]) % m1, (c[a] - c[b]) % m2]
    if kind == "g4":
        t = table_for(1.0 / (model.q * fs[0] + sum(fs[1:])))
        for a in range(n):
            for b in range(n):
                P[a, b] += t[(r[a] - r[b]) % m1, (c[a] - c[b]) % m2]
    return P


class TestCovMatvec:
    def test_white_noise_scales_input(self):
        model = flat_model(2.5)
        op = CirculantOperator(model)
        x = np.random.default_rng(0).normal(size=model.grid.n_obs)
        assert np.allclose(op.cov_matvec(x), 2.5 * x, rtol=1e-12)

    def test_matches_dense_oracle_6x6_q2(self):
        rng = np.random.default_rng(5)
        grid = GridGeometry.full(6, 6)
        labels = np.ones((6, 6), dtype=np.int64)
        labels[:, 3:] = 2
        part = compact_partition(labels, grid.mask)
        model = make_model(grid, part, rand_params(rng),
                           [rand_params(rng), rand_params(rng)])
        K = brute_force_cov(model)
        op = CirculantOperator(model)
        for _ in range(5):
            x = rng.normal(size=grid.n_obs)
            want = K @ x
            got = op.cov_matvec(x)
            assert np.max(np.abs(got - want)) <= 1e-10 * np.max(np.abs(want))

    def test_linearity(self):
        rng = np.random.default_rng(6)
        model = rand_model(rng, q=2)
        op = CirculantOperator(model)
        x = rng.normal(size=model.grid.n_obs)
        y = rng.normal(size=model.grid.n_obs)
        lhs = op.cov_matvec(2.0 * x - 3.0 * y)
        rhs = 2.0 * op.cov_matvec(x) - 3.0 * op.cov_matvec(y)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_exactly_q_plus_one_roundtrips(self):
        rng = np.random.default_rng(7)
        for q in (0, 1, 2, 3):
            model = rand_model(rng, q=q)
            op = CirculantOperator(model)
            x = rng.normal(size=model.grid.n_obs)
            before = op.roundtrips
            op.cov_matvec(x)
            assert op.roundtrips - before == model.q + 1

    def test_symmetry_and_positive_definiteness(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            model = rand_model(rng)
            op = CirculantOperator(model)
            x = rng.normal(size=model.grid.n_obs)
            y = rng.normal(size=model.grid.n_obs)
            sx = float(x @ op.cov_matvec(y))
            sy = float(y @ op.cov_matvec(x))
            assert abs(sx - sy) <= 1e-11 * max(1.0, abs(sx))
        model = rand_model(rng, q=2)
        op = CirculantOperator(model)
        for _ in range(100):
            x = rng.normal(size=model.grid.n_obs)
            assert float(x @ op.cov_matvec(x)) > 0.0

    def test_dimension_mismatch(self):
        model = flat_model(1.0)
        op = CirculantOperator(model)
        with pytest.raises(DimensionMismatchError):
            op.cov_matvec(np.zeros(3))


class TestDcovMatvec:
    def test_matches_finite_differences_through_dense(self):
        rng = np.random.default_rng(9)
        grid = GridGeometry.full(6, 6)
        labels = np.ones((6, 6), dtype=np.int64)
        labels[3:, :] = 2
        part = compact_partition(labels, grid.mask)
        t0, t1, t2 = rand_params(rng), rand_params(rng), rand_params(rng)
        model = make_model(grid, part, t0, [t1, t2])
        op = CirculantOperator(model)
        x = rng.normal(size=grid.n_obs)
        eps = 1e-5
        for process, base in ((0, t0), (1, t1), (2, t2)):
            for name in ("sigma2", "alpha", "nu", "tau"):
                kw = dict(sigma2=base.sigma2, alpha=base.alpha,
                          nu=base.nu, tau=base.tau)
                hi, lo = dict(kw), dict(kw)
                hi[name] += eps
                lo[name] -= eps

                def with_proc(p):
                    th = [t1, t2]
                    if process == 0:
                        return make_model(grid, part, p, th)
                    th[process - 1] = p
                    return make_model(grid, part, t0, th)

                Kp = brute_force_cov(with_proc(QuasiMaternParams(**hi)))
                Km = brute_force_cov(with_proc(QuasiMaternParams(**lo)))
                fd = (Kp @ x - Km @ x) / (2 * eps)
                got = op.dcov_matvec(process, name, x)
                scale = max(np.max(np.abs(fd)), 1e-10)
                assert np.max(np.abs(got - fd)) <= 1e-4 * scale, (process, name)

    def test_sigma2_derivative_identity(self):
        rng = np.random.default_rng(10)
        model = rand_model(rng, q=0)
        op = CirculantOperator(model)
        x = rng.normal(size=model.grid.n_obs)
        got = op.dcov_matvec(0, "sigma2", x)
        want = op.cov_matvec(x) / model.theta0.sigma2
        # whole covariance is the Z0 term here, so dK/dsigma2 = K / sigma2
        assert np.allclose(got, want, rtol=1e-12)

    def test_matches_dense_assembly(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            model = rand_model(rng, q=2, max_side=6)
            op = CirculantOperator(model)
            x = rng.normal(size=model.grid.n_obs)
            for pid in model.free_params():
                D = dense_dcov(model, pid)
                got = op.param_matvec(pid, x)
                want = D @ x
                scale = max(np.max(np.abs(want)), 1e-12)
                assert np.max(np.abs(got - want)) <= 1e-10 * scale

    def test_unknown_parameter(self):
        op = CirculantOperator(flat_model(1.0))
        with pytest.raises(UnknownParameterError):
            op.dcov_matvec(0, "rho", np.zeros(25))
        with pytest.raises(UnknownParameterError):
            op.dcov_matvec(5, "alpha", np.zeros(25))


class TestPrecondMatvec:
    def test_g1_flat_divides(self):
        model = flat_model(4.0)
        op = CirculantOperator(model)
        x = np.random.default_rng(1).normal(size=model.grid.n_obs)
        assert np.allclose(op.precond_matvec("g1", x), x / 4.0, rtol=1e-12)

    def test_g2_single_full_segment_equals_g1_of_f1(self):
        rng = np.random.default_rng(12)
        grid = GridGeometry.full(5, 5)
        part = single_segment_partition(grid)
        p0, p1 = rand_params(rng), rand_params(rng)
        model = make_model(grid, part, p0, [p1])
        swapped = make_model(grid, part, p1, [p0])
        x = rng.normal(size=grid.n_obs)
        got = CirculantOperator(model).precond_matvec("g2", x)
        want = CirculantOperator(swapped).precond_matvec("g1", x)
        assert np.allclose(got, want, rtol=1e-12)

    def test_matches_dense_tables(self):
        rng = np.random.default_rng(13)
        for _ in range(4):
            model = rand_model(rng, q=2, max_side=6)
            op = CirculantOperator(model)
            x = rng.normal(size=model.grid.n_obs)
            for kind in ("g1", "g2", "g3", "g4"):
                P = dense_precond(model, kind)
                want = P @ x
                got = op.precond_matvec(kind, x)
                scale = max(np.max(np.abs(want)), 1e-12)
                assert np.max(np.abs(got - want)) <= 1e-10 * scale, kind

    def test_precond_is_spd(self):
        rng = np.random.default_rng(14)
        model = rand_model(rng, q=3, max_side=6)
        op = CirculantOperator(model)
        for kind in ("g1", "g2", "g3", "g4"):
            for _ in range(20):
                x = rng.normal(size=model.grid.n_obs)
                y = rng.normal(size=model.grid.n_obs)
                assert float(x @ op.precond_matvec(kind, x)) > 0.0
                lhs = float(y @ op.precond_matvec(kind, x))
                rhs = float(x @ op.precond_matvec(kind, y))
                assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_unknown_kind(self):
        op = CirculantOperator(flat_model(1.0))
        with pytest.raises(UnknownKindError):
            op.precond_matvec("g9", np.zeros(25))


class TestSampleField:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(15)
        model = rand_model(rng, q=2, beta=False)
        a = sample_field(model, seed=123)
        b = sample_field(model, seed=123)
        assert np.array_equal(a.values[model.grid.mask], b.values[model.grid.mask])

    def test_adding_processes_preserves_earlier_draws(self):
        rng = np.random.default_rng(16)
        grid = GridGeometry.full(6, 6)
        part = single_segment_partition(grid)
        p0, p1 = rand_params(rng), rand_params(rng)
        lone = make_model(grid, part, p0, [])
        both = make_model(grid, part, p0, [p1])
        _, comp_lone = sample_field(lone, seed=9, return_components=True)
        _, comp_both = sample_field(both, seed=9, return_components=True)
        assert np.array_equal(comp_lone[0], comp_both[0])

    def test_white_noise_moments(self):
        grid = GridGeometry.full(100, 100)
        p = QuasiMaternParams(3.0, 1e6, 0.5, 0.5)
        model = make_model(grid, single_segment_partition(grid), p, [])
        data = sample_field(model, seed=4)
        v = float(np.var(data.y_obs))
        se = 3.0 * np.sqrt(2.0 / grid.n_obs)  # sd of sample variance of N(0,3)
        assert abs(v - 3.0) < 5 * se

    def test_covariance_at_small_lags_monte_carlo(self):
        # 64x64, q=2: empirical lag covariances against the model tables
        grid = GridGeometry.full(64, 64)
        labels = np.ones((64, 64), dtype=np.int64)
        labels[:, 32:] = 2
        part = compact_partition(labels, grid.mask)
        t0 = QuasiMaternParams(0.3, 0.8, 0.6, 0.2)
        t1 = QuasiMaternParams(1.1, 0.4, 0.9, 0.1)
        t2 = QuasiMaternParams(0.6, 1.2, 0.5, 0.3)
        model = make_model(grid, part, t0, [t1, t2])

        m1, m2 = model.embed.dims
        want = {}
        tabs = [covariance_from_density(qm_density(p, (m1, m2)))
                for p in (t0, t1, t2)]
        for lag in ((0, 0), (1, 0), (0, 1)):
            # covariance within segment 1's interior
            want[lag] = tabs[0][lag] + tabs[1][lag]

        reps = 500
        sums = {lag: 0.0 for lag in want}
        sqs = {lag: 0.0 for lag in want}
        for r in range(reps):
            data = sample_field(model, seed=r)
            z = data.values[:30, :30]  # interior of segment 1
            for (l1, l2) in want:
                prod = z[: 30 - l1, : 30 - l2] * z[l1:30, l2:30]
                m = float(np.mean(prod))
                sums[(l1, l2)] += m
                sqs[(l1, l2)] += m * m
        for lag, w in want.items():
            mean = sums[lag] / reps
            var = sqs[lag] / reps - mean ** 2
            se = np.sqrt(var / reps)
            assert abs(mean - w) < 4 * se, (lag, mean, w, se)

    def test_mean_added_through_design(self):
        grid = GridGeometry.full(4, 4)
        part = single_segment_partition(grid)
        p = QuasiMaternParams(1.0, 0.5, 0.5, 0.1)
        cov = np.linspace(0.0, 1.0, 16).reshape(4, 4)
        beta = np.array([[2.0, 3.0]])
        with_mean = make_model(grid, part, p, [p], beta=beta)
        without = make_model(grid, part, p, [p])
        a = sample_field(with_mean, seed=1, covariates=[cov])
        b = sample_field(without, seed=1, covariates=[cov])
        assert np.allclose(a.y_obs - b.y_obs, 2.0 + 3.0 * cov[grid.mask])
