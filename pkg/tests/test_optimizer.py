import json

import numpy as np
import pytest

from nsgp.circulant import CirculantOperator, sample_field
from nsgp.errors import NoProgressError
from nsgp.grids import GridGeometry, compact_partition, single_segment_partition
from nsgp.model import ProjectionBox, make_model
from nsgp.optimizer import FitConfig, fit, initial_model, project_params
from nsgp.oracle import dense_mle, exact_loglik, fisher_information, likelihood_gain
from nsgp.paramfiles import fitresult_to_dict
from nsgp.score import make_probes, stochastic_score
from nsgp.spectral import QuasiMaternParams


def three_segment_case(n1=20, n2=40, seed=0):
    grid = GridGeometry.full(n1, n2)
    labels = np.ones((n1, n2), dtype=np.int64)
    labels[:, n2 // 3: 2 * n2 // 3] = 2
    labels[:, 2 * n2 // 3:] = 3
    part = compact_partition(labels, grid.mask)
    t0 = QuasiMaternParams(0.2, 0.5, 0.5, 0.05)
    ts = [QuasiMaternParams(1.0, 0.5, 0.5, 0.05),
          QuasiMaternParams(3.0, 0.15, 1.0, 0.1),
          QuasiMaternParams(0.5, 1.0, 0.3, 0.05)]
    truth = make_model(grid, part, t0, ts)
    return truth, sample_field(truth, seed=seed)


class TestProjectParams:
    def test_interior_unchanged(self):
        box = ProjectionBox()
        vals = np.array([0.3, -0.7, 0.1, -1.0])
        names = ["sigma2", "alpha", "nu", "tau"]
        assert np.array_equal(project_params(vals, names, box), vals)

    def test_clamps_to_bounds(self):
        box = ProjectionBox()
        vals = np.array([-50.0, 10.0])
        names = ["sigma2", "alpha"]
        got = project_params(vals, names, box)
        assert got[0] == -20.0
        assert got[1] == np.log(20.0)

    def test_idempotent(self):
        box = ProjectionBox()
        rng = np.random.default_rng(0)
        vals = rng.uniform(-30, 30, size=5)
        names = ["sigma2", "phi", "alpha", "nu", "tau"]
        once = project_params(vals, names, box)
        twice = project_params(once, names, box)
        assert np.array_equal(once, twice)


class TestFixedPoint:
    def test_terminates_immediately_at_dense_mle(self):
        grid = GridGeometry.full(6, 6)
        part = single_segment_partition(grid)
        p = QuasiMaternParams(1.0, 0.5, 0.8, 0.2)
        gen = make_model(grid, part, p, [p])
        data = sample_field(gen, seed=2)
        start, _ = initial_model(data, part, FitConfig(fit_mean=False))
        mle, _ = dense_mle(data, start, fit_mean=False)

        # verify the stochastic score really is below the chosen stop
        op = CirculantOperator(mle)
        probes = make_probes(36, 200, seed=9)
        est = stochastic_score(op, data.y_obs, probes)
        stop = 2.0 * est.max_abs + 1e-6

        cfg = FitConfig(n_probes=200, seed=9, fit_mean=False, stop_score=stop)
        res = fit(data, part, cfg, init_model=mle)
        assert res.termination == "score-small"
        assert res.iterations == 0
        assert res.model.free_values_transformed() == pytest.approx(
            mle.free_values_transformed())


@pytest.fixture(scope="module")
def run():
    truth, data = three_segment_case(seed=3)
    cfg = FitConfig(n_probes=3, seed=5, fit_mean=False, max_outer=60)
    res = fit(data, truth.partition, cfg)
    return cfg, res


class TestAlgorithmInvariants:

    def test_accepted_steps_preserve_score_signs(self, run):
        _, res = run
        checked = 0
        for rec in res.records:
            if not rec.accepted:
                continue
            before = rec.score_before[rec.moved]
            after = rec.score_candidate[rec.moved]
            ok = (np.sign(after) == np.sign(before)) | (after == 0.0)
            assert np.all(ok)
            checked += 1
        assert checked == res.accepted > 0

    def test_step_doubles_on_accept_shrinks_on_reject(self, run):
        _, res = run
        for prev, cur in zip(res.records, res.records[1:]):
            factor = 2.0 if prev.accepted else 0.1
            assert cur.step == pytest.approx(prev.step * factor)

    def test_rejections_leave_threshold_unchanged(self, run):
        _, res = run
        for prev, cur in zip(res.records, res.records[1:]):
            if not prev.accepted:
                assert cur.threshold == prev.threshold

    def test_only_above_threshold_parameters_move(self, run):
        _, res = run
        for rec in res.records:
            assert np.array_equal(rec.moved, np.abs(rec.score_before) > rec.threshold)
            assert np.any(rec.moved)

    def test_iterates_stay_in_box(self, run):
        cfg, res = run
        box = cfg.box
        vals = res.model.free_values_transformed()
        for pid, v in zip(res.model.free_params(), vals):
            lo, hi = box.bounds_for(pid.name)
            assert lo - 1e-12 <= v <= hi + 1e-12
        s0 = np.log(res.model.theta0.sigma2)
        lo, hi = box.bounds_for("sigma2")
        assert lo <= s0 <= hi

    def test_sigma0_not_among_free_parameters(self, run):
        _, res = run
        names = [p.name for p in res.model.free_params()]
        assert "sigma2" not in names  # profiled, never gradient-stepped
        assert names.count("phi") == res.model.q


class TestFitBehavior:
    def test_deterministic(self):
        truth, data = three_segment_case(seed=7)
        cfg = FitConfig(n_probes=3, seed=11, fit_mean=False, max_outer=40)
        a = fit(data, truth.partition, cfg)
        b = fit(data, truth.partition, cfg)
        da = json.dumps(fitresult_to_dict(a), sort_keys=True)
        db = json.dumps(fitresult_to_dict(b), sort_keys=True)
        assert da == db

    def test_no_progress_guard(self):
        truth, data = three_segment_case(seed=13)
        # any rejection raises once the guard is set to one
        cfg = FitConfig(n_probes=3, seed=5, fit_mean=False, max_outer=200,
                        max_rejections=1, stop_score=1e-9)
        with pytest.raises(NoProgressError):
            fit(data, truth.partition, cfg)

    def test_matches_dense_mle_within_fisher_bands(self):
        # stationary data, trivial partition: the fit agrees with a dense
        # quasi-Newton MLE to within the stochastic-score information bands
        grid = GridGeometry.full(32, 32)
        part = single_segment_partition(grid)
        t0 = QuasiMaternParams(0.25, 0.5, 0.6, 0.1)
        t1 = QuasiMaternParams(1.2, 0.25, 0.8, 0.05)
        truth = make_model(grid, part, t0, [t1])
        data = sample_field(truth, seed=2)

        cfg = FitConfig(n_probes=5, seed=101, fit_mean=False, max_outer=400,
                        stop_score=0.3)
        res = fit(data, part, cfg)
        start, _ = initial_model(data, part, cfg)
        mle, _ = dense_mle(data, start, fit_mean=False, maxiter=300)
        B = fisher_information(mle, N=cfg.n_probes)
        se = np.sqrt(np.diag(np.linalg.inv(B)))
        dv = res.model.free_values_transformed() - mle.free_values_transformed()
        assert np.all(np.abs(dv) <= 3.0 * se)

    def test_positive_gain_on_average(self):
        # light version of the estimation-quality criterion
        gains = []
        for seed in (42, 43):
            truth, data = three_segment_case(n1=40, n2=80, seed=seed)
            cfg = FitConfig(n_probes=5, seed=1, fit_mean=False,
                            max_outer=300, stop_score=1.0)
            res = fit(data, truth.partition, cfg)
            gains.append(likelihood_gain(res.model, truth, data))
        assert np.mean(gains) > 0.0

    def test_fit_with_mean_estimates_slope(self):
        rng = np.random.default_rng(17)
        truth, _ = three_segment_case(n1=20, n2=40)
        cov = rng.normal(size=(20, 40))
        beta = np.array([[0.5, 1.0], [1.5, 1.0], [-0.5, 1.0]])
        model = make_model(truth.grid, truth.partition, truth.theta0,
                           truth.theta, beta=beta)
        data = sample_field(model, seed=19, covariates=[cov])
        cfg = FitConfig(n_probes=3, seed=23, fit_mean=True, max_outer=60)
        res = fit(data, truth.partition, cfg)
        slopes = res.model.beta[:, 1]
        assert np.all(np.abs(slopes - 1.0) < 0.25)
