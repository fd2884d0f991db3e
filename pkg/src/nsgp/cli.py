"""Command-line surface: simulate, partition, fit, evaluate, score-check,
bench-precond.

Every command takes --config (key = value file), --seed, --output and
--no-figures; exit codes are 0 on success, 2 on validation errors and 3 on
numerical failures.  Delimited outputs (CSV/JSON) are the machine-readable
artifacts; matplotlib figures are rendered next to them on the report path.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .baselines import equal_split_partition, vecchia_fit
from .circulant import CirculantOperator, sample_field
from .config import Config, load_config
from .errors import ConfigParseError, NsgpError, ValidationError
from .grids import (DataField, GridGeometry, read_grid_file, read_partition_file,
                    single_segment_partition, write_grid_file, write_partition_file)
from .model import make_model
from .optimizer import FitConfig, fit
from .oracle import ORACLE_CAP, exact_loglik, likelihood_gain, exact_score
from .paramfiles import load_params, model_to_params_dict, save_fitresult, save_params
from .partition_select import (DEFAULT_CUTOFFS, SegmentLikelihood, bic_select,
                               build_block_grid, generate_candidate, rand_index,
                               simple_ols_residuals)
from .pcg import pcg_solve
from .score import SolverConfig, make_probes, stochastic_score
from .spectral import QuasiMaternParams


# ---------------------------------------------------------------------------
# config helpers


def _quasi_params(cfg, prefix, defaults=(1.0, 0.5, 0.5, 0.05)):
    return QuasiMaternParams(
        cfg.get_float(f"{prefix}.sigma2", defaults[0]),
        cfg.get_float(f"{prefix}.alpha", defaults[1]),
        cfg.get_float(f"{prefix}.nu", defaults[2]),
        cfg.get_float(f"{prefix}.tau", defaults[3]))


def _load_field(cfg, key="data.file"):
    path = cfg.get_str(key)
    if path is None:
        raise ConfigParseError(f"missing required key {key!r}")
    values, mask = read_grid_file(path)
    grid = GridGeometry(*values.shape, mask)
    covs = []
    for cpath in cfg.get_strs("data.covariates", []):
        cvals, cmask = read_grid_file(cpath)
        if cvals.shape != values.shape or np.any(cmask != mask):
            raise ValidationError(f"covariate {cpath} does not share the data mask")
        covs.append(cvals)
    return DataField(grid, values, tuple(covs))


def _load_partition(cfg, grid, key="partition.file"):
    path = cfg.get_str(key)
    if path is None:
        raise ConfigParseError(f"missing required key {key!r}")
    part, _ = read_partition_file(path, grid)
    return part


def _solver_config(cfg):
    return SolverConfig(tol=cfg.get_float("pcg.tol", 1e-6),
                        max_iter=cfg.get_int("pcg.max_iter", 1000),
                        precond=cfg.get_str("pcg.precond", "g2"))


def _build_partition_for_sim(cfg, grid):
    if "partition.file" in cfg:
        part, _ = read_partition_file(cfg.get_str("partition.file"), grid)
        return part
    k = cfg.get_int("partition.equal_splits", 0)
    if k:
        return equal_split_partition(grid, k)
    return single_segment_partition(grid)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, seed, out, figures):
    n1 = cfg.get_int("grid.n1")
    n2 = cfg.get_int("grid.n2")
    if not n1 or not n2:
        raise ConfigParseError("simulate needs grid.n1 and grid.n2")
    if "grid.mask" in cfg:
        mvals, mask = read_grid_file(cfg.get_str("grid.mask"))
        if mvals.shape != (n1, n2):
            raise ValidationError("mask file dims disagree with grid.n1/n2")
        mask = mask & (mvals != 0.0)
    else:
        mask = np.ones((n1, n2), dtype=bool)
    grid = GridGeometry(n1, n2, mask)
    part = _build_partition_for_sim(cfg, grid)

    theta0 = _quasi_params(cfg, "global", (0.1, 0.5, 0.5, 0.05))
    thetas = [_quasi_params(cfg, f"segment{i}") for i in range(1, part.q + 1)]

    n_cov = cfg.get_int("covariates.count", 0)
    cov_params = _quasi_params(cfg, "covariates")
    covariates = []
    for j in range(n_cov):
        cov_model = make_model(grid, single_segment_partition(grid), cov_params, [],
                               factor=cfg.get_float("model.expansion_factor", 1.25))
        cov_field = sample_field(cov_model, seed=seed + 7919 * (j + 1))
        covariates.append(np.where(mask, cov_field.values, np.nan))

    beta = None
    if any(f"beta.segment{i}" in cfg for i in range(1, part.q + 1)):
        rows = []
        for i in range(1, part.q + 1):
            row = cfg.get_floats(f"beta.segment{i}")
            if row is None or len(row) != 1 + n_cov:
                raise ConfigParseError(
                    f"beta.segment{i} must list 1 + {n_cov} coefficients")
            rows.append(row)
        beta = np.array(rows)

    model = make_model(grid, part, theta0, thetas, beta=beta,
                       factor=cfg.get_float("model.expansion_factor", 1.25))
    data = sample_field(model, seed=seed, covariates=covariates)

    write_grid_file(out / "data.txt", np.where(mask, data.values, 0.0), mask)
    for j, cov in enumerate(covariates, start=1):
        write_grid_file(out / f"covariate{j}.txt", np.where(mask, cov, 0.0), mask)
    write_partition_file(out / "partition_truth.txt", part)
    save_params(out / "params_truth.json", model)
    if figures:
        report.field_map(out / "field.png", data.values, mask, "simulated field")
        report.partition_map(out / "partition.png", part.labels, "truth partition")
    print(f"simulated {n1}x{n2} field with {part.q} segments -> {out}")
    return 0


def cmd_partition(cfg, seed, out, figures):
    data = _load_field(cfg)
    block = cfg.get_floats("partition.block", [10, 10])
    cutoffs = cfg.get_floats("partition.cutoffs", list(DEFAULT_CUTOFFS))
    seeds_per = cfg.get_int("partition.seeds_per_cutoff", 3)

    truth = None
    if "truth.partition" in cfg:
        truth, _ = read_partition_file(cfg.get_str("truth.partition"), data.grid)

    resid = simple_ols_residuals(data)
    bg = build_block_grid(data.grid, resid, (int(block[0]), int(block[1])))
    seglik = SegmentLikelihood(bg, factor=cfg.get_float("model.expansion_factor", 1.25))

    cands = []
    rows = []
    idx = 0
    for cutoff in cutoffs:
        for _ in range(seeds_per):
            cand = generate_candidate(seglik, cutoff, seed + idx)
            cands.append(cand)
            idx += 1
    best = bic_select(cands)
    for cand in cands:
        row = [cand.p_cutoff, cand.seed, cand.partition.q,
               f"{cand.loglik:.6f}", f"{cand.bic:.6f}",
               1 if cand is best else 0]
        if truth is not None:
            row.append(f"{rand_index(cand.partition, truth, data.grid):.6f}")
        rows.append(row)

    header = ["cutoff", "seed", "segments", "loglik", "bic", "selected"]
    if truth is not None:
        header.append("rand_index")
    _write_csv(out / "candidates.csv", header, rows)
    write_partition_file(out / "partition_best.txt", best.partition)
    if figures:
        report.partition_map(out / "partition_map.png", best.partition.labels,
                             f"selected partition (q={best.partition.q}, "
                             f"BIC={best.bic:.1f})")
    print(f"{len(cands)} candidates -> best q={best.partition.q} "
          f"BIC={best.bic:.2f} (cutoff={best.p_cutoff}, seed={best.seed})")
    return 0


def cmd_fit(cfg, seed, out, figures):
    data = _load_field(cfg)
    part = _load_partition(cfg, data.grid)
    method = cfg.get_str("fit.method", "score")
    fit_mean = cfg.get_bool("fit.mean", True)
    factor = cfg.get_float("model.expansion_factor", 1.25)

    truth_model = None
    if "truth.params" in cfg:
        tpart = part
        if "truth.partition" in cfg:
            tpart, _ = read_partition_file(cfg.get_str("truth.partition"), data.grid)
        truth_model = load_params(cfg.get_str("truth.params"), data.grid, tpart)

    if method == "score":
        fc = FitConfig(
            n_probes=cfg.get_int("fit.probes", 5),
            seed=seed,
            solver=_solver_config(cfg),
            max_outer=cfg.get_int("fit.max_outer", 200),
            stop_score=cfg.get_float("fit.stop_score", None),
            fit_mean=fit_mean,
            expansion_factor=factor,
        )
        result = fit(data, part, fc)
        model = result.model
        evaluation = {}
        if data.grid.n_obs <= ORACLE_CAP:
            evaluation["loglik2"] = exact_loglik(model, data)
            if truth_model is not None:
                evaluation["likelihood_gain"] = (
                    evaluation["loglik2"] - exact_loglik(truth_model, data))
        save_fitresult(out / "fitresult.json", result, evaluation)
        if figures:
            report.score_trace(out / "score_trace.png", result.score_norms,
                               result.stop_threshold)
        print(f"score fit: {result.termination} after {result.iterations} "
              f"iterations ({result.accepted} accepted, {result.rejected} "
              f"rejected), {result.pcg_iterations} PCG iterations")
        if "likelihood_gain" in evaluation:
            print(f"likelihood gain vs truth: {evaluation['likelihood_gain']:.3f}")
        return 0

    if method == "vecchia":
        model, res = vecchia_fit(data, part, m=cfg.get_int("fit.neighbors", 30),
                                 fit_mean=fit_mean, factor=factor,
                                 maxiter=cfg.get_int("fit.max_outer", 60))
        evaluation = {"vecchia_negloglik": float(res.fun),
                      "iterations": int(res.nit)}
        if data.grid.n_obs <= ORACLE_CAP:
            evaluation["loglik2"] = exact_loglik(model, data)
            if truth_model is not None:
                evaluation["likelihood_gain"] = (
                    evaluation["loglik2"] - exact_loglik(truth_model, data))
        doc = {"params": model_to_params_dict(model),
               "fit": {"method": "vecchia", "iterations": int(res.nit),
                       "converged": bool(res.success), "seed": seed},
               "evaluation": evaluation}
        with open(out / "fitresult.json", "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print(f"vecchia fit: {res.nit} iterations, converged={res.success}")
        if "likelihood_gain" in evaluation:
            print(f"likelihood gain vs truth: {evaluation['likelihood_gain']:.3f}")
        return 0

    raise ConfigParseError(f"fit.method must be 'score' or 'vecchia', got {method!r}")


def cmd_evaluate(cfg, seed, out, figures):
    data = _load_field(cfg)
    part = _load_partition(cfg, data.grid)
    cfg.require("params.file")
    model = load_params(cfg.get_str("params.file"), data.grid, part)
    doc = {"loglik2": exact_loglik(model, data)}
    if "truth.params" in cfg:
        tpart = part
        if "truth.partition" in cfg:
            tpart, _ = read_partition_file(cfg.get_str("truth.partition"), data.grid)
        truth_model = load_params(cfg.get_str("truth.params"), data.grid, tpart)
        doc["likelihood_gain"] = likelihood_gain(model, truth_model, data)
    with open(out / "evaluation.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(json.dumps(doc))
    return 0


def cmd_score_check(cfg, seed, out, figures):
    data = _load_field(cfg)
    part = _load_partition(cfg, data.grid)
    cfg.require("params.file")
    model = load_params(cfg.get_str("params.file"), data.grid, part)
    n_draws = cfg.get_int("score.draws", 100)
    n_probes = cfg.get_int("score.probes", 5)
    solver = _solver_config(cfg)

    from .model import mean_vector
    y0 = data.y_obs - mean_vector(model, data)
    exact = exact_score(model, y0)
    op = CirculantOperator(model)
    draws = np.empty((n_draws, len(exact)))
    for d in range(n_draws):
        probes = make_probes(data.grid.n_obs, n_probes, seed + d)
        draws[d] = stochastic_score(op, y0, probes, solver).values

    pids = model.free_params()
    rows = []
    for k, pid in enumerate(pids):
        mean = float(draws[:, k].mean())
        se = float(draws[:, k].std(ddof=1) / np.sqrt(n_draws))
        rows.append([f"{pid.process}:{pid.name}", f"{exact[k]:.10g}",
                     f"{mean:.10g}", f"{se:.10g}",
                     f"{(mean - exact[k]) / se if se > 0 else 0.0:.4f}"])
    _write_csv(out / "score_check.csv",
               ["parameter", "exact", "stochastic_mean", "stochastic_se", "z"],
               rows)
    if figures:
        report.score_scatter(out / "score_check.png", exact, draws.mean(axis=0))
    worst = max(abs(float(r[4])) for r in rows)
    print(f"score check over {n_draws} draws x {n_probes} probes: max |z| = {worst:.2f}")
    return 0


def cmd_bench_precond(cfg, seed, out, figures):
    n1 = cfg.get_int("grid.n1", 64)
    n2 = cfg.get_int("grid.n2", 64)
    grid = GridGeometry.full(n1, n2)
    part = _build_partition_for_sim(cfg, grid)
    theta0 = _quasi_params(cfg, "global", (0.1, 0.5, 0.5, 0.05))
    thetas = [_quasi_params(cfg, f"segment{i}") for i in range(1, part.q + 1)]
    model = make_model(grid, part, theta0, thetas,
                       factor=cfg.get_float("model.expansion_factor", 1.25))
    op = CirculantOperator(model)

    n_sys = cfg.get_int("bench.systems", 20)
    err2 = cfg.get_float("bench.error2", 1e-4)
    max_iter = cfg.get_int("pcg.max_iter", 2000)
    kinds = ["none", "g1", "g2", "g3", "g4"]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4,)))

    iters = {k: [] for k in kinds}
    rows = []
    for s in range(n_sys):
        x_true = rng.standard_normal(grid.n_obs)
        y = op.cov_matvec(x_true)
        row = [s]
        for kind in kinds:
            hits = []

            def watch(k, x, x_true=x_true, hits=hits):
                if not hits and float(np.sum((x - x_true) ** 2)) < err2:
                    hits.append(k)

            # zero start: the documented 'poor starting value' for benchmarks
            rep = pcg_solve(op.cov_matvec, y, precond=op.preconditioner(kind),
                            tol=1e-12, max_iter=max_iter, callback=watch)
            it = hits[0] if hits else max_iter
            iters[kind].append(it)
            row.append(it)
        rows.append(row)

    _write_csv(out / "precond_bench.csv", ["system"] + kinds, rows)
    medians = {k: float(np.median(iters[k])) for k in kinds}
    if figures:
        report.precond_bars(out / "precond_bench.png", medians)
    print("median iterations until squared error < "
          f"{err2:g}: " + ", ".join(f"{k}={medians[k]:.0f}" for k in kinds))
    return 0


# ---------------------------------------------------------------------------


COMMANDS = {
    "simulate": cmd_simulate,
    "partition": cmd_partition,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "score-check": cmd_score_check,
    "bench-precond": cmd_bench_precond,
}


def _parser():
    p = argparse.ArgumentParser(
        prog="nsgp",
        description="Partitioned non-stationary Gaussian process toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip matplotlib figure rendering")
    p.add_argument("--threads", type=int, default=None,
                   help="cap internal (BLAS) data parallelism")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.threads:
            try:
                from threadpoolctl import threadpool_limits
                threadpool_limits(limits=args.threads)
            except ImportError:
                pass
        cfg = load_config(args.config) if args.config else Config()
        for item in args.set:
            if "=" not in item:
                raise ConfigParseError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, val = item.partition("=")
            cfg.entries[key.strip()] = val.split()
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.seed, out, not args.no_figures)
    except NsgpError as exc:
        print(f"error: {exc.category}: {exc.detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
