"""Comparators: Vecchia nearest-neighbor approximate likelihood and the
equal-split partition.

The Vecchia factorization conditions each observation, in raster order, on
its m nearest previously-ordered observed neighbors (ties broken by lower
raster index).  Conditional moments come from dense sub-covariances of the
full non-stationary model, so with m >= n-1 the approximation is exact.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize

from .errors import InvalidParameterError, OptimizerFailureError, SingularConditioningError
from .grids import Partition
from .model import ProjectionBox, build_design_matrix, make_model, mean_vector
from .optimizer import initial_model
from .spectral import covariance_from_density, qm_density


@dataclass
class VecchiaStructure:
    """Parameter-independent index machinery for one (grid, m) combination.

    Interior observations repeat the same neighbor offsets and segment
    labels, so conditional regressions are solved once per distinct
    (offsets, labels) pattern and broadcast to every observation sharing it.
    """

    grid: object
    m: int
    n_obs: int
    nbrs_padded: np.ndarray   # (n, m) neighbor indices, 0-padded
    own_label: np.ndarray     # (n,) segment label per observation
    k_groups: list            # per conditioning-set size: precomputed takes


def neighbor_sets(grid, m, ordering="raster"):
    """Previously-ordered nearest neighbors per observation.

    Euclidean distance on pixel coordinates; equal distances prefer the
    lower raster index.
    """
    if ordering != "raster":
        raise InvalidParameterError(f"unsupported ordering {ordering!r}")
    r, c = grid.obs_rows_cols()
    n = len(r)
    out = []
    for i in range(n):
        if i == 0 or m == 0:
            out.append(np.empty(0, dtype=int))
            continue
        d2 = (r[:i] - r[i]) ** 2 + (c[:i] - c[i]) ** 2
        k = min(m, i)
        # stable two-key order: distance first, raster index second
        cand = np.argpartition(d2, k - 1)[:k] if k < i else np.arange(i)
        sel = cand[np.lexsort((cand, d2[cand]))][:k]
        out.append(np.sort(sel))
    return out


def build_structure(model, m, ordering="raster"):
    grid = model.grid
    m1, m2 = model.embed.dims
    M = m1 * m2
    r, c = grid.obs_rows_cols()
    n = len(r)
    labels = (model.partition.labels[grid.mask].astype(np.int64)
              if model.q else np.zeros(n, dtype=np.int64))
    nbrs = neighbor_sets(grid, m, ordering)

    nbrs_padded = np.zeros((n, max(m, 1)), dtype=np.int64)
    by_sig = {}
    for i, S in enumerate(nbrs):
        k = len(S)
        if k:
            nbrs_padded[i, :k] = S
        o_r = r[S] - r[i]
        o_c = c[S] - c[i]
        sig = (k, o_r.tobytes(), o_c.tobytes(), int(labels[i]),
               labels[S].tobytes())
        by_sig.setdefault(sig, []).append(i)

    # group distinct patterns by conditioning-set size, precompute all flat
    # table indices used to assemble Sigma and the cross-covariance vector
    per_k = {}
    for sig, members in by_sig.items():
        per_k.setdefault(sig[0], []).append((sig, members))

    k_groups = []
    for k, entries in sorted(per_k.items()):
        members_concat = np.concatenate(
            [np.asarray(mem, dtype=np.int64) for _, mem in entries])
        counts = np.array([len(mem) for _, mem in entries], dtype=np.int64)
        if k == 0:
            k_groups.append({"k": 0, "members": members_concat,
                             "counts": counts})
            continue
        U = len(entries)
        o_r = np.empty((U, k), dtype=np.int64)
        o_c = np.empty((U, k), dtype=np.int64)
        li = np.empty(U, dtype=np.int64)
        lS = np.empty((U, k), dtype=np.int64)
        for u, (sig, mem) in enumerate(entries):
            o_r[u] = np.frombuffer(sig[1], dtype=np.int64)
            o_c[u] = np.frombuffer(sig[2], dtype=np.int64)
            li[u] = sig[3]
            lS[u] = np.frombuffer(sig[4], dtype=np.int64)

        cross_flat = ((-o_r) % m1) * m2 + ((-o_c) % m2)
        dnn_r = (o_r[:, :, None] - o_r[:, None, :]) % m1
        dnn_c = (o_c[:, :, None] - o_c[:, None, :]) % m2
        nn_flat = dnn_r * m2 + dnn_c

        cross_same = (li[:, None] == lS) & (lS > 0)
        nn_same = (lS[:, :, None] == lS[:, None, :]) & (lS[:, :, None] > 0)
        cross_lab_flat = np.where(cross_same, lS * M + cross_flat, 0)
        nn_lab_flat = np.where(nn_same, lS[:, :, None] * M + nn_flat, 0)

        k_groups.append({"k": k, "members": members_concat, "counts": counts,
                         "nn_flat": nn_flat, "nn_lab_flat": nn_lab_flat,
                         "nn_same": nn_same, "cross_flat": cross_flat,
                         "cross_lab_flat": cross_lab_flat,
                         "cross_same": cross_same})
    return VecchiaStructure(grid, m, n, nbrs_padded, labels, k_groups)


def _cov_tables(model):
    """(q+1, m1, m2) stack of lag-domain covariance tables."""
    tables = [covariance_from_density(qm_density(model.params_of(i), model.embed.dims))
              for i in range(model.q + 1)]
    return np.stack(tables)


def conditional_moments(model, structure):
    """Per-observation conditional regressions, one solve per distinct
    pattern.

    Returns (coeffs, variances): coeffs is (n, m), zero-padded.  Raises
    SingularConditioningError when a conditioning covariance fails.
    """
    tables = _cov_tables(model)
    flat = tables.reshape(len(tables), -1)
    base = flat[0]
    allf = flat.ravel()
    n = structure.n_obs
    variances = np.empty(n)
    coeffs = np.zeros((n, max(structure.m, 1)))
    own = np.full(n, base[0])
    if model.q:
        own += flat[structure.own_label, 0]

    for g in structure.k_groups:
        k = g["k"]
        if k == 0:
            variances[g["members"]] = own[g["members"]]
            continue
        Sig = base.take(g["nn_flat"]) + np.where(
            g["nn_same"], allf.take(g["nn_lab_flat"]), 0.0)
        cvec = base.take(g["cross_flat"]) + np.where(
            g["cross_same"], allf.take(g["cross_lab_flat"]), 0.0)
        try:
            b = np.linalg.solve(Sig, cvec[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularConditioningError(
                f"conditioning covariance not invertible: {exc}")
        rep_own = own[g["members"]][np.cumsum(g["counts"]) - g["counts"]]
        v = rep_own - np.einsum("uk,uk->u", b, cvec)
        if np.any(v <= 0.0):
            raise SingularConditioningError(
                "non-positive conditional variance; parameters invalid")
        variances[g["members"]] = np.repeat(v, g["counts"])
        coeffs[g["members"], :k] = np.repeat(b, g["counts"], axis=0)
    return coeffs, variances


def _whiten(structure, coeffs, variances, z):
    """(U z)_i = (z_i - b_i' z_{S_i}) / sqrt(v_i): the Vecchia square root."""
    zS = z[structure.nbrs_padded]
    out = z - np.einsum("nm,nm->n", coeffs, zS)
    return out / np.sqrt(variances)


def vecchia_loglik(model, data, m=30, ordering="raster", structure=None):
    """Sequential conditional Gaussian log likelihood (not doubled)."""
    structure = structure or build_structure(model, m, ordering)
    coeffs, variances = conditional_moments(model, structure)
    y0 = data.y_obs - mean_vector(model, data)
    u = _whiten(structure, coeffs, variances, y0)
    n = len(y0)
    return -0.5 * (n * np.log(2.0 * np.pi) + float(np.sum(np.log(variances)))
                   + float(u @ u))


def _vecchia_beta(structure, coeffs, variances, X, Y):
    """GLS mean fit under the Vecchia-implied precision (whitened OLS)."""
    UX = np.column_stack([_whiten(structure, coeffs, variances, X[:, j])
                          for j in range(X.shape[1])])
    UY = _whiten(structure, coeffs, variances, Y)
    beta, *_ = np.linalg.lstsq(UX, UY, rcond=None)
    return beta


def vecchia_fit(data, partition, m=30, box=None, fit_mean=True, maxiter=60,
                factor=1.25, init=None):
    """Maximize the Vecchia likelihood with a generic quasi-Newton optimizer.

    Same transformed parameterization and projection box as the main method;
    sigma0^2 stays a free coordinate (its closed-form profile does not hold
    under the approximate likelihood), beta is profiled by whitened least
    squares inside each evaluation.
    """
    box = box or ProjectionBox()
    from .optimizer import FitConfig
    cfg = FitConfig(fit_mean=fit_mean, expansion_factor=factor, box=box)
    model0, _ = initial_model(data, partition, cfg) if init is None else (init, None)
    structure = build_structure(model0, m)
    X = build_design_matrix(model0, data) if fit_mean else None
    Y = data.y_obs
    n = len(Y)
    pids = model0.free_params()

    def unpack(x):
        mdl = model0.with_free_values(x[1:])
        return mdl.with_sigma0(float(np.exp(x[0])))

    def negloglik(x):
        mdl = unpack(x)
        try:
            coeffs, variances = conditional_moments(mdl, structure)
        except SingularConditioningError:
            return np.inf
        if fit_mean:
            beta = _vecchia_beta(structure, coeffs, variances, X, Y)
            y0 = Y - X @ beta
        else:
            y0 = Y
        u = _whiten(structure, coeffs, variances, y0)
        return 0.5 * (n * np.log(2.0 * np.pi)
                      + float(np.sum(np.log(variances))) + float(u @ u))

    x0 = np.concatenate([[np.log(model0.theta0.sigma2)],
                         model0.free_values_transformed()])
    bounds = [box.bounds_for("sigma2")] + [box.bounds_for(p.name) for p in pids]
    res = scipy.optimize.minimize(negloglik, x0, method="L-BFGS-B",
                                  bounds=bounds,
                                  options={"maxiter": maxiter, "ftol": 1e-11})
    if not np.all(np.isfinite(res.x)):
        raise OptimizerFailureError(f"Vecchia fit failed: {res.message}")
    mdl = unpack(res.x)
    if fit_mean:
        coeffs, variances = conditional_moments(mdl, structure)
        beta = _vecchia_beta(structure, coeffs, variances, X, Y)
        mdl = replace(mdl, beta=beta.reshape(partition.q, -1))
    return mdl, res


def equal_split_partition(grid, k):
    """k vertical strips of near-equal width."""
    if k < 1:
        raise InvalidParameterError(f"need k >= 1 strips, got {k}")
    edges = [round(j * grid.n2 / k) for j in range(k + 1)]
    labels = np.zeros((grid.n1, grid.n2), dtype=np.int64)
    for j in range(k):
        labels[:, edges[j]:edges[j + 1]] = j + 1
    labels[~grid.mask] = 0
    from .grids import compact_partition
    return compact_partition(labels, grid.mask)
