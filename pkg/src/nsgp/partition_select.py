"""Candidate-partition generation by LRT-driven block merging, BIC selection
and Rand-index scoring.

Base blocks tile the grid; a candidate run shuffles all edge-adjacent block
pairs once and merges the two segments containing a pair whenever the
likelihood-ratio test cannot reject parameter equality.  Segment likelihoods
are block-independent: a product of dense stationary quasi-Matern likelihoods
over the base blocks, sharing one parameter set per segment.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize
from scipy.stats import chi2

from .errors import (EmptyCandidateListError, GridMismatchError,
                     TooFewObservationsError)
from .grids import Partition, compact_partition, embed_dims
from .model import ProjectionBox, from_transformed, natural_jacobian, to_transformed
from .spectral import QuasiMaternParams, covariance_from_density, qm_density, qm_density_grad

SHUFFLE_STREAM = 2  # spawn key of the pair-shuffle sub-stream

DEFAULT_CUTOFFS = (0.0005, 0.001, 0.002, 0.003, 0.004, 0.005,
                   0.006, 0.007, 0.008, 0.009)
LRT_DOF = 4  # covariance parameters per segment; selection runs on residuals
MIN_SEGMENT_OBS = 25


@dataclass
class BlockGrid:
    """Base-block tiling: floor(n/b) blocks per axis, remainders join the last."""

    grid: object
    block_size: tuple
    shape: tuple                  # blocks per axis before dropping empties
    block_rows: list              # observed pixel rows per surviving block
    block_cols: list
    block_values: list            # residual values per surviving block
    adjacency: list               # index pairs of edge-adjacent blocks
    n_obs: int


def _axis_edges(n, b):
    k = max(n // b, 1)
    edges = [i * b for i in range(k)] + [n]
    return edges


def build_block_grid(grid, residuals, block_size=(10, 10)):
    b1, b2 = block_size
    if b1 > grid.n1 or b2 > grid.n2:
        raise GridMismatchError(f"block size {block_size} exceeds grid "
                                f"{grid.n1}x{grid.n2}")
    e1 = _axis_edges(grid.n1, b1)
    e2 = _axis_edges(grid.n2, b2)
    k1, k2 = len(e1) - 1, len(e2) - 1

    rows, cols, vals = [], [], []
    index_of = -np.ones((k1, k2), dtype=int)
    for i in range(k1):
        for j in range(k2):
            sub = grid.mask[e1[i]:e1[i + 1], e2[j]:e2[j + 1]]
            r, c = np.nonzero(sub)
            if len(r) == 0:
                continue  # a block with no observed pixels is dropped
            r = r + e1[i]
            c = c + e2[j]
            index_of[i, j] = len(rows)
            rows.append(r)
            cols.append(c)
            vals.append(residuals[r, c])

    adjacency = []
    for i in range(k1):
        for j in range(k2):
            a = index_of[i, j]
            if a < 0:
                continue
            if i + 1 < k1 and index_of[i + 1, j] >= 0:
                adjacency.append((a, index_of[i + 1, j]))
            if j + 1 < k2 and index_of[i, j + 1] >= 0:
                adjacency.append((a, index_of[i, j + 1]))

    return BlockGrid(grid, (b1, b2), (k1, k2), rows, cols, vals, adjacency,
                     grid.n_obs)


def base_partition(grid, block_size=(10, 10)):
    """Tile the grid with blocks; every observed pixel gets its block label."""
    dummy = np.zeros((grid.n1, grid.n2))
    bg = build_block_grid(grid, dummy, block_size)
    labels = np.zeros((grid.n1, grid.n2), dtype=np.int64)
    for b in range(len(bg.block_rows)):
        labels[bg.block_rows[b], bg.block_cols[b]] = b + 1
    return compact_partition(labels, grid.mask, base_block_size=tuple(block_size))


class SegmentLikelihood:
    """Dense block-independent likelihood engine with geometry caching.

    Base blocks at different positions with the same local shape and mask
    share their covariance matrix, Cholesky factor and trace terms, so an
    objective evaluation costs one spectral table plus one factorization per
    distinct geometry.
    """

    def __init__(self, blockgrid, box=None, factor=1.25):
        self.bg = blockgrid
        self.box = box or ProjectionBox()
        grid = blockgrid.grid
        self.dims = embed_dims(grid.n1, grid.n2, factor).dims
        self._geo_key = []
        self._geo_lags = {}
        for b in range(len(blockgrid.block_rows)):
            r, c = blockgrid.block_rows[b], blockgrid.block_cols[b]
            r0, c0 = r - r.min(), c - c.min()
            h, w = int(r0.max()) + 1, int(c0.max()) + 1
            local = np.zeros((h, w), dtype=bool)
            local[r0, c0] = True
            key = (h, w, local.tobytes())
            self._geo_key.append(key)
            if key not in self._geo_lags:
                dr = (r0[:, None] - r0[None, :]) % self.dims[0]
                dc = (c0[:, None] - c0[None, :]) % self.dims[1]
                self._geo_lags[key] = (dr, dc)

    def loglik_and_grad(self, x, block_ids):
        """(log L, gradient) on the transformed scale for one segment.

        Blocks sharing a geometry are stacked so the factorization, trace
        terms and quadratic forms run batched per geometry.
        """
        p = from_transformed(x)
        table = covariance_from_density(qm_density(p, self.dims))
        dtables = [covariance_from_density(g)
                   for g in qm_density_grad(p, self.dims)]

        by_geo = {}
        for b in block_ids:
            by_geo.setdefault(self._geo_key[b], []).append(b)

        ll = 0.0
        grad = np.zeros(4)
        for key, blocks in by_geo.items():
            dr, dc = self._geo_lags[key]
            K = table[dr, dc]
            try:
                cho = sla.cho_factor(K, lower=True)
            except np.linalg.LinAlgError:
                return -np.inf, np.zeros(4)
            nb = K.shape[0]
            logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
            Kinv = sla.cho_solve(cho, np.eye(nb))
            Y = np.stack([self.bg.block_values[b] for b in blocks], axis=1)
            U = sla.cho_solve(cho, Y)  # (nb, n_blocks)
            quads = np.einsum("ij,ij->j", Y, U)
            ll += -0.5 * (len(blocks) * (nb * np.log(2.0 * np.pi) + logdet)
                          + float(quads.sum()))
            for a in range(4):
                Ma = dtables[a][dr, dc]
                trace = float(np.sum(Kinv * Ma))
                grad[a] += (0.5 * float(np.einsum("ij,ij->", U, Ma @ U))
                            - 0.5 * len(blocks) * trace)
        return ll, grad * natural_jacobian(p)

    def segment_obs(self, block_ids):
        return sum(len(self.bg.block_values[b]) for b in block_ids)

    def default_start(self, block_ids):
        v = float(np.var(np.concatenate([self.bg.block_values[b] for b in block_ids])))
        p = QuasiMaternParams(max(v, 1e-8), 0.5, 0.5, 0.05)
        return to_transformed(p)


def segment_mle(seglik, block_ids, x0=None, maxiter=80):
    """Maximize the block-independent segment likelihood (L-BFGS-B)."""
    block_ids = tuple(sorted(block_ids))
    if seglik.segment_obs(block_ids) < MIN_SEGMENT_OBS:
        raise TooFewObservationsError(
            f"segment with blocks {block_ids} has fewer than "
            f"{MIN_SEGMENT_OBS} observed pixels")
    if x0 is None:
        x0 = seglik.default_start(block_ids)
    box = seglik.box
    bounds = [box.bounds_for(n) for n in ("sigma2", "alpha", "nu", "tau")]
    x0 = np.array([box.clamp(n, v)
                   for n, v in zip(("sigma2", "alpha", "nu", "tau"), x0)])

    def neg(x):
        ll, g = seglik.loglik_and_grad(x, block_ids)
        return -ll, -g

    res = scipy.optimize.minimize(neg, x0, jac=True, method="L-BFGS-B",
                                  bounds=bounds, options={"maxiter": maxiter})
    ll = -float(res.fun)
    if not np.isfinite(ll):
        ll, _ = seglik.loglik_and_grad(x0, block_ids)
        return np.asarray(x0), float(ll)
    return res.x, ll


class _SegmentTable:
    """Union-find over blocks plus memoized per-segment MLEs."""

    def __init__(self, seglik):
        self.seglik = seglik
        n = len(seglik.bg.block_rows)
        self.parent = list(range(n))
        self.members = {b: frozenset([b]) for b in range(n)}
        self._mle = {}

    def find(self, b):
        while self.parent[b] != b:
            self.parent[b] = self.parent[self.parent[b]]
            b = self.parent[b]
        return b

    def mle(self, root, x0=None):
        key = self.members[root]
        if key not in self._mle:
            self._mle[key] = segment_mle(self.seglik, key, x0)
        return self._mle[key]

    def union(self, ra, rb, joint_fit):
        merged = self.members[ra] | self.members[rb]
        self.parent[rb] = ra
        self.members[ra] = merged
        del self.members[rb]
        self._mle[merged] = joint_fit

    def roots(self):
        return sorted(self.members.keys())


def lrt_merge_pvalue(table, root_a, root_b):
    """p-value of H0: shared parameters across the two segments.

    -2 log Lambda = 2 (logL_a + logL_b - logL_joint), clamped at zero for
    optimizer rounding, compared against chi-square with 4 degrees of
    freedom.  Returns (p_value, joint_fit) so an accepted merge reuses the
    joint optimum as the merged segment's MLE.
    """
    xa, la = table.mle(root_a)
    xb, lb = table.mle(root_b)
    na = table.seglik.segment_obs(table.members[root_a])
    nb = table.seglik.segment_obs(table.members[root_b])
    x0 = (na * np.asarray(xa) + nb * np.asarray(xb)) / (na + nb)
    joint_blocks = table.members[root_a] | table.members[root_b]
    xj, lj = segment_mle(table.seglik, joint_blocks, x0)
    stat = max(0.0, 2.0 * (la + lb - lj))
    pval = float(min(max(chi2.sf(stat, LRT_DOF), 0.0), 1.0))
    return pval, (xj, lj)


@dataclass
class CandidateRun:
    """One LRT merging pass and its block-independent likelihood summary."""

    p_cutoff: float
    seed: int
    partition: Partition
    segment_params: list          # QuasiMaternParams per final segment
    loglik: float
    bic: float
    n_tests: int = 0


def generate_candidate(seglik, p_cutoff, seed):
    """Shuffle all neighbor pairs once; merge whenever H0 is not rejected."""
    bg = seglik.bg
    table = _SegmentTable(seglik)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(SHUFFLE_STREAM,)))
    pairs = list(bg.adjacency)
    rng.shuffle(pairs)

    n_tests = 0
    for a, b in pairs:
        ra, rb = table.find(a), table.find(b)
        if ra == rb:
            continue  # already internal to one segment
        pval, joint_fit = lrt_merge_pvalue(table, ra, rb)
        n_tests += 1
        if pval > p_cutoff:
            table.union(ra, rb, joint_fit)

    roots = table.roots()
    labels = np.zeros((bg.grid.n1, bg.grid.n2), dtype=np.int64)
    loglik = 0.0
    fits = []
    for s, root in enumerate(roots):
        x, ll = table.mle(root)
        loglik += ll
        fits.append((root, from_transformed(x)))
        for b in table.members[root]:
            labels[bg.block_rows[b], bg.block_cols[b]] = s + 1
    part = compact_partition(labels, bg.grid.mask,
                             base_block_size=tuple(bg.block_size))
    # compaction relabels by first pixel appearance; align the fits with it
    obs_labels = labels[bg.grid.mask]
    seen = []
    for v in obs_labels:
        if v not in seen:
            seen.append(v)
    params = [fits[v - 1][1] for v in seen]

    q = part.q
    k = LRT_DOF * q
    bic = -2.0 * loglik + k * np.log(bg.n_obs)
    return CandidateRun(p_cutoff, seed, part, params, loglik, bic, n_tests)


def bic_select(candidates):
    """Minimum-BIC candidate; ties prefer fewer segments, then earlier seed."""
    if not candidates:
        raise EmptyCandidateListError("no candidate partitions to select from")
    best = None
    for cand in candidates:
        key = (cand.bic, cand.partition.q)
        if best is None or key < (best.bic, best.partition.q):
            best = cand
    return best


def rand_index(estimated, truth, grid):
    """Fraction of observed-pixel pairs on which the partitions agree.

    Computed from the pair-count contingency table in O(n + q*q'); no
    pixel-pair loop.
    """
    if estimated.labels.shape != truth.labels.shape:
        raise GridMismatchError("partitions live on different grids")
    e = estimated.labels[grid.mask]
    t = truth.labels[grid.mask]
    if len(e) != len(t) or len(e) < 2:
        raise GridMismatchError("need at least two observed pixels")

    def c2(x):
        return x * (x - 1) // 2

    n = len(e)
    qe, qt = int(e.max()), int(t.max())
    cont = np.bincount((t - 1) * qe + (e - 1), minlength=qe * qt)
    a = np.bincount(t - 1, minlength=qt)
    b = np.bincount(e - 1, minlength=qe)
    same_both = int(np.sum(c2(cont)))
    disagree = (int(np.sum(c2(a))) - same_both) + (int(np.sum(c2(b))) - same_both)
    total = c2(n)
    return (total - disagree) / total


def simple_ols_residuals(data):
    """Residuals of one global linear regression on the covariates."""
    y = data.y_obs
    covs = data.covariates_obs()
    X = np.column_stack([np.ones(len(y))] + covs)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = np.full(data.grid.mask.shape, np.nan)
    resid[data.grid.mask] = y - X @ beta
    return resid


def candidate_pool(data, cutoffs=DEFAULT_CUTOFFS, seeds_per_cutoff=3,
                   base_seed=0, block_size=(10, 10), box=None, factor=1.25):
    """The full candidate ensemble: every cutoff times `seeds_per_cutoff` runs."""
    resid = simple_ols_residuals(data)
    bg = build_block_grid(data.grid, resid, block_size)
    seglik = SegmentLikelihood(bg, box=box, factor=factor)
    out = []
    idx = 0
    for cutoff in cutoffs:
        for _ in range(seeds_per_cutoff):
            out.append(generate_candidate(seglik, cutoff, base_seed + idx))
            idx += 1
    return out
