"""Shared builders for randomized test cases."""

import numpy as np

from nsgp.grids import GridGeometry, compact_partition
from nsgp.model import make_model
from nsgp.spectral import QuasiMaternParams, covariance_from_density, qm_density


def rand_params(rng, tau_max=0.7):
    """Log-uniform draw well inside the projection box."""
    return QuasiMaternParams(
        sigma2=float(np.exp(rng.uniform(-1.5, 1.5))),
        alpha=float(np.exp(rng.uniform(np.log(0.08), np.log(3.0)))),
        nu=float(np.exp(rng.uniform(np.log(0.15), np.log(3.0)))),
        tau=float(rng.uniform(0.03, tau_max)),
    )


def rand_grid(rng, max_side=8, allow_mask=True):
    n1 = int(rng.integers(3, max_side + 1))
    n2 = int(rng.integers(3, max_side + 1))
    if allow_mask and rng.random() < 0.5:
        mask = rng.random((n1, n2)) > 0.25
        if mask.sum() < 4:
            mask[:2, :2] = True
    else:
        mask = np.ones((n1, n2), dtype=bool)
    return GridGeometry(n1, n2, mask)


def rand_partition(rng, grid, q):
    """q random segments; not necessarily contiguous, which the operators
    never require."""
    labels = np.zeros((grid.n1, grid.n2), dtype=np.int64)
    obs = np.argwhere(grid.mask)
    assign = rng.integers(0, q, size=len(obs))
    assign[:q] = np.arange(q)  # keep every segment non-empty
    for (r, c), a in zip(obs, assign):
        labels[r, c] = a + 1
    return compact_partition(labels, grid.mask)


def rand_model(rng, q=None, max_side=8, factor=1.25, beta=False, n_cov=0):
    grid = rand_grid(rng, max_side)
    if q is None:
        q = int(rng.integers(0, 4))
    part = rand_partition(rng, grid, max(q, 1))
    theta = [rand_params(rng) for _ in range(q)] if q else []
    b = None
    if beta:
        b = rng.normal(size=(part.q, 1 + n_cov))
    return make_model(grid, part, rand_params(rng), theta, beta=b, factor=factor)


def brute_force_cov(model):
    """Dense covariance by explicit pairwise table lookups (scalar loop)."""
    grid = model.grid
    r, c = grid.obs_rows_cols()
    m1, m2 = model.embed.dims
    labels = model.partition.labels[grid.mask]
    tables = [covariance_from_density(qm_density(model.params_of(i), (m1, m2)))
              for i in range(model.q + 1)]
    n = grid.n_obs
    K = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            dr = (r[a] - r[b]) % m1
            dc = (c[a] - c[b]) % m2
            K[a, b] = tables[0][dr, dc]
            if model.q and labels[a] == labels[b]:
                K[a, b] += tables[labels[a]][dr, dc]
    return K
