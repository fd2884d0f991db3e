"""FFT-based covariance operators on the embedding torus.

Every stationary term acts by scatter -> forward real FFT -> multiply by a
spectral table -> inverse FFT -> gather, one transform round-trip per term.
The model covariance is defined as the torus covariance of the embedding
lattice, so these products are exact under the model, not approximations.

A CirculantOperator is immutable with respect to parameters: build a fresh
one after any parameter change.  Matvecs allocate their own scratch, so
concurrent read-only evaluations match serial results.
"""

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError, UnknownKindError, UnknownParameterError
from .grids import DataField
from .model import PARAM_NAMES, mean_vector
from .spectral import qm_density, qm_density_grad

PRECONDITIONERS = ("g1", "g2", "g3", "g4")


class CirculantOperator:
    """Matvec engine for K(theta), its parameter derivatives and g1-g4."""

    def __init__(self, model):
        self.model = model
        self.dims = model.embed.dims
        grid = model.grid
        self._obs_r, self._obs_c = grid.obs_rows_cols()
        self.n_obs = grid.n_obs
        # per-segment views into the compacted observation vector
        weights = model.partition.segment_weights(grid) if model.q else []
        self._seg_pos = [np.nonzero(w)[0] for w in weights]
        self._seg_r = [self._obs_r[p] for p in self._seg_pos]
        self._seg_c = [self._obs_c[p] for p in self._seg_pos]

        self._f = [qm_density(model.params_of(i), self.dims)
                   for i in range(model.q + 1)]
        self._grad_cache = {}
        self.roundtrips = 0  # transform round-trips performed, for cost checks

    # -- spectral tables ----------------------------------------------------

    def density(self, process):
        return self._f[process]

    def density_grad(self, process, name):
        if name not in PARAM_NAMES:
            raise UnknownParameterError(f"no parameter named {name!r}")
        if process < 0 or process > self.model.q:
            raise UnknownParameterError(f"no process {process} in this model")
        key = (process, name)
        if key not in self._grad_cache:
            grads = qm_density_grad(self.model.params_of(process), self.dims)
            for n, gfield in zip(PARAM_NAMES, grads):
                self._grad_cache[(process, n)] = gfield
        return self._grad_cache[key]

    # -- core round-trip ----------------------------------------------------

    def _roundtrip(self, table_half, rows, cols, values, out_rows, out_cols):
        """Scatter `values` at (rows, cols), apply the symbol, gather."""
        z = np.zeros(self.dims)
        z[rows, cols] = values
        w = np.fft.irfft2(np.fft.rfft2(z) * table_half, s=self.dims)
        self.roundtrips += 1
        return w[out_rows, out_cols]

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_obs,):
            raise DimensionMismatchError(
                f"expected vector of length {self.n_obs}, got shape {x.shape}")
        return x

    # -- operators ----------------------------------------------------------

    def cov_matvec(self, x):
        """[K x] over observed pixels in q+1 transform round-trips."""
        x = self._check_x(x)
        out = self._roundtrip(self._f[0].half, self._obs_r, self._obs_c, x,
                              self._obs_r, self._obs_c)
        for i in range(1, self.model.q + 1):
            pos, r, c = self._seg_pos[i - 1], self._seg_r[i - 1], self._seg_c[i - 1]
            if len(pos) == 0:
                continue
            out[pos] += self._roundtrip(self._f[i].half, r, c, x[pos], r, c)
        return out

    def dcov_matvec(self, process, name, x):
        """[dK/dtheta x] for one natural parameter of one process.

        Only the addressed process contributes: the unweighted global term
        for process 0, the segment-masked term otherwise.
        """
        x = self._check_x(x)
        table = self.density_grad(process, name).half
        if process == 0:
            return self._roundtrip(table, self._obs_r, self._obs_c, x,
                                   self._obs_r, self._obs_c)
        out = np.zeros(self.n_obs)
        pos, r, c = self._seg_pos[process - 1], self._seg_r[process - 1], self._seg_c[process - 1]
        if len(pos):
            out[pos] = self._roundtrip(table, r, c, x[pos], r, c)
        return out

    def param_matvec(self, pid, x):
        """dK matvec for a free-parameter id, natural scale ('phi' -> sigma2_i)."""
        name = "sigma2" if pid.name == "phi" else pid.name
        return self.dcov_matvec(pid.process, name, x)

    def precond_matvec(self, kind, x):
        """Apply one of the inverse-density preconditioners g1..g4.

        Location-dependent kinds are symmetrized as sum_i W_i G_i W_i so the
        operator is symmetric positive definite on the observed subspace.
        """
        x = self._check_x(x)
        if kind not in PRECONDITIONERS:
            raise UnknownKindError(f"preconditioner must be one of {PRECONDITIONERS}")
        if kind in ("g2", "g3", "g4") and self.model.q == 0:
            raise InvalidParameterError(f"{kind} needs at least one local process")

        out = np.zeros(self.n_obs)
        if kind in ("g1", "g3"):
            out += self._roundtrip(1.0 / self._f[0].half, self._obs_r, self._obs_c,
                                   x, self._obs_r, self._obs_c)
        if kind in ("g2", "g3"):
            for i in range(1, self.model.q + 1):
                pos, r, c = self._seg_pos[i - 1], self._seg_r[i - 1], self._seg_c[i - 1]
                if len(pos) == 0:
                    continue
                out[pos] += self._roundtrip(1.0 / self._f[i].half, r, c, x[pos], r, c)
        if kind == "g4":
            total = self.model.q * self._f[0].half + sum(
                self._f[i].half for i in range(1, self.model.q + 1))
            out += self._roundtrip(1.0 / total, self._obs_r, self._obs_c, x,
                                   self._obs_r, self._obs_c)
        return out

    def preconditioner(self, kind):
        """Bound callable for the PCG solver, or None for 'none'."""
        if kind in (None, "none"):
            return None
        return lambda v: self.precond_matvec(kind, v)


# ---------------------------------------------------------------------------
# exact simulation


def _field_rng(seed, process):
    # counter-based generator keyed by (seed, process): adding processes
    # never perturbs earlier draws
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(0, process))))


def _sample_stationary(density, rng):
    """One exact draw of a stationary field on the embedding torus.

    One complex standard-normal draw per frequency; the real part of the
    inverse transform of sqrt(M f) * eps has covariance C exactly (the
    imaginary part is an independent second draw, unused here).
    """
    m1, m2 = density.dims
    scale = np.sqrt(density.values * (m1 * m2))
    eps = rng.standard_normal((m1, m2)) + 1j * rng.standard_normal((m1, m2))
    return np.fft.ifft2(scale * eps).real


def sample_field(model, seed, covariates=(), return_components=False):
    """Simulate Y = X beta + Z0 + sum_i w_i Z_i on the observation window.

    Deterministic given `seed`; each process draws from its own keyed
    stream.  Unobserved pixels are NaN in the returned DataField.
    """
    grid = model.grid
    n1, n2 = grid.n1, grid.n2
    components = []
    for i in range(model.q + 1):
        f = qm_density(model.params_of(i), model.embed.dims)
        z = _sample_stationary(f, _field_rng(seed, i))[:n1, :n2]
        components.append(z)

    total = components[0].copy()
    if model.q:
        labels = model.partition.labels
        for i in range(1, model.q + 1):
            w = labels == i
            total[w] += components[i][w]

    values = np.where(grid.mask, total, np.nan)
    data = DataField(grid, values, tuple(covariates))
    if model.beta is not None:
        mu = mean_vector(model, data)
        values = values.copy()
        values[grid.mask] += mu
        data = DataField(grid, values, tuple(covariates))
    if return_components:
        return data, components
    return data
