"""Grid geometry, observation masks, partitions and grid-file I/O.

Pixel ordering is row-major everywhere.  Vectors over observations use
mask-compacted ordering: the observed pixels taken in row-major order.

Grid file format: first line ``n1 n2``, then n1*n2 whitespace-separated
values in row-major order with the token ``NA`` marking unobserved pixels.
Partition files use the same header with integer labels and ``0`` for
unobserved pixels.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InvalidParameterError, ValidationError


@dataclass(frozen=True)
class GridGeometry:
    """Observation lattice dimensions and the observed-pixel mask."""

    n1: int
    n2: int
    mask: np.ndarray  # bool, shape (n1, n2)

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise InvalidParameterError(f"grid dims must be >= 1, got {self.n1}x{self.n2}")
        if self.mask.shape != (self.n1, self.n2) or self.mask.dtype != np.bool_:
            raise InvalidParameterError("mask must be a bool array of shape (n1, n2)")
        if self.n_obs < 1:
            raise InvalidParameterError("grid has no observed pixels")

    @property
    def n_obs(self):
        return int(self.mask.sum())

    def obs_rows_cols(self):
        """Row/column indices of observed pixels in mask-compacted order."""
        r, c = np.nonzero(self.mask)
        return r, c

    @staticmethod
    def full(n1, n2):
        return GridGeometry(n1, n2, np.ones((n1, n2), dtype=bool))


@dataclass(frozen=True)
class EmbeddingGeometry:
    """FFT-friendly embedding lattice enclosing the observation grid."""

    m1: int
    m2: int
    expansion_factor: float = 1.25

    @property
    def dims(self):
        return (self.m1, self.m2)


def _is_smooth(n):
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


def next_smooth(n):
    """Smallest integer >= n whose only prime factors are 2, 3 and 5."""
    m = max(int(n), 1)
    while not _is_smooth(m):
        m += 1
    return m


def embed_dims(n1, n2, factor=1.25):
    """Embedding lattice: smallest {2,3,5}-smooth sizes >= factor * n_k."""
    if factor < 1.0:
        raise InvalidParameterError(f"expansion factor must be >= 1, got {factor}")
    m1 = next_smooth(int(np.ceil(factor * n1 - 1e-9)))
    m2 = next_smooth(int(np.ceil(factor * n2 - 1e-9)))
    return EmbeddingGeometry(m1, m2, factor)


@dataclass(frozen=True)
class Partition:
    """Per-pixel segment labels: 1..q on observed pixels, 0 elsewhere."""

    labels: np.ndarray  # int, shape (n1, n2)
    q: int
    base_block_size: tuple | None = None

    def validate(self, grid):
        if self.labels.shape != grid.mask.shape:
            raise GridMismatchError(
                f"partition shape {self.labels.shape} vs grid {grid.mask.shape}")
        obs = self.labels[grid.mask]
        if obs.min(initial=1) < 1 or obs.max(initial=1) > self.q:
            raise ValidationError("observed pixels must carry labels in 1..q")
        present = np.unique(obs)
        if len(present) != self.q:
            raise ValidationError(
                f"expected {self.q} non-empty segments, found {len(present)}")

    def segment_weights(self, grid):
        """List of boolean masks over the compacted observation vector."""
        obs = self.labels[grid.mask]
        return [obs == i for i in range(1, self.q + 1)]


def compact_partition(labels, mask, base_block_size=None):
    """Relabel segments to contiguous 1..q (ordered by first pixel), drop empties."""
    labels = np.asarray(labels)
    out = np.zeros_like(labels, dtype=np.int64)
    obs_vals = labels[mask]
    order = []
    seen = set()
    for v in obs_vals:
        if v not in seen:
            seen.add(v)
            order.append(v)
    remap = {v: i + 1 for i, v in enumerate(order)}
    for v, i in remap.items():
        out[(labels == v) & mask] = i
    return Partition(out, q=len(order), base_block_size=base_block_size)


def single_segment_partition(grid):
    labels = np.where(grid.mask, 1, 0).astype(np.int64)
    return Partition(labels, q=1)


@dataclass(frozen=True)
class DataField:
    """Observed values on a partial grid plus covariate fields."""

    grid: GridGeometry
    values: np.ndarray                 # shape (n1, n2); NaN where unobserved
    covariates: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.values.shape != self.grid.mask.shape:
            raise GridMismatchError("values shape does not match grid")
        if not np.all(np.isfinite(self.values[self.grid.mask])):
            raise ValidationError("observed values must be finite")
        for k, cov in enumerate(self.covariates):
            if cov.shape != self.grid.mask.shape:
                raise GridMismatchError(f"covariate {k} shape does not match grid")
            if not np.all(np.isfinite(cov[self.grid.mask])):
                raise ValidationError(f"covariate {k} has non-finite observed values")

    @property
    def y_obs(self):
        return self.values[self.grid.mask]

    def covariates_obs(self):
        return [cov[self.grid.mask] for cov in self.covariates]


# ---------------------------------------------------------------------------
# grid files


def write_grid_file(path, values, mask):
    """Write one field: `n1 n2` header then row-major values, NA if masked out."""
    values = np.asarray(values)
    n1, n2 = values.shape
    with open(path, "w") as fh:
        fh.write(f"{n1} {n2}\n")
        for r in range(n1):
            toks = []
            for c in range(n2):
                if mask[r, c]:
                    toks.append(repr(float(values[r, c])))
                else:
                    toks.append("NA")
            fh.write(" ".join(toks) + "\n")


def read_grid_file(path):
    """Read one field; returns (values with NaN at NA, mask)."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValidationError(f"{path}: missing 'n1 n2' header")
    try:
        n1, n2 = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise ValidationError(f"{path}: bad header {tokens[:2]}") from exc
    body = tokens[2:]
    if len(body) != n1 * n2:
        raise ValidationError(
            f"{path}: expected {n1 * n2} values, found {len(body)}")
    values = np.empty(n1 * n2)
    mask = np.empty(n1 * n2, dtype=bool)
    for i, tok in enumerate(body):
        if tok == "NA":
            values[i] = np.nan
            mask[i] = False
        else:
            try:
                values[i] = float(tok)
            except ValueError as exc:
                raise ValidationError(f"{path}: bad value {tok!r} at index {i}") from exc
            mask[i] = True
    return values.reshape(n1, n2), mask.reshape(n1, n2)


def write_partition_file(path, partition):
    labels = partition.labels
    n1, n2 = labels.shape
    with open(path, "w") as fh:
        fh.write(f"{n1} {n2}\n")
        for r in range(n1):
            fh.write(" ".join(str(int(v)) for v in labels[r]) + "\n")


def read_partition_file(path, grid=None):
    """Read labels; 0 marks unobserved.  Compacted against `grid` if given."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValidationError(f"{path}: missing 'n1 n2' header")
    n1, n2 = int(tokens[0]), int(tokens[1])
    body = tokens[2:]
    if len(body) != n1 * n2:
        raise ValidationError(f"{path}: expected {n1 * n2} labels, found {len(body)}")
    labels = np.array([int(t) for t in body], dtype=np.int64).reshape(n1, n2)
    if grid is None:
        grid = GridGeometry(n1, n2, labels > 0)
    else:
        if (n1, n2) != (grid.n1, grid.n2):
            raise GridMismatchError(f"{path}: partition dims {(n1, n2)} vs grid")
        if np.any((labels > 0) != grid.mask):
            raise GridMismatchError(f"{path}: partition support differs from grid mask")
    return compact_partition(labels, grid.mask), grid
