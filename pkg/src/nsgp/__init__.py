"""Partitioned non-stationary Gaussian process estimation on gridded data.

The field is modeled as a global stationary process plus locally stationary
processes on partition segments, all with quasi-Matern spectral densities.
Fitting uses FFT circulant matrix-vector products, preconditioned conjugate
gradient and stochastic score equations; partitions are selected by
LRT-driven block merging with BIC.  A dense oracle provides exact reference
computations at desk scale.
"""

from .baselines import equal_split_partition, vecchia_fit, vecchia_loglik
from .circulant import CirculantOperator, sample_field
from .grids import (DataField, EmbeddingGeometry, GridGeometry, Partition,
                    embed_dims, read_grid_file, read_partition_file,
                    single_segment_partition, write_grid_file,
                    write_partition_file)
from .model import (NonStatModel, ParamId, ProjectionBox, build_design_matrix,
                    make_model)
from .optimizer import FitConfig, FitResult, fit
from .oracle import (ORACLE_CAP, dense_mle, exact_loglik, exact_score,
                     fisher_information, likelihood_gain)
from .partition_select import (CandidateRun, base_partition, bic_select,
                               candidate_pool, generate_candidate, rand_index)
from .pcg import SolveReport, pcg_solve
from .score import (ProbeSet, ScoreEstimate, SolverConfig, gls_beta,
                    hadamard_probes, make_probes, profile_sigma0,
                    stochastic_score)
from .spectral import (QuasiMaternParams, SpectralField, combined_density,
                       covariance_from_density, qm_density, qm_density_grad)

__version__ = "0.1.0"

__all__ = [
    "CandidateRun", "CirculantOperator", "DataField", "EmbeddingGeometry",
    "FitConfig", "FitResult", "GridGeometry", "NonStatModel", "ORACLE_CAP",
    "ParamId", "Partition", "ProbeSet", "ProjectionBox", "QuasiMaternParams",
    "ScoreEstimate", "SolveReport", "SolverConfig", "SpectralField",
    "base_partition", "bic_select", "build_design_matrix", "candidate_pool",
    "combined_density", "covariance_from_density", "dense_mle", "embed_dims",
    "equal_split_partition", "exact_loglik", "exact_score", "fisher_information",
    "fit", "generate_candidate", "gls_beta", "hadamard_probes",
    "likelihood_gain", "make_model", "make_probes", "pcg_solve",
    "profile_sigma0", "qm_density", "qm_density_grad", "rand_index",
    "read_grid_file", "read_partition_file", "sample_field",
    "single_segment_partition", "stochastic_score", "vecchia_fit",
    "vecchia_loglik", "write_grid_file", "write_partition_file",
]
