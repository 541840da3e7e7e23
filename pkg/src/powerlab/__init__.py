"""Momentum-accelerated power methods with a dense eigensolver oracle."""

from .core import (AnnihilatedVectorError, DimensionError, EigenEstimate,
                   NotSymmetricError, PowerLabError, SolveReport, StopRule,
                   hardt_price_check, normalize, oracle_eigh, perturbation_norm,
                   random_unit, rayleigh_quotient, read_matrix, sin2_error,
                   write_matrix)
from .matgen import (GeneratedInstance, Spectrum, haar_orthogonal,
                     synth_covariance)
from .solvers import (DMPowerConfig, MomentumConfig, check_rho_precision,
                      dmpower, lanczos, power_method, power_momentum,
                      powerm_bound, practical_J_bound, simultaneous_iteration)
from .streaming import (SampleStream, StreamConfig, StreamExhausted,
                        batch_estimate, dmstream, empirical_variance_norm,
                        log_error_metric, minibatch_power_momentum, oja,
                        stochastic_power)
from .clustering import (ClusterResult, PointSet, affinity, dpic, kmeans,
                         make_circles, make_moons, normalize_affinity,
                         schur_deflate)

__version__ = "0.1.0"
