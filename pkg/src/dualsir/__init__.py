"""Bayesian inference for a two-pathogen stochastic SIR system.

Joint estimation of infection dynamics from weekly aggregate infection
reports and sparse virological test counts, via the linear noise
approximation, a marginal Kalman filter, and parallel-tempering MCMC.
"""

from .model import (FixedConstants, KineticParams, ReactionNetwork,
                    build_network, propensities, aggregate_observation_vector)
from .lna import (IntegratorConfig, LnaDivergenceError, macroscopic_rhs,
                  jacobian_A, diffusion_B, covariance_rhs, integrate_lna,
                  floor_covariance)
from .filtering import (AuxParams, Dataset, AugmentedMoments, FilterTrace,
                        FilterError, init_filter, forecast, analysis_update,
                        marginal_log_likelihood, sample_smoothed_states,
                        virological_log_likelihood, one_step_ahead_predictive)
from .ssa import Trajectory, simulate, simulate_ensemble, generate_synthetic_dataset
from .posterior import (PriorConfig, PosteriorModel, log_prior, log_posterior,
                        sample_prior, to_constrained, to_unconstrained)
from .sampler import SamplerConfig, Archive, run, swap_sweep, geometric_ladder

__version__ = "0.1.0"
