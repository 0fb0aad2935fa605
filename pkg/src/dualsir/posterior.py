"""Priors, parameter-space transforms, and posterior assembly.

The sampled quantities are (beta1, beta2, sigma1, sigma2, c0, Sigma, r,
c, nu, v) plus the initial-state proportions x0/Omega on the 8-simplex.
The sampler works on an unconstrained 17-vector:

    index  0..3   log beta1, log beta2, log sigma1, log sigma2
    index  4..5   log c0, log Sigma
    index  6      logit r
    index  7      log c
    index  8      logit nu
    index  9      log v
    index 10..16  additive-log-ratio coordinates of x0/Omega

kappa is never sampled; it is tied to c0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, log

import numpy as np
from scipy.special import expit, gammaln, logit

from .model import FixedConstants, KineticParams
from .filtering import (AuxParams, Dataset, FilterError,
                        marginal_log_likelihood, sample_smoothed_states,
                        virological_log_likelihood)
from .lna import IntegratorConfig

__all__ = [
    "PriorConfig", "PARAM_NAMES", "N_PARAMS", "BLOCK_KINETIC", "BLOCK_AUX",
    "BLOCK_X0", "to_unconstrained", "to_constrained", "log_jacobian",
    "log_prior", "sample_prior", "log_posterior", "PosteriorModel",
    "PosteriorEval",
]

N_PARAMS = 17
PARAM_NAMES = (
    "beta1", "beta2", "sigma1", "sigma2", "c0", "Sigma", "r", "c", "nu", "v",
    "x_ss", "x_is", "x_rs", "x_si", "x_ri", "x_sr", "x_ir", "x_rr",
)

BLOCK_KINETIC = np.arange(0, 4)
BLOCK_AUX = np.arange(4, 10)
BLOCK_X0 = np.arange(10, 17)
DEFAULT_BLOCKS = (BLOCK_KINETIC, BLOCK_AUX, BLOCK_X0)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters; (shape, scale) parameterization with mean shape*scale."""

    beta_shape: float = 20.0
    beta_scale: float = 3.0
    sigma_shape: float = 10.0
    sigma_scale: float = 0.1
    v_shape: float = 10.0
    v_scale: float = 0.1
    c0_shape: float = 1.0
    c0_scale: float = 0.01
    obsvar_shape: float = 1.0
    obsvar_scale: float = 0.01
    c_shape: float = 1.0
    c_scale: float = 0.01
    dirichlet_alpha: float = 1.0


def _gamma_logpdf(x, shape, scale):
    if x <= 0:
        return -np.inf
    return ((shape - 1.0) * log(x) - x / scale
            - lgamma(shape) - shape * log(scale))


def _uniform01_logpdf(x):
    return 0.0 if 0.0 < x < 1.0 else -np.inf


def _dirichlet_logpdf(p, alpha):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        return -np.inf
    n = p.size
    lognorm = gammaln(n * alpha) - n * gammaln(alpha)
    return float(lognorm + (alpha - 1.0) * np.sum(np.log(p)))


def _alr_forward(p):
    """Simplex (8) -> unconstrained (7), reference coordinate last."""
    return np.log(p[:7]) - np.log(p[7])


def _alr_inverse(u):
    """Unconstrained (7) -> simplex (8)."""
    e = np.exp(u - np.max(np.append(u, 0.0)))
    e8 = np.exp(-np.max(np.append(u, 0.0)))
    total = e.sum() + e8
    p = np.empty(8)
    p[:7] = e / total
    p[7] = e8 / total
    return p


def to_unconstrained(theta: KineticParams, tau: AuxParams,
                     k: FixedConstants) -> np.ndarray:
    z = np.empty(N_PARAMS)
    z[0] = log(theta.beta1)
    z[1] = log(theta.beta2)
    z[2] = log(theta.sigma1)
    z[3] = log(theta.sigma2)
    z[4] = log(theta.c0)
    z[5] = log(tau.sigma_obs)
    z[6] = logit(tau.r)
    z[7] = log(tau.c)
    z[8] = logit(tau.nu)
    z[9] = log(tau.v)
    z[10:] = _alr_forward(theta.x0 / k.omega)
    return z


def to_constrained(z, k: FixedConstants):
    z = np.asarray(z, dtype=float)
    if np.any(z[:6] > 700.0) or np.any(z[7:10] > 700.0):
        raise ValueError("unconstrained coordinates overflow")
    p = _alr_inverse(z[10:])
    c0 = float(np.exp(z[4]))
    theta = KineticParams(
        beta1=float(np.exp(z[0])), beta2=float(np.exp(z[1])),
        sigma1=float(np.exp(z[2])), sigma2=float(np.exp(z[3])),
        x0=k.omega * p, c0=c0)
    tau = AuxParams.tied(
        c=float(np.exp(z[7])), nu=float(expit(z[8])), r=float(expit(z[6])),
        sigma_obs=float(np.exp(z[5])), v=float(np.exp(z[9])), c0=c0)
    return theta, tau


def log_jacobian(z) -> float:
    """log |dconstrained/dz| for the transform above.

    Log coordinates contribute z_i; logit coordinates contribute
    log s(z) + log(1 - s(z)); the additive-log-ratio block contributes the
    sum of the logs of all 8 simplex proportions.
    """
    z = np.asarray(z, dtype=float)
    total = z[0] + z[1] + z[2] + z[3] + z[4] + z[5] + z[7] + z[9]
    for i in (6, 8):
        s = expit(z[i])
        total += log(s) + log(1.0 - s)
    p = _alr_inverse(z[10:])
    total += float(np.sum(np.log(p)))
    return total


def log_prior(theta: KineticParams, tau: AuxParams, k: FixedConstants,
              hyper: PriorConfig = PriorConfig()) -> float:
    """Joint prior log-density at constrained-space values."""
    total = 0.0
    total += _gamma_logpdf(theta.beta1, hyper.beta_shape, hyper.beta_scale)
    total += _gamma_logpdf(theta.beta2, hyper.beta_shape, hyper.beta_scale)
    total += _gamma_logpdf(theta.sigma1, hyper.sigma_shape, hyper.sigma_scale)
    total += _gamma_logpdf(theta.sigma2, hyper.sigma_shape, hyper.sigma_scale)
    total += _gamma_logpdf(theta.c0, hyper.c0_shape, hyper.c0_scale)
    total += _gamma_logpdf(tau.sigma_obs, hyper.obsvar_shape, hyper.obsvar_scale)
    total += _uniform01_logpdf(tau.r)
    total += _gamma_logpdf(tau.c, hyper.c_shape, hyper.c_scale)
    total += _uniform01_logpdf(tau.nu)
    total += _gamma_logpdf(tau.v, hyper.sigma_shape, hyper.sigma_scale)
    total += _dirichlet_logpdf(theta.x0 / k.omega, hyper.dirichlet_alpha)
    return total


def sample_prior(rng: np.random.Generator, k: FixedConstants,
                 hyper: PriorConfig = PriorConfig()):
    """One independent draw of (theta, tau) from the prior."""
    c0 = rng.gamma(hyper.c0_shape, hyper.c0_scale)
    p = rng.dirichlet(np.full(8, hyper.dirichlet_alpha))
    theta = KineticParams(
        beta1=rng.gamma(hyper.beta_shape, hyper.beta_scale),
        beta2=rng.gamma(hyper.beta_shape, hyper.beta_scale),
        sigma1=rng.gamma(hyper.sigma_shape, hyper.sigma_scale),
        sigma2=rng.gamma(hyper.sigma_shape, hyper.sigma_scale),
        x0=k.omega * p, c0=c0)
    tau = AuxParams.tied(
        c=rng.gamma(hyper.c_shape, hyper.c_scale),
        nu=rng.uniform(0.0, 1.0), r=rng.uniform(0.0, 1.0),
        sigma_obs=rng.gamma(hyper.obsvar_shape, hyper.obsvar_scale),
        v=rng.gamma(hyper.sigma_shape, hyper.sigma_scale), c0=c0)
    return theta, tau


def log_posterior(theta: KineticParams, tau: AuxParams, data: Dataset,
                  seed: int, hyper: PriorConfig = PriorConfig(),
                  cfg: IntegratorConfig = IntegratorConfig(),
                  use_virological: bool = True):
    """Joint log-posterior; returns (value, sampled states, trace).

    The latent-path seed is part of the signature so evaluations are
    reproducible (the virological term is pseudo-marginal in character).
    """
    lp = log_prior(theta, tau, data.constants, hyper)
    if not np.isfinite(lp):
        return -np.inf, None, None
    ll_y, trace = marginal_log_likelihood(data, theta, tau, cfg=cfg)
    if not np.isfinite(ll_y):
        return -np.inf, None, trace
    try:
        x, d = sample_smoothed_states(trace, seed)
    except (FilterError, ValueError):
        # analysis covariance broken beyond the flooring tolerance
        return -np.inf, None, trace
    if use_virological:
        ll_n = virological_log_likelihood(data.n1, data.n2, data.n3,
                                          x, d, tau, data.constants)
    else:
        ll_n = 0.0
    total = lp + ll_y + ll_n
    if not np.isfinite(total):
        return -np.inf, (x, d), trace
    return total, (x, d), trace


@dataclass
class PosteriorEval:
    """Cached pieces of one posterior evaluation (for seed refresh/archive)."""

    log_post: float
    log_prior_unconstrained: float    # prior + transform Jacobian
    log_lik_y: float
    log_lik_n: float
    trace: object = None
    states: object = None             # (x, d) sampled latent path
    seed: int = 0


class PosteriorModel:
    """Unconstrained-space posterior over the 17 sampled coordinates.

    The object the sampler drives: ``logpdf`` evaluates at a parameter
    vector with a given latent-path seed; ``refresh`` re-draws only the
    latent path (the marginal-likelihood filter pass is reused).
    """

    def __init__(self, data: Dataset, hyper: PriorConfig = PriorConfig(),
                 integrator: IntegratorConfig = IntegratorConfig(),
                 use_virological: bool = True):
        self.data = data
        self.constants = data.constants
        self.hyper = hyper
        self.integrator = integrator
        self.use_virological = use_virological

    @property
    def dim(self) -> int:
        return N_PARAMS

    @property
    def blocks(self):
        return DEFAULT_BLOCKS

    def logpdf(self, z, seed: int):
        try:
            theta, tau = to_constrained(z, self.constants)
        except (ValueError, OverflowError):
            return -np.inf, None
        lp0 = log_prior(theta, tau, self.constants, self.hyper)
        if not np.isfinite(lp0):
            return -np.inf, None
        lp0 += log_jacobian(z)
        ll_y, trace = marginal_log_likelihood(self.data, theta, tau,
                                              cfg=self.integrator)
        if not np.isfinite(ll_y):
            return -np.inf, None
        try:
            x, d = sample_smoothed_states(trace, seed)
        except (FilterError, ValueError):
            return -np.inf, None
        if self.use_virological:
            ll_n = virological_log_likelihood(
                self.data.n1, self.data.n2, self.data.n3, x, d, tau,
                self.constants)
        else:
            ll_n = 0.0
        total = lp0 + ll_y + ll_n
        if not np.isfinite(total):
            return -np.inf, None
        ev = PosteriorEval(log_post=total, log_prior_unconstrained=lp0,
                           log_lik_y=ll_y, log_lik_n=ll_n, trace=trace,
                           states=(x, d), seed=seed)
        return total, ev

    def refresh(self, z, seed: int, ev: PosteriorEval):
        """Re-draw the latent path under a new seed, reusing the filter pass."""
        if ev is None or ev.trace is None:
            return self.logpdf(z, seed)
        theta, tau = to_constrained(z, self.constants)
        try:
            x, d = sample_smoothed_states(ev.trace, seed)
        except (FilterError, ValueError):
            return -np.inf, None
        if self.use_virological:
            ll_n = virological_log_likelihood(
                self.data.n1, self.data.n2, self.data.n3, x, d, tau,
                self.constants)
        else:
            ll_n = 0.0
        total = ev.log_prior_unconstrained + ev.log_lik_y + ll_n
        if not np.isfinite(total):
            return -np.inf, None
        new = PosteriorEval(log_post=total,
                            log_prior_unconstrained=ev.log_prior_unconstrained,
                            log_lik_y=ev.log_lik_y, log_lik_n=ll_n,
                            trace=ev.trace, states=(x, d), seed=seed)
        return total, new

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        theta, tau = sample_prior(rng, self.constants, self.hyper)
        return to_unconstrained(theta, tau, self.constants)
