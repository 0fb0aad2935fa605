"""Marginal Kalman filter over the augmented state [X, D].

Alternating forecast/analysis steps produce the approximate marginal
likelihood of the weekly aggregate reports, per-week analysis
distributions, sampled latent paths, and the negative-binomial likelihood
of the virological test counts.

The X block is propagated between observations by the LNA at
concentration scale (phi = m / Omega, C = V / Omega) and rescaled back to
counts; the scalar background D follows its AR(1) recursion.  The X-D
cross-covariance created by each analysis update is discarded at the next
forecast, keeping the forecast covariance block-diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, log, pi

import numpy as np

from .model import FixedConstants, KineticParams, aggregate_observation_vector
from .lna import IntegratorConfig, LnaDivergenceError, integrate_lna, floor_covariance

__all__ = [
    "AuxParams", "Dataset", "AugmentedMoments", "FilterTrace", "FilterError",
    "init_filter", "forecast", "analysis_update", "marginal_log_likelihood",
    "sample_smoothed_states", "virological_log_likelihood",
    "one_step_ahead_predictive", "negbin_logpmf", "negbin_sample",
]

_MEAN_FLOOR = 1e-8   # floor on negative-binomial means after clamping


class FilterError(RuntimeError):
    """Broken covariance or nonpositive innovation variance."""


@dataclass(frozen=True)
class AuxParams:
    """Auxiliary (non-kinetic) parameters of the observation model."""

    c: float            # background additive constant
    nu: float           # AR(1) coefficient, |nu| < 1
    r: float            # reporting proportion
    sigma_obs: float    # observation variance scale (times Omega^2)
    v: float            # negative-binomial variance-inflation factor
    kappa: float        # background noise scale, tied to the kinetic c0

    def __post_init__(self):
        if not abs(self.nu) < 1:
            raise ValueError("require |nu| < 1")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("require 0 <= r <= 1")
        if self.sigma_obs <= 0 or self.v <= 0:
            raise ValueError("sigma_obs and v must be positive")
        if self.c < 0 or self.kappa < 0:
            raise ValueError("c and kappa must be nonnegative")

    @classmethod
    def tied(cls, c, nu, r, sigma_obs, v, c0):
        """Construct with the kappa = c0 tie applied."""
        return cls(c=c, nu=nu, r=r, sigma_obs=sigma_obs, v=v, kappa=c0)


@dataclass(frozen=True)
class Dataset:
    """Weekly aggregate reports plus (possibly missing) virological counts.

    Missing virological weeks are encoded as NaN in all of n1, n2, n3.
    """

    y: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    times: np.ndarray            # week grid (years)
    constants: FixedConstants

    def __post_init__(self):
        arrays = {}
        for name in ("y", "n1", "n2", "n3", "times"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arrays[name])
        m = arrays["y"].size
        if m == 0:
            raise ValueError("dataset is empty")
        for name, arr in arrays.items():
            if arr.shape != (m,):
                raise ValueError(f"{name} must have length {m}")
        if np.any(arrays["y"] < 0):
            raise ValueError("aggregate counts must be nonnegative")
        masks = [np.isnan(arrays[n]) for n in ("n1", "n2", "n3")]
        if not (np.array_equal(masks[0], masks[1])
                and np.array_equal(masks[0], masks[2])):
            raise ValueError("n1, n2, n3 must be missing together")
        for n in ("n1", "n2", "n3"):
            vals = arrays[n][~masks[0]]
            if np.any(vals < 0):
                raise ValueError("virological counts must be nonnegative")
        if np.any(np.diff(arrays["times"]) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_weeks(self) -> int:
        return self.y.size

    @property
    def has_tests(self) -> np.ndarray:
        return ~np.isnan(self.n1)


@dataclass
class AugmentedMoments:
    """Mean and covariance of the augmented state [X (8), D] in counts."""

    mean: np.ndarray             # (9,)
    cov: np.ndarray              # (9, 9)


@dataclass
class FilterTrace:
    times: np.ndarray
    forecast_mean: np.ndarray        # (M, 9)
    forecast_cov: np.ndarray         # (M, 9, 9)
    analysis_mean: np.ndarray        # (M, 9)
    analysis_cov: np.ndarray         # (M, 9, 9)
    innovation_mean: np.ndarray      # (M,)
    innovation_var: np.ndarray       # (M,)
    log_increments: np.ndarray       # (M,)
    ok: bool = True
    failure: str = ""
    n_steps: int = 0
    # cached analysis-covariance square roots for repeated smoothing draws
    smooth_roots: np.ndarray | None = field(default=None, repr=False)

    @property
    def log_likelihood(self) -> float:
        if not self.ok:
            return -np.inf
        total = 0.0
        for inc in self.log_increments:   # left-to-right accumulation
            total += inc
        return total


def _obs_row(tau: AuxParams) -> np.ndarray:
    G = aggregate_observation_vector()
    return tau.r * np.append(G, 1.0)


def init_filter(theta: KineticParams, tau: AuxParams,
                k: FixedConstants) -> AugmentedMoments:
    """Prior moments: m = [x0, Omega c], V = diag(Omega c0 I, Omega^{3/2} kappa)."""
    omega = k.omega
    mean = np.append(theta.x0, omega * tau.c)
    cov = np.zeros((9, 9))
    cov[:8, :8] = omega * theta.c0 * np.eye(8)
    cov[8, 8] = omega ** 1.5 * tau.kappa
    return AugmentedMoments(mean=mean, cov=cov)


def _lna_propagator(theta: KineticParams, k: FixedConstants,
                    cfg: IntegratorConfig):
    """Default X-block propagator: LNA restarted at the analysis moments."""

    def propagate(m8, V8, t0, t1):
        phi = m8 / k.omega
        C = V8 / k.omega
        phi1, C1 = integrate_lna(phi, C, t0, t1, theta, k, cfg)
        return k.omega * phi1, k.omega * C1

    return propagate


def forecast(moments: AugmentedMoments, theta: KineticParams, tau: AuxParams,
             k: FixedConstants, t0: float, t1: float,
             cfg: IntegratorConfig = IntegratorConfig(),
             propagate_x=None) -> AugmentedMoments:
    """Propagate analysis moments from t0 to t1 (forecast step)."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if propagate_x is None:
        propagate_x = _lna_propagator(theta, k, cfg)
    m8, V8 = propagate_x(moments.mean[:8], moments.cov[:8, :8], t0, t1)
    omega = k.omega
    mean = np.empty(9)
    mean[:8] = m8
    mean[8] = omega * tau.c + tau.nu * moments.mean[8]
    cov = np.zeros((9, 9))
    cov[:8, :8] = V8
    cov[8, 8] = tau.nu ** 2 * moments.cov[8, 8] + omega ** 1.5 * tau.kappa
    return AugmentedMoments(mean=mean, cov=cov)


def analysis_update(moments: AugmentedMoments, y: float, tau: AuxParams,
                    k: FixedConstants):
    """Scalar-observation Kalman update; returns (posterior, log-increment)."""
    H = _obs_row(tau)
    V = moments.cov
    VH = V @ H
    innov_var = float(H @ VH) + k.omega ** 2 * tau.sigma_obs
    if not innov_var > 0:
        raise FilterError(f"nonpositive innovation variance {innov_var}")
    innov_mean = float(H @ moments.mean)
    gain = VH / innov_var
    mean = moments.mean + gain * (y - innov_mean)
    cov = V - np.outer(gain, VH)
    cov = 0.5 * (cov + cov.T)
    log_inc = -0.5 * (log(2.0 * pi * innov_var)
                      + (y - innov_mean) ** 2 / innov_var)
    return AugmentedMoments(mean=mean, cov=cov), log_inc, innov_mean, innov_var


def marginal_log_likelihood(data: Dataset, theta: KineticParams,
                            tau: AuxParams,
                            cfg: IntegratorConfig = IntegratorConfig(),
                            propagate_x=None):
    """Approximate marginal likelihood of the aggregate series.

    Returns ``(log_likelihood, trace)``; any forecast divergence or broken
    covariance yields ``-inf`` with the failure recorded in the trace.
    """
    k = data.constants
    M = data.n_weeks
    trace = FilterTrace(
        times=data.times.copy(),
        forecast_mean=np.zeros((M, 9)), forecast_cov=np.zeros((M, 9, 9)),
        analysis_mean=np.zeros((M, 9)), analysis_cov=np.zeros((M, 9, 9)),
        innovation_mean=np.zeros(M), innovation_var=np.zeros(M),
        log_increments=np.zeros(M))
    if propagate_x is None:
        propagate_x = _lna_propagator(theta, k, cfg)
    moments = init_filter(theta, tau, k)
    for i in range(M):
        try:
            if i > 0:
                moments = forecast(moments, theta, tau, k,
                                   data.times[i - 1], data.times[i],
                                   cfg=cfg, propagate_x=propagate_x)
            trace.forecast_mean[i] = moments.mean
            trace.forecast_cov[i] = moments.cov
            moments, inc, im, iv = analysis_update(moments, data.y[i], tau, k)
        except (LnaDivergenceError, FilterError) as err:
            trace.ok = False
            trace.failure = f"week {i + 1}: {err}"
            return -np.inf, trace
        trace.analysis_mean[i] = moments.mean
        trace.analysis_cov[i] = moments.cov
        trace.innovation_mean[i] = im
        trace.innovation_var[i] = iv
        trace.log_increments[i] = inc
        trace.n_steps = i + 1
    return trace.log_likelihood, trace


def sample_smoothed_states(trace: FilterTrace, seed: int):
    """Draw one latent path from the per-week analysis Gaussians.

    Weeks are sampled independently, which is the smoothing approximation
    used throughout: the smoothing marginals are identified with the
    analysis marginals.
    """
    if not trace.ok:
        raise FilterError(f"cannot sample from a failed trace: {trace.failure}")
    rng = np.random.default_rng(np.uint64(seed))
    M = trace.times.size
    if trace.smooth_roots is None:
        covs = 0.5 * (trace.analysis_cov
                      + np.transpose(trace.analysis_cov, (0, 2, 1)))
        w, Q = np.linalg.eigh(covs)
        scale = np.maximum(1.0, np.max(np.abs(w), axis=1))
        if np.any(w[:, 0] < -1e-9 * scale):
            raise FilterError("indefinite analysis covariance in trace")
        trace.smooth_roots = Q * np.sqrt(np.clip(w, 0.0, None))[:, None, :]
    draws = trace.analysis_mean \
        + np.einsum("mij,mj->mi", trace.smooth_roots,
                    rng.standard_normal((M, 9)))
    return draws[:, :8].copy(), draws[:, 8].copy()


def negbin_logpmf(n, m, v):
    """Log-pmf of the variance-inflated count model: mean m, variance m(1+1/v).

    Size parameter v*m may be non-integer; the Gamma-function
    generalization of the binomial coefficient is used.
    """
    n = float(n)
    if not (np.isfinite(n) and np.isfinite(m) and m > 0 and v > 0) or n < 0:
        return -np.inf
    s = v * m
    logp = np.log(v) - np.log1p(v)       # log(v / (1 + v))
    log1mp = -np.log1p(v)                # log(1 / (1 + v))
    return lgamma(n + s) - lgamma(s) - lgamma(n + 1.0) + s * logp + n * log1mp


def negbin_sample(rng: np.random.Generator, m, v):
    """Sample the count model via its Gamma-Poisson mixture representation."""
    m = np.asarray(m, dtype=float)
    lam = rng.gamma(np.maximum(v * m, 1e-300), 1.0 / v)
    return rng.poisson(lam)


def virological_log_likelihood(n1, n2, n3, x, d, tau: AuxParams,
                               k: FixedConstants) -> float:
    """Negative-binomial log-likelihood of the virological counts given a
    sampled latent path.  Weeks with missing counts (NaN) are skipped.

    Gaussian path draws can be negative; compartments and background are
    clamped at zero and the means floored before use.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        return -np.inf
    xc = np.clip(x, 0.0, None)
    dc = np.clip(d, 0.0, None)
    scale = k.r_h * tau.r * (k.omega_c / k.omega)
    m1 = np.maximum(scale * (xc[:, 1] + xc[:, 6]), _MEAN_FLOOR)
    m2 = np.maximum(scale * (xc[:, 3] + xc[:, 4]), _MEAN_FLOOR)
    m3 = np.maximum(scale * dc, _MEAN_FLOOR)
    total = 0.0
    for nk, mk in ((n1, m1), (n2, m2), (n3, m3)):
        nk = np.asarray(nk, dtype=float)
        for i in range(nk.size):
            if np.isnan(nk[i]):
                continue
            total += negbin_logpmf(nk[i], mk[i], tau.v)
    return total


def one_step_ahead_predictive(trace: FilterTrace, tau: AuxParams,
                              k: FixedConstants):
    """Per-week predictive mean and variance of the aggregate report.

    These are exactly the innovation moments recorded by the filter; week 1
    is the prior predictive.
    """
    return trace.innovation_mean.copy(), trace.innovation_var.copy()
