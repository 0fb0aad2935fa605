"""Shared fixtures: fixed constants and a realistic operating point."""
import numpy as np
import pytest

from dualsir.model import FixedConstants, KineticParams
from dualsir.filtering import AuxParams


def operating_point(k: FixedConstants):
    """Kinetic and auxiliary parameters of a realistic epidemic year.

    Influenza and RSV transmission near beta = 65/68 per year with mild
    cross-enhancement, a mostly-susceptible initial state, and the
    observation scales used throughout the desk-scale recovery studies.
    """
    x0 = np.array([2281352, 397, 39800, 1880, 2125, 30237, 455, 143751],
                  dtype=float)
    x0 = np.round(x0 / x0.sum() * k.omega)
    x0[0] += k.omega - x0.sum()
    theta = KineticParams(beta1=65.0, beta2=68.0, sigma1=1.4, sigma2=1.5,
                          x0=x0, c0=8.8445e-3)
    tau = AuxParams.tied(c=0.0246, nu=0.1994, r=0.1035, sigma_obs=2.39e-7,
                         v=0.0996, c0=theta.c0)
    return theta, tau


@pytest.fixture(scope="session")
def constants():
    return FixedConstants()


@pytest.fixture(scope="session")
def op_params(constants):
    return operating_point(constants)


@pytest.fixture(scope="session")
def weekly_grid():
    return np.arange(52) / 52.0


def random_proportions(rng, n=8, scale=1.0):
    """Random nonnegative concentration vector with total about ``scale``."""
    p = rng.dirichlet(np.ones(n))
    return scale * p
