"""Two-pathogen SIR reaction network: state layout, propensities, stoichiometry.

State ordering (fixed throughout the package):

    index  0    1    2    3    4    5    6    7
    comp.  SS   IS   RS   SI   RI   SR   IR   RR

where the first letter is the immunological status for pathogen 1
(influenza) and the second for pathogen 2 (RSV).  The co-infected
compartment II is excluded from the model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_COMPARTMENTS = 8
N_REACTIONS = 17

COMPARTMENTS = ("SS", "IS", "RS", "SI", "RI", "SR", "IR", "RR")

# indices of the infected pools feeding each force of infection
_P1_INFECTED = (1, 6)  # IS, IR
_P2_INFECTED = (3, 4)  # SI, RI


@dataclass(frozen=True)
class FixedConstants:
    """Fixed epidemiological constants, never sampled.

    Rates are per year; the weekly observation spacing is 1/52 year.
    """

    omega: float = 2_585_518.0        # total population
    omega_c: float = 266_761.0        # children under 5
    r_h: float = 0.0005               # hospital admission proportion
    gamma: float = 365.0 / 7.0        # recovery rate (per year)
    mu: float = 1.0 / 70.0            # birth/death rate (per year)

    def __post_init__(self):
        if not (0 < self.omega_c < self.omega):
            raise ValueError("require 0 < omega_c < omega")
        if not (0.0 < self.r_h < 1.0):
            raise ValueError("require 0 < r_h < 1")
        if self.gamma <= 0 or self.mu < 0:
            raise ValueError("require gamma > 0 and mu >= 0")


@dataclass(frozen=True)
class KineticParams:
    """Kinetic parameters of the reaction network plus state-prior scale."""

    beta1: float                      # transmission rate, pathogen 1 (per year)
    beta2: float                      # transmission rate, pathogen 2 (per year)
    sigma1: float                     # cross-interference multiplier, pathogen 1
    sigma2: float                     # cross-interference multiplier, pathogen 2
    x0: np.ndarray                    # initial compartment counts, length 8
    c0: float                         # prior state variance scale

    def __post_init__(self):
        for name in ("beta1", "beta2", "sigma1", "sigma2", "c0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (N_COMPARTMENTS,):
            raise ValueError("x0 must have length 8")
        object.__setattr__(self, "x0", x0)

    def validate_population(self, constants: FixedConstants, rtol: float = 1e-9):
        total = float(self.x0.sum())
        if abs(total - constants.omega) > rtol * constants.omega:
            raise ValueError(
                f"x0 sums to {total}, expected omega = {constants.omega}"
            )


def _build_stoichiometry() -> np.ndarray:
    """8x17 stoichiometric matrix; column j is the state change of reaction j."""
    S = np.zeros((N_COMPARTMENTS, N_REACTIONS), dtype=np.int64)
    cols = [
        {0: +1},            # 1  birth -> SS
        {0: -1, 3: +1},     # 2  SS -> SI
        {0: -1, 1: +1},     # 3  SS -> IS
        {0: -1},            # 4  SS death
        {1: -1},            # 5  IS death
        {1: -1, 2: +1},     # 6  IS -> RS
        {2: -1},            # 7  RS death
        {2: -1, 4: +1},     # 8  RS -> RI
        {3: -1, 5: +1},     # 9  SI -> SR
        {3: -1},            # 10 SI death
        {4: -1, 7: +1},     # 11 RI -> RR
        {4: -1},            # 12 RI death
        {5: -1},            # 13 SR death
        {5: -1, 6: +1},     # 14 SR -> IR
        {6: -1},            # 15 IR death
        {6: -1, 7: +1},     # 16 IR -> RR
        {7: -1},            # 17 RR death
    ]
    for j, changes in enumerate(cols):
        for i, v in changes.items():
            S[i, j] = v
    return S


REACTION_LABELS = (
    "birth",
    "SS->SI", "SS->IS", "SS-death",
    "IS-death", "IS->RS",
    "RS-death", "RS->RI",
    "SI->SR", "SI-death",
    "RI->RR", "RI-death",
    "SR-death", "SR->IR",
    "IR-death", "IR->RR",
    "RR-death",
)


def propensities(x, theta: KineticParams, k: FixedConstants,
                 omega: float | None = None) -> np.ndarray:
    """Reaction rates at state ``x``.

    ``x`` may be count-scale (default, ``omega = k.omega``) or
    concentration-scale proportions (pass ``omega = 1.0``); the birth rate
    scales with ``omega`` so the same formulas serve both.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("negative state entries passed to propensities")
    if omega is None:
        omega = k.omega
    lam1 = (x[1] + x[6]) / omega
    lam2 = (x[3] + x[4]) / omega
    g, mu = k.gamma, k.mu
    a = np.array([
        mu * omega,                       # birth
        theta.beta2 * lam2 * x[0],        # SS -> SI
        theta.beta1 * lam1 * x[0],        # SS -> IS
        mu * x[0],
        mu * x[1],
        g * x[1],                         # IS -> RS
        mu * x[2],
        theta.sigma2 * theta.beta2 * lam2 * x[2],   # RS -> RI
        g * x[3],                         # SI -> SR
        mu * x[3],
        g * x[4],                         # RI -> RR
        mu * x[4],
        mu * x[5],
        theta.sigma1 * theta.beta1 * lam1 * x[5],   # SR -> IR
        mu * x[6],
        g * x[6],                         # IR -> RR
        mu * x[7],
    ])
    return a


@dataclass(frozen=True)
class ReactionNetwork:
    constants: FixedConstants
    stoich: np.ndarray = field(default_factory=_build_stoichiometry)

    def propensities(self, x, theta: KineticParams,
                     omega: float | None = None) -> np.ndarray:
        return propensities(x, theta, self.constants, omega=omega)


def build_network(constants: FixedConstants) -> ReactionNetwork:
    return ReactionNetwork(constants=constants)


def aggregate_observation_vector() -> np.ndarray:
    """Selector G picking the observed infected compartments IS+SI+RI+IR."""
    return np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0])


def influenza_infected(x) -> float:
    """Count currently infected with pathogen 1: IS + IR."""
    x = np.asarray(x)
    return x[..., 1] + x[..., 6]


def rsv_infected(x) -> float:
    """Count currently infected with pathogen 2: SI + RI."""
    x = np.asarray(x)
    return x[..., 3] + x[..., 4]
