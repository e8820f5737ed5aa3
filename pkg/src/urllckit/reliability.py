"""Multi-link availability models.

Independent multi-path packet loss, the correlated line-of-sight formula for
distributed antennas, the 3GPP terrestrial LoS probability, and the
elevation-angle LoS model for ground-to-air links. A Markov-chain Monte
Carlo simulator of the correlated LoS indicators is included as the
independent cross-check for the closed form.

Angles are degrees. The elevation model's environment constants have no
baked-in defaults; they depend on the deployment (suburban .. highrise) and
must be supplied by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import make_rng

__all__ = [
    "MultiPathProfile",
    "LosField",
    "loss_uncorrelated",
    "p_all_los",
    "p_los_terrestrial",
    "p_los_elevation",
    "simulate_los_chain",
]


@dataclass(frozen=True)
class MultiPathProfile:
    """Per-path loss probabilities for one packet sent over parallel paths."""

    per_path_loss: tuple[float, ...]

    def __post_init__(self):
        losses = tuple(float(p) for p in self.per_path_loss)
        if len(losses) < 1:
            raise ValueError("need at least one path")
        if any(not 0.0 <= p <= 1.0 for p in losses):
            raise ValueError("path loss probabilities must be in [0, 1]")
        object.__setattr__(self, "per_path_loss", losses)

    @property
    def path_count(self) -> int:
        return len(self.per_path_loss)


@dataclass(frozen=True)
class LosField:
    """LoS statistics of a distributed-antenna deployment.

    ``p_one`` is the per-antenna LoS probability, ``rho`` the correlation of
    two adjacent antennas' LoS indicators.
    """

    p_one: float
    rho: float
    path_count: int

    def __post_init__(self):
        if not 0.0 <= self.p_one <= 1.0:
            raise ValueError("p_one must be in [0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.path_count < 1:
            raise ValueError("path_count must be >= 1")


def loss_uncorrelated(profile: MultiPathProfile) -> float:
    """Overall loss probability when per-path losses are independent."""
    return float(np.prod(profile.per_path_loss))


def p_all_los(field: LosField) -> float:
    """Probability that at least one antenna has a LoS path.

    1 - (1 - p)[1 - p(1 - rho)]^{N-1}; decreasing in rho, collapsing to the
    independent form at rho = 0 and to a single antenna at rho = 1.
    """
    p, rho, n = field.p_one, field.rho, field.path_count
    return 1.0 - (1.0 - p) * (1.0 - p * (1.0 - rho)) ** (n - 1)


def p_los_terrestrial(distance_m: float) -> float:
    """3GPP terrestrial LoS probability at user-antenna distance r (meters)."""
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    r = float(distance_m)
    decay = math.exp(-r / 36.0)
    return min(18.0 / r, 1.0) * (1.0 - decay) + decay


def p_los_elevation(theta_deg: float, phi_e: float, psi_e: float) -> float:
    """Ground-to-air LoS probability at elevation angle theta (degrees).

    1 / (1 + phi_e * exp(-psi_e * (theta - phi_e))); increasing in the
    elevation angle. ``phi_e``/``psi_e`` are environment constants.
    """
    if phi_e <= 0 or psi_e <= 0:
        raise ValueError("phi_e and psi_e must be positive")
    return 1.0 / (1.0 + phi_e * math.exp(-psi_e * (theta_deg - phi_e)))


def simulate_los_chain(field: LosField, n_trials: int, seed: int) -> float:
    """Monte Carlo estimate of p_all_los from the generative indicator model.

    The indicators form a first-order Markov chain across the antenna index:
    the first antenna is LoS with probability p, and each next antenna
    copies its neighbour with probability rho, otherwise redraws Bernoulli(p).
    That chain has stationary LoS probability p and adjacent correlation rho,
    the minimal model consistent with the closed form.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = make_rng(seed)
    p, rho, n = field.p_one, field.rho, field.path_count
    state = rng.random(n_trials) < p
    any_los = state.copy()
    for _ in range(n - 1):
        copy = rng.random(n_trials) < rho
        redraw = rng.random(n_trials) < p
        state = np.where(copy, state, redraw)
        any_los |= state
    return float(any_los.mean())
