"""Logit choice primitives shared by the simulator and the analytic model.

Option 0 is always "no subscription"; options 1..S are the slice tenants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EULER_GAMMA = float(np.euler_gamma)


@dataclass(frozen=True)
class ChoiceParams:
    mu: float = 2.0
    nu: float = 1.0
    price: float = 1.0
    r0_bps: float = 500e3
    p0: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.nu > 0 and self.price > 0):
            raise ValueError("mu, nu and price must be positive")
        if self.r0_bps < 0:
            raise ValueError("r0_bps must be non-negative")
        if self.p0 != 1.0:
            raise ValueError("p0 is fixed to 1")

    @property
    def no_subscription_utility(self) -> float:
        if self.r0_bps == 0:
            return -np.inf
        return self.mu * np.log(self.r0_bps / self.p0)


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("slice weights must be finite and positive")
    return w


def observed_utility(rate_bps, params: ChoiceParams):
    r = np.asarray(rate_bps, dtype=float)
    if np.any(r <= 0):
        raise ValueError("observed utility needs a positive rate")
    return params.mu * np.log(r / params.price)


def per_user_rate(weights, nst: int, capacity_bps: float, n_subscribers: int) -> float:
    """Rate seen by one of ``n_subscribers`` users of tenant ``nst`` (1-based)."""
    w = check_weights(weights)
    if n_subscribers < 1:
        raise ValueError("n_subscribers must be at least 1")
    if capacity_bps <= 0:
        raise ValueError("capacity must be positive")
    return w[nst - 1] / w.sum() * capacity_bps / n_subscribers


def draw_gumbel(nu: float, rng: np.random.Generator, size=None):
    """Zero-mean Gumbel perturbation with scale ``nu``."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    return rng.gumbel(loc=-EULER_GAMMA * nu, scale=nu, size=size)


def choose(observed, kappa) -> int:
    """Index of the option with the largest total utility (lowest index on ties)."""
    u = np.asarray(observed, dtype=float) + np.asarray(kappa, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("need at least one option")
    return int(np.argmax(u))


def ema_update(c_hat: float, c_last: float, lam: float) -> float:
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    return (1.0 - lam) * c_hat + lam * c_last


def static_choice_probabilities(rates, params: ChoiceParams) -> np.ndarray:
    """Logit shares for fixed per-tenant rates; entry 0 is the outside option."""
    r = np.asarray(rates, dtype=float)
    if np.any(r <= 0):
        raise ValueError("rates must be positive")
    a = params.mu / params.nu
    # work in logs so large exponents do not overflow
    logs = a * np.log(r / params.price)
    if params.r0_bps > 0:
        logs = np.concatenate([[a * np.log(params.r0_bps / params.p0)], logs])
    else:
        logs = np.concatenate([[-np.inf], logs])
    m = np.max(logs)
    e = np.exp(logs - m)
    return e / e.sum()
