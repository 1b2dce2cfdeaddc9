"""Equilibrium subscription indicators of the logit model.

Solves the subscription-ratio equation

    sigma - gamma**beta * sum(w**beta) / sum(w)**beta * (1 - sigma)**(1 - beta) = 0

for sigma in (0, 1), and the closed-form tenant fractions
``rho_i = w_i**beta / sum(w**beta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from slicesim.logit import ChoiceParams, check_weights

VARIANTS = ("mean-capacity", "median-capacity", "modified-beta")
BRACKET_EPS = 1e-15


def beta(mu: float, nu: float) -> float:
    if mu <= 0 or nu <= 0:
        raise ValueError("mu and nu must be positive")
    return mu / (mu + nu)


def modified_nu(mu: float, nu: float, var_log_c: float) -> float:
    if var_log_c < 0:
        raise ValueError("var_log_c must be non-negative")
    return nu / math.sqrt(1.0 + 6.0 * (mu * nu / math.pi) ** 2 * var_log_c)


def modified_beta(mu: float, nu: float, var_log_c: float) -> float:
    """Sensitivity with the capacity spread folded into the Gumbel noise."""
    return beta(mu, modified_nu(mu, nu, var_log_c))


def normalized_capacity(c_bps: float, n_users: float, price: float, r0_bps: float) -> float | None:
    """``c / (n p r0)``; ``None`` when r0 = 0 (everyone subscribes)."""
    if c_bps <= 0 or n_users <= 0 or price <= 0:
        raise ValueError("capacity, user count and price must be positive")
    if r0_bps < 0:
        raise ValueError("r0 must be non-negative")
    if r0_bps == 0:
        return None
    return c_bps / (n_users * price * r0_bps)


@dataclass(frozen=True)
class AnalyticInputs:
    weights: np.ndarray
    beta: float
    gamma: float | None
    r0_flag: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", check_weights(self.weights))
        if not 0 < self.beta < 1 or not math.isfinite(self.beta):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.r0_flag:
            if self.gamma is None or not math.isfinite(self.gamma) or self.gamma <= 0:
                raise ValueError(f"gamma must be finite and positive, got {self.gamma}")


def weight_factor(weights, b: float) -> float:
    w = check_weights(weights)
    return float(np.sum(w**b) / np.sum(w) ** b)


def sigma_residual(sigma: float, inputs: AnalyticInputs) -> float:
    b = inputs.beta
    k = inputs.gamma**b * weight_factor(inputs.weights, b)
    return sigma - k * (1.0 - sigma) ** (1.0 - b)


def solve_sigma(inputs: AnalyticInputs) -> float:
    """Subscription ratio by bisection; exactly 1 when r0 = 0."""
    if inputs.r0_flag:
        return 1.0
    b = inputs.beta
    k = inputs.gamma**b * weight_factor(inputs.weights, b)
    if not math.isfinite(k):
        raise ValueError("non-finite coefficient in the subscription equation")

    def f(s):
        return s - k * (1.0 - s) ** (1.0 - b)

    lo, hi = BRACKET_EPS, 1.0 - BRACKET_EPS
    if f(lo) >= 0:
        # root below the bracket; keep halving toward 0
        while f(lo) >= 0 and lo > 0:
            hi, lo = lo, lo / 2.0
        if lo == 0:
            return hi
    if f(hi) <= 0:
        # root squeezed against 1: continue on the float grid up to nextafter(1, 0)
        hi = math.nextafter(1.0, 0.0)
        if f(hi) <= 0:
            return hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


def rho(weights, b: float) -> np.ndarray:
    w = check_weights(weights)
    if not 0 < b < 1:
        raise ValueError("beta must lie in (0, 1)")
    x = w**b
    return x / x.sum()


def allocate(weights, capacity_bps: float) -> np.ndarray:
    """Proportional-share split of a cell capacity among tenants."""
    w = check_weights(weights)
    if capacity_bps <= 0:
        raise ValueError("capacity must be positive")
    return w / w.sum() * capacity_bps


@dataclass
class IndicatorSet:
    variant: str
    sigma: np.ndarray
    rho: np.ndarray
    beta_used: np.ndarray = field(default=None)
    gamma_used: np.ndarray = field(default=None)
    cell_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.cell_ids is None:
            self.cell_ids = np.arange(1, len(self.sigma) + 1)


def compute_indicators(stats, n_hat, weights, params: ChoiceParams, variant: str) -> IndicatorSet:
    """Analytic indicators for every cell.

    ``stats`` maps cell id -> CapacityStats (or is a sequence indexed by
    ``cell_id - 1``); ``n_hat`` likewise gives the time-average users per
    cell; ``weights`` is one vector shared by all cells or a (cells, S) array.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if isinstance(stats, dict):
        cell_ids = sorted(stats)
        stats_seq = [stats[c] for c in cell_ids]
    else:
        stats_seq = list(stats)
        cell_ids = list(range(1, len(stats_seq) + 1))
    n_hat = np.asarray([n_hat[c] for c in cell_ids] if isinstance(n_hat, dict) else n_hat, dtype=float)
    if len(n_hat) != len(cell_ids):
        raise ValueError("n_hat and stats cover different cells")
    w_all = np.asarray(weights, dtype=float)
    if w_all.ndim == 1:
        w_all = np.broadcast_to(w_all, (len(cell_ids), w_all.size))

    b0 = beta(params.mu, params.nu)
    sig, rh, bu, gu = [], [], [], []
    for k, cid in enumerate(cell_ids):
        st = stats_seq[k]
        if st is None:
            raise ValueError(f"missing capacity statistics for cell {cid}")
        c = st.median_bps if variant == "median-capacity" else st.mean_bps
        b = modified_beta(params.mu, params.nu, st.var_log_c) if variant == "modified-beta" else b0
        g = normalized_capacity(c, n_hat[k], params.price, params.r0_bps)
        inp = AnalyticInputs(w_all[k], b, g, r0_flag=g is None)
        sig.append(solve_sigma(inp))
        rh.append(rho(w_all[k], b))
        bu.append(b)
        gu.append(np.nan if g is None else g)
    return IndicatorSet(variant, np.array(sig), np.array(rh), np.array(bu), np.array(gu),
                        np.array(cell_ids))

