"""Scenario configuration: reference parameter set, validation, file loading."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from slicesim.grid import N_CELLS
from slicesim.logit import ChoiceParams
from slicesim.radio import RadioParams

CAPACITY_SOURCES = ("subscription", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    # network and radio
    isd_m: float = 200.0
    tx_power_dbm: float = 41.0
    max_gain_db: float = 17.0
    beamwidth_3db_rad: float = 70.0 * math.pi / 180.0
    max_attenuation_db: float = 20.0
    bandwidth_hz: float = 10e6
    carrier_hz: float = 2.5e9
    noise_density_dbm_hz: float = -174.0
    shadow_sigma_db: float = 4.0
    min_distance_m: float = 10.0
    pl_slope: float = 22.0
    pl_intercept: float = 28.0
    pl_freq_coef: float = 20.0
    # mobility and capacity tracking
    speed_kmh: float = 3.0
    t_pause_max_s: float = 120.0
    t_walk_max_s: float = 120.0
    d_update_m: float = 20.0
    t_update_s: float = 24.0
    # on handover: keep the running estimate and measuring point (False) or
    # take a fresh measurement and restart the estimate from it (True)
    handover_resets_estimate: bool = False
    # users and tenants
    mu: float = 2.0
    nu: float = 1.0
    users_per_cell: int = 250
    shares: tuple = (0.1, 0.2, 0.3, 0.4)
    # per-cell weights, either one S-vector for every cell or a 57 x S table;
    # None means shares / 57 in every cell
    weights: tuple | None = None
    r0_bps: float = 500e3
    price: float = 1.0
    ema_lambda: float = 0.1
    t_sub_s: float = 240.0
    # experiment control
    replications: int = 5
    duration_s: float = 100_000.0
    warmup_s: float = 0.0
    seed: int = 1
    capacity_source: str = "subscription"
    capacity_samples: int = 100_000
    audit_every: int = 0
    # lambda * t_sub points of sweep case e; 56 may be swapped for 60
    case_e_grid: tuple = (12.0, 24.0, 36.0, 48.0, 56.0, 72.0)

    def __post_init__(self):
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))
        object.__setattr__(self, "case_e_grid", tuple(float(v) for v in self.case_e_grid))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", tuple(map(tuple, np.atleast_2d(w))) if w.ndim == 2
                               else tuple(float(x) for x in w))
        self.validate()

    # -- derived views -------------------------------------------------
    @property
    def n_nst(self) -> int:
        return len(self.shares)

    @property
    def speed_mps(self) -> float:
        return self.speed_kmh / 3.6

    @property
    def radio(self) -> RadioParams:
        return RadioParams(
            tx_power_dbm=self.tx_power_dbm, max_gain_db=self.max_gain_db,
            beamwidth_3db_rad=self.beamwidth_3db_rad, max_attenuation_db=self.max_attenuation_db,
            bandwidth_hz=self.bandwidth_hz, carrier_hz=self.carrier_hz,
            noise_density_dbm_hz=self.noise_density_dbm_hz, shadow_sigma_db=self.shadow_sigma_db,
            min_distance_m=self.min_distance_m, pl_slope=self.pl_slope,
            pl_intercept=self.pl_intercept, pl_freq_coef=self.pl_freq_coef,
        )

    @property
    def choice(self) -> ChoiceParams:
        return ChoiceParams(mu=self.mu, nu=self.nu, price=self.price, r0_bps=self.r0_bps)

    def weight_table(self) -> np.ndarray:
        """Weights as a (57, S) array."""
        if self.weights is None:
            return np.tile(np.asarray(self.shares) / N_CELLS, (N_CELLS, 1))
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            return np.tile(w, (N_CELLS, 1))
        return w.copy()

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out

    # -- validation ------------------------------------------------------
    def validate(self) -> None:
        positive = ("isd_m", "speed_kmh", "d_update_m", "t_update_s", "mu", "nu", "price",
                    "t_sub_s", "duration_s", "bandwidth_hz", "carrier_hz", "min_distance_m")
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in ("t_pause_max_s", "t_walk_max_s", "warmup_s", "shadow_sigma_db", "r0_bps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a non-negative number, got {v!r}")
        if self.t_walk_max_s <= 0:
            raise ConfigError("t_walk_max_s must be positive")
        if not 0 < self.ema_lambda < 1:
            raise ConfigError(f"ema_lambda must lie in (0, 1), got {self.ema_lambda}")
        if not isinstance(self.users_per_cell, int) or self.users_per_cell < 1:
            raise ConfigError("users_per_cell must be a positive integer")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications must be a positive integer")
        if self.warmup_s >= self.duration_s:
            raise ConfigError("duration_s must exceed warmup_s")
        if not isinstance(self.handover_resets_estimate, bool):
            raise ConfigError("handover_resets_estimate must be true or false")
        if self.capacity_source not in CAPACITY_SOURCES:
            raise ConfigError(f"capacity_source must be one of {CAPACITY_SOURCES}")
        if self.capacity_samples < 2:
            raise ConfigError("capacity_samples must be at least 2")
        s = np.asarray(self.shares, dtype=float)
        if s.size < 1 or np.any(s <= 0) or not math.isclose(s.sum(), 1.0, abs_tol=1e-9):
            raise ConfigError(f"shares must be positive and sum to 1, got {self.shares}")
        if not self.case_e_grid or min(self.case_e_grid) <= 0:
            raise ConfigError("case_e_grid must hold positive values")
        w = self.weight_table()
        if w.shape != (N_CELLS, s.size):
            raise ConfigError(f"weights must be an S-vector or a {N_CELLS} x S table")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ConfigError("weights must be positive")
        if not np.allclose(w.sum(axis=0), s, rtol=1e-9, atol=1e-12):
            raise ConfigError("per-tenant weights summed over cells must equal the shares")


def load_config(path) -> ScenarioConfig:
    """Read a YAML (or JSON) document whose keys are ScenarioConfig fields."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    kw = dict(doc)
    for k in ("shares", "weights", "case_e_grid"):
        if kw.get(k) is not None:
            kw[k] = tuple(kw[k])
    for k in ("users_per_cell", "replications", "seed", "capacity_samples", "audit_every"):
        if k in kw and isinstance(kw[k], float) and kw[k].is_integer():
            kw[k] = int(kw[k])
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def case_shares(n_nst: int) -> tuple:
    """Shares {1/k, ..., S/k} with k = S(S+1)/2."""
    k = n_nst * (n_nst + 1) / 2
    return tuple(i / k for i in range(1, n_nst + 1))
