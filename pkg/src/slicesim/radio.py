"""Downlink physical layer: sector antenna gain, UMi path loss, shadowing, SINR.

The scalar ``_``-prefixed kernels are compiled with numba and shared with the
event-driven simulator; the public functions wrap them for numpy callers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from slicesim.grid import Grid, sample_in_cell


@dataclass(frozen=True)
class RadioParams:
    tx_power_dbm: float = 41.0
    max_gain_db: float = 17.0
    beamwidth_3db_rad: float = 70.0 * math.pi / 180.0
    max_attenuation_db: float = 20.0
    bandwidth_hz: float = 10e6
    carrier_hz: float = 2.5e9
    noise_density_dbm_hz: float = -174.0
    shadow_sigma_db: float = 4.0
    min_distance_m: float = 10.0
    # PL = slope*log10(d) + intercept + freq_coef*log10(fc / 1 GHz)
    pl_slope: float = 22.0
    pl_intercept: float = 28.0
    pl_freq_coef: float = 20.0

    def __post_init__(self):
        for name in ("tx_power_dbm", "max_gain_db", "beamwidth_3db_rad", "max_attenuation_db",
                     "bandwidth_hz", "carrier_hz", "min_distance_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be non-negative")

    @property
    def noise_dbm(self) -> float:
        return self.noise_density_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)

    def packed(self) -> np.ndarray:
        """Flat float vector in the layout ``_sinr`` expects."""
        return np.array([
            self.tx_power_dbm, self.max_gain_db, self.beamwidth_3db_rad,
            self.max_attenuation_db, self.bandwidth_hz, self.carrier_hz / 1e9,
            self.noise_dbm, self.shadow_sigma_db, self.min_distance_m,
            self.pl_slope, self.pl_intercept, self.pl_freq_coef,
        ])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CapacityStats:
    mean_bps: float
    median_bps: float
    var_log_c: float
    sample_count: int

    @classmethod
    def from_samples(cls, samples) -> "CapacityStats":
        c = np.asarray(samples, dtype=float)
        if c.size < 2:
            raise ValueError("need at least two capacity samples")
        if np.any(c <= 0):
            raise ValueError("capacity samples must be positive")
        logc = np.log(c)
        var = float(np.var(logc, ddof=1))
        if np.all(c == c[0]):
            var = 0.0
        return cls(float(np.mean(c)), float(np.median(c)), var, int(c.size))


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def antenna_gain(theta, params: RadioParams):
    """Sector gain in dB for an off-boresight angle (radians, any range)."""
    th = np.abs(np.angle(np.exp(1j * np.asarray(theta, dtype=float))))
    att = np.minimum(12.0 * (th / params.beamwidth_3db_rad) ** 2, params.max_attenuation_db)
    return params.max_gain_db - att


def path_loss(d, params: RadioParams):
    d = np.maximum(np.asarray(d, dtype=float), params.min_distance_m)
    return (params.pl_slope * np.log10(d) + params.pl_intercept
            + params.pl_freq_coef * np.log10(params.carrier_hz / 1e9))


def shannon_capacity(sinr, bandwidth_hz: float):
    return bandwidth_hz * np.log2(1.0 + np.asarray(sinr, dtype=float))


# --- compiled kernels -------------------------------------------------------

@njit(cache=True)
def _min_image(dx, dy, lat, lat_inv):
    u = dx * lat_inv[0, 0] + dy * lat_inv[1, 0]
    v = dx * lat_inv[0, 1] + dy * lat_inv[1, 1]
    ru = np.floor(u + 0.5)
    rv = np.floor(v + 0.5)
    bx = dx - ru * lat[0, 0] - rv * lat[1, 0]
    by = dy - ru * lat[0, 1] - rv * lat[1, 1]
    best_x, best_y = bx, by
    best = bx * bx + by * by
    for i in range(-1, 2):
        for j in range(-1, 2):
            cx = bx + i * lat[0, 0] + j * lat[1, 0]
            cy = by + i * lat[0, 1] + j * lat[1, 1]
            n = cx * cx + cy * cy
            if n < best:
                best = n
                best_x, best_y = cx, cy
    return best_x, best_y


@njit(cache=True)
def _gain_db(theta, gmax, th3, am):
    th = math.fabs(theta) % (2.0 * math.pi)
    if th > math.pi:
        th = 2.0 * math.pi - th
    att = 12.0 * (th / th3) ** 2
    if att > am:
        att = am
    return gmax - att


@njit(cache=True)
def _path_loss_db(d, dmin, slope, intercept, fcoef, fc_ghz):
    if d < dmin:
        d = dmin
    return slope * math.log10(d) + intercept + fcoef * math.log10(fc_ghz)


@njit(cache=True)
def _rx_dbm(px, py, k, bs, bore, lat, lat_inv, rp):
    dx, dy = _min_image(px - bs[k, 0], py - bs[k, 1], lat, lat_inv)
    theta = math.atan2(dy, dx) - bore[k]
    return (rp[0] + _gain_db(theta, rp[1], rp[2], rp[3])
            - _path_loss_db(math.sqrt(dx * dx + dy * dy), rp[8], rp[9], rp[10], rp[11], rp[5]))


@njit(cache=True)
def _sinr(px, py, k, bs, bore, cochan, lat, lat_inv, rp, shadow):
    """Linear SINR at (px, py) served by cell index k.

    ``shadow`` holds seven N(0,1) draws: serving link first, then the
    co-channel interferers in ``cochan[k]`` order.
    """
    sig = rp[7]
    p_r = 10.0 ** ((_rx_dbm(px, py, k, bs, bore, lat, lat_inv, rp) + sig * shadow[0]) / 10.0)
    interf = 0.0
    for m in range(cochan.shape[1]):
        q = cochan[k, m]
        interf += 10.0 ** ((_rx_dbm(px, py, q, bs, bore, lat, lat_inv, rp) + sig * shadow[m + 1]) / 10.0)
    noise = 10.0 ** (rp[6] / 10.0)
    return p_r / (noise + interf)


@njit(cache=True)
def _capacity(px, py, k, bs, bore, cochan, lat, lat_inv, rp, rng):
    shadow = np.empty(cochan.shape[1] + 1)
    for m in range(shadow.shape[0]):
        shadow[m] = rng.standard_normal()
    s = _sinr(px, py, k, bs, bore, cochan, lat, lat_inv, rp, shadow)
    return rp[4] * math.log2(1.0 + s)


@njit(cache=True)
def _capacity_batch(xy, cells, bs, bore, cochan, lat, lat_inv, rp, rng):
    out = np.empty(xy.shape[0])
    for n in range(xy.shape[0]):
        out[n] = _capacity(xy[n, 0], xy[n, 1], cells[n], bs, bore, cochan, lat, lat_inv, rp, rng)
    return out


def kernel_geometry(grid: Grid):
    """Arrays in the layout the kernels take (0-based cell indices)."""
    return (
        np.ascontiguousarray(grid.bs_positions),
        np.ascontiguousarray(grid.boresights),
        np.ascontiguousarray(grid.cochannel - 1),
        np.ascontiguousarray(grid.lattice),
        np.ascontiguousarray(np.linalg.inv(grid.lattice)),
    )


def sinr_at(p, cell: int, grid: Grid, params: RadioParams, shadow_db=None) -> float:
    """Deterministic SINR given explicit shadowing values (dB) per link."""
    bs, bore, cochan, lat, lat_inv = kernel_geometry(grid)
    if shadow_db is None:
        z = np.zeros(cochan.shape[1] + 1)
    else:
        if params.shadow_sigma_db == 0:
            raise ValueError("explicit shadowing needs shadow_sigma_db > 0")
        z = np.asarray(shadow_db, dtype=float) / params.shadow_sigma_db
    return float(_sinr(float(p[0]), float(p[1]), cell - 1, bs, bore, cochan, lat, lat_inv,
                       params.packed(), z))


def capacity_at(p, cell: int, grid: Grid, params: RadioParams, rng: np.random.Generator):
    """Shannon capacity with fresh shadowing on every link.

    ``p`` may be one position or an (n, 2) array; ``cell`` then broadcasts.
    """
    xy = np.atleast_2d(np.asarray(p, dtype=float))
    cells = np.broadcast_to(np.asarray(cell, dtype=np.int64) - 1, (xy.shape[0],)).copy()
    out = _capacity_batch(xy, cells, *kernel_geometry(grid), params.packed(), rng)
    return float(out[0]) if np.ndim(p) == 1 else out


def estimate_capacity_stats(cell: int, grid: Grid, params: RadioParams, n_samples: int,
                            rng: np.random.Generator, capacity_fn=None) -> CapacityStats:
    """Capacity statistics from uniform random positions in one cell.

    ``capacity_fn(xy, cell, rng)`` replaces the radio model when given.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    xy = sample_in_cell(cell, n_samples, grid, rng)
    if capacity_fn is None:
        c = capacity_at(xy, cell, grid, params, rng)
    else:
        c = np.asarray(capacity_fn(xy, cell, rng), dtype=float)
    return CapacityStats.from_samples(c)
