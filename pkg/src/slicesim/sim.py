"""Event-driven simulation of user mobility and slice subscriptions.

All per-user and per-cell state lives in flat numpy arrays so that the event
loop can run under numba.  Four event kinds share one indexed binary heap
with a slot per (user, kind); ties on time resolve by kind, then user id:

    MOBILITY < HANDOVER < MEASUREMENT < (EMA tick) < SUBSCRIPTION

EMA ticks are not queued.  Each user's ticks sit on a fixed grid
``phase + k * t_update`` and are applied lazily, in order, whenever the
estimate or the measurement it feeds on is about to be read or replaced.

Positions are kept as an offset from the centre of the user's current cell,
so a handover is an exact edge crossing into the wrap-around neighbour.
"""
from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from numba import njit

from slicesim.config import ScenarioConfig
from slicesim.grid import Grid, build_grid, sample_in_cell, wrapped_displacement
from slicesim.logit import EULER_GAMMA
from slicesim.radio import CapacityStats, _capacity, kernel_geometry

MOBILITY, HANDOVER, MEASUREMENT, SUBSCRIPTION = 0, 1, 2, 3
N_KINDS = 4
KIND_NAMES = ("mobility", "handover", "measurement", "subscription")

# origin of a subscription decision, stored with each capacity sample
DECISION_INITIAL, DECISION_PERIODIC, DECISION_HANDOVER = 0, 1, 2

# kernel return codes
DONE, SAMPLES_FULL, LOG_FULL, AUDIT_FAILED = 0, 1, 2, 3

# slots of the int64 counter vector
C_EVENTS, C_SAMPLES, C_LOG, C_AUDIT_AT = 0, 1, 2, 3
C_KIND0 = 4  # C_KIND0 + kind counts events per kind

Params = namedtuple("Params", [
    "speed", "t_pause_max", "t_walk_max", "d_update", "t_update", "lam", "t_sub",
    "mu", "price", "v0", "warmup", "apothem", "audit_every", "record_samples", "ho_reset",
])
Geometry = namedtuple("Geometry", [
    "centers", "edge_nb", "normals", "bs", "bore", "cochan", "lat", "lat_inv", "rp", "weights",
])
Users = namedtuple("Users", [
    "cell", "ox", "oy", "moving", "dirx", "diry", "t0", "phase_end", "sub", "kappa",
    "c_last", "c_hat", "ema_phase", "ema_k", "refx", "refy", "ho_edge",
])
Cells = namedtuple("Cells", ["counts", "avg", "tlast"])
Queue = namedtuple("Queue", ["heap", "pos", "key"])
Recorder = namedtuple("Recorder", [
    "ctr", "samp_cell", "samp_val", "samp_kind",
    "log_t", "log_kind", "log_user", "log_cell", "log_opt",
])


# --- estimators --------------------------------------------------------------

@njit(cache=True)
def update_time_average(avg, t_prev, t_now, count):
    """Streaming time average of a piecewise-constant count."""
    if t_now == 0.0:
        return float(count)
    return (t_prev * avg + (t_now - t_prev) * count) / t_now


@njit(cache=True)
def _advance(C, P, j, t):
    """Bring every average of cell j up to absolute time t."""
    tt = t - P.warmup
    if tt <= 0.0:
        return
    tp = C.tlast[j]
    for o in range(C.counts.shape[1]):
        C.avg[j, o] = update_time_average(C.avg[j, o], tp, tt, C.counts[j, o])
    C.tlast[j] = tt


# --- event queue ------------------------------------------------------------

@njit(cache=True)
def _before(Q, a, b):
    ta = Q.key[a]
    tb = Q.key[b]
    if ta != tb:
        return ta < tb
    ka = a % N_KINDS
    kb = b % N_KINDS
    if ka != kb:
        return ka < kb
    return a < b


@njit(cache=True)
def _swap(Q, i, j):
    a = Q.heap[i]
    b = Q.heap[j]
    Q.heap[i] = b
    Q.heap[j] = a
    Q.pos[b] = i
    Q.pos[a] = j


@njit(cache=True)
def _sift_up(Q, i):
    while i > 0:
        p = (i - 1) >> 1
        if _before(Q, Q.heap[i], Q.heap[p]):
            _swap(Q, i, p)
            i = p
        else:
            break


@njit(cache=True)
def _sift_down(Q, i):
    n = Q.heap.shape[0]
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        m = left
        right = left + 1
        if right < n and _before(Q, Q.heap[right], Q.heap[left]):
            m = right
        if _before(Q, Q.heap[m], Q.heap[i]):
            _swap(Q, i, m)
            i = m
        else:
            break


@njit(cache=True)
def _schedule(Q, u, kind, t):
    slot = u * N_KINDS + kind
    old = Q.key[slot]
    Q.key[slot] = t
    i = Q.pos[slot]
    if t < old:
        _sift_up(Q, i)
    elif t > old:
        _sift_down(Q, i)
    else:
        _sift_up(Q, i)
        _sift_down(Q, Q.pos[slot])


@njit(cache=True)
def _heapify(Q):
    n = Q.heap.shape[0]
    for i in range(n):
        Q.heap[i] = i
        Q.pos[i] = i
    for i in range(n // 2 - 1, -1, -1):
        _sift_down(Q, i)


# --- user kinematics --------------------------------------------------------

@njit(cache=True)
def _position(U, P, u, t):
    if U.moving[u]:
        s = P.speed * (t - U.t0[u])
        return U.ox[u] + s * U.dirx[u], U.oy[u] + s * U.diry[u]
    return U.ox[u], U.oy[u]


@njit(cache=True)
def _exit_distance(x, y, dx, dy, normals, apothem):
    """Distance along (dx, dy) to leave the hexagon, and the edge crossed."""
    best = np.inf
    edge = -1
    for e in range(6):
        un = dx * normals[e, 0] + dy * normals[e, 1]
        if un > 1e-12:
            d = (apothem - (x * normals[e, 0] + y * normals[e, 1])) / un
            if d < 0.0:
                d = 0.0
            if d < best:
                best = d
                edge = e
    return best, edge


@njit(cache=True)
def _plan_walk(U, P, G, Q, u, t):
    """(Re)schedule the next measurement and handover of a walking user."""
    x, y = _position(U, P, u, t)
    wx = x - U.refx[u]
    wy = y - U.refy[u]
    b = wx * U.dirx[u] + wy * U.diry[u]
    c = wx * wx + wy * wy - P.d_update * P.d_update
    if c >= 0.0:
        dist = 0.0
    else:
        dist = -b + math.sqrt(b * b - c)
    tm = t + dist / P.speed
    _schedule(Q, u, MEASUREMENT, tm if tm < U.phase_end[u] else np.inf)
    dh, edge = _exit_distance(x, y, U.dirx[u], U.diry[u], G.normals, P.apothem)
    th = t + dh / P.speed
    if th < U.phase_end[u]:
        U.ho_edge[u] = edge
        _schedule(Q, u, HANDOVER, th)
    else:
        U.ho_edge[u] = -1
        _schedule(Q, u, HANDOVER, np.inf)


@njit(cache=True)
def rwp_transition(U, P, G, Q, u, t, rng):
    """End of a pause or of a walk: switch phase and draw its duration."""
    if U.moving[u]:
        x, y = _position(U, P, u, t)
        U.ox[u] = x
        U.oy[u] = y
        U.moving[u] = 0
        U.t0[u] = t
        U.phase_end[u] = t + rng.uniform(0.0, P.t_pause_max)
        _schedule(Q, u, MEASUREMENT, np.inf)
        _schedule(Q, u, HANDOVER, np.inf)
    else:
        th = rng.uniform(0.0, 2.0 * math.pi)
        U.dirx[u] = math.cos(th)
        U.diry[u] = math.sin(th)
        U.moving[u] = 1
        U.t0[u] = t
        U.phase_end[u] = t + rng.uniform(0.0, P.t_walk_max)
        _plan_walk(U, P, G, Q, u, t)
    _schedule(Q, u, MOBILITY, U.phase_end[u])


# --- capacity tracking ------------------------------------------------------

@njit(cache=True)
def _ema_catch_up(U, P, u, t, inclusive):
    """Apply every pending EMA tick before t (or at t when inclusive)."""
    while True:
        tick = U.ema_phase[u] + U.ema_k[u] * P.t_update
        if tick < t or (inclusive and tick == t):
            U.c_hat[u] = (1.0 - P.lam) * U.c_hat[u] + P.lam * U.c_last[u]
            U.ema_k[u] += 1
        else:
            break


@njit(cache=True)
def _skip_ticks(U, P, u, t):
    k = math.ceil((t - U.ema_phase[u]) / P.t_update)
    if k > U.ema_k[u]:
        U.ema_k[u] = k
    while U.ema_phase[u] + U.ema_k[u] * P.t_update < t:
        U.ema_k[u] += 1


@njit(cache=True)
def _measure_here(U, P, G, u, t, rng):
    x, y = _position(U, P, u, t)
    j = U.cell[u]
    c = _capacity(G.centers[j, 0] + x, G.centers[j, 1] + y, j, G.bs, G.bore, G.cochan,
                  G.lat, G.lat_inv, G.rp, rng)
    U.refx[u] = x
    U.refy[u] = y
    return c


@njit(cache=True)
def measure(U, P, G, Q, u, t, rng):
    """Measurement event: refresh the last capacity sample of user u."""
    _ema_catch_up(U, P, u, t, False)
    U.c_last[u] = _measure_here(U, P, G, u, t, rng)
    tm = t + P.d_update / P.speed
    _schedule(Q, u, MEASUREMENT, tm if (U.moving[u] and tm < U.phase_end[u]) else np.inf)


# --- subscriptions ----------------------------------------------------------

@njit(cache=True)
def _move_count(C, P, j, old, new, t):
    _advance(C, P, j, t)
    C.counts[j, old] -= 1
    C.counts[j, new] += 1


@njit(cache=True)
def decide(w, counts, cur, c_hat, kappa, mu, price, v0):
    """Option with the largest perturbed utility for one user of one cell.

    ``counts`` is the cell's count row (index 0 unsubscribed) and ``cur`` the
    user's present option, excluded from the count it is evaluated against.
    """
    wsum = 0.0
    for i in range(w.shape[0]):
        wsum += w[i]
    best = 0
    best_u = v0 + kappa[0]
    for i in range(1, w.shape[0] + 1):
        n = counts[i]
        if cur == i:
            n -= 1
        rate = w[i - 1] / wsum * c_hat / (n + 1)
        util = mu * math.log(rate / price) + kappa[i]
        if util > best_u:
            best_u = util
            best = i
    return best


@njit(cache=True)
def decide_batch(w, counts, c_hat, kappa, mu, price, v0):
    """Choices of independent non-subscribed users facing frozen counts."""
    out = np.empty(kappa.shape[0], np.int64)
    for u in range(kappa.shape[0]):
        out[u] = decide(w, counts, 0, c_hat[u], kappa[u], mu, price, v0)
    return out


@njit(cache=True)
def subscribe(U, C, P, G, R, u, t, origin):
    """Re-evaluate user u's subscription in its current cell; returns the option."""
    _ema_catch_up(U, P, u, t, True)
    j = U.cell[u]
    cur = U.sub[u]
    best = decide(G.weights[j], C.counts[j], cur, U.c_hat[u], U.kappa[u], P.mu, P.price, P.v0)
    if best != cur:
        _move_count(C, P, j, cur, best, t)
        U.sub[u] = best
    if P.record_samples and t >= P.warmup:
        k = R.ctr[C_SAMPLES]
        R.samp_cell[k] = j
        R.samp_val[k] = U.c_hat[u]
        R.samp_kind[k] = origin
        R.ctr[C_SAMPLES] = k + 1
    return best


@njit(cache=True)
def relocate(U, C, P, G, Q, R, u, new_cell, nx, ny, t, rng):
    """Move user u into ``new_cell`` at offset (nx, ny) and resubscribe there."""
    old = U.cell[u]
    s = U.sub[u]
    _advance(C, P, old, t)
    _advance(C, P, new_cell, t)
    C.counts[old, s] -= 1
    C.counts[new_cell, s] += 1
    x, y = _position(U, P, u, t)
    U.cell[u] = new_cell
    U.ox[u] = nx
    U.oy[u] = ny
    U.t0[u] = t
    if P.ho_reset:
        # the estimate restarts from a fresh sample of the new cell
        _skip_ticks(U, P, u, t)
        U.c_last[u] = _measure_here(U, P, G, u, t, rng)
        U.c_hat[u] = U.c_last[u]
    else:
        # estimate carries over; keep the last measuring point in the new frame
        U.refx[u] += nx - x
        U.refy[u] += ny - y
    if U.moving[u]:
        _plan_walk(U, P, G, Q, u, t)
    return subscribe(U, C, P, G, R, u, t, DECISION_HANDOVER)


@njit(cache=True)
def handover(U, C, P, G, Q, R, u, t, rng):
    """Boundary crossing: step into the neighbour across the scheduled edge."""
    x, y = _position(U, P, u, t)
    e = U.ho_edge[u]
    j = U.cell[u]
    nb = G.edge_nb[j, e]
    nx = x - 2.0 * P.apothem * G.normals[e, 0]
    ny = y - 2.0 * P.apothem * G.normals[e, 1]
    relocate(U, C, P, G, Q, R, u, nb, nx, ny, t, rng)


# --- audit --------------------------------------------------------------------

@njit(cache=True)
def audit(U, C, P, G, t):
    """True when cell counters agree with user locations and subscriptions."""
    n_cells, n_opt = C.counts.shape
    tally = np.zeros((n_cells, n_opt), dtype=np.int64)
    for u in range(U.cell.shape[0]):
        tally[U.cell[u], U.sub[u]] += 1
        x, y = _position(U, P, u, t)
        for e in range(6):
            if x * G.normals[e, 0] + y * G.normals[e, 1] > P.apothem * (1.0 + 1e-9) + 1e-9:
                return False
    for j in range(n_cells):
        for o in range(n_opt):
            if tally[j, o] != C.counts[j, o] or C.counts[j, o] < 0:
                return False
    return True


# --- main loop ------------------------------------------------------------------

@njit(cache=True)
def run_events(U, C, P, G, Q, R, t_stop, rng):
    """Process events up to t_stop; returns a status code.

    Stops early (without consuming the next event) when a recording buffer
    has no room for the next decision.
    """
    samp_cap = R.samp_val.shape[0]
    log_cap = R.log_t.shape[0]
    while True:
        slot = Q.heap[0]
        t = Q.key[slot]
        if t > t_stop:
            return DONE
        if P.record_samples and R.ctr[C_SAMPLES] >= samp_cap:
            return SAMPLES_FULL
        if log_cap > 0 and R.ctr[C_LOG] >= log_cap:
            return LOG_FULL
        u = slot // N_KINDS
        kind = slot % N_KINDS
        if kind == MOBILITY:
            rwp_transition(U, P, G, Q, u, t, rng)
        elif kind == HANDOVER:
            handover(U, C, P, G, Q, R, u, t, rng)
        elif kind == MEASUREMENT:
            measure(U, P, G, Q, u, t, rng)
        else:
            subscribe(U, C, P, G, R, u, t, DECISION_PERIODIC)
            _schedule(Q, u, SUBSCRIPTION, t + P.t_sub)
        if log_cap > 0:
            k = R.ctr[C_LOG]
            R.log_t[k] = t
            R.log_kind[k] = kind
            R.log_user[k] = u
            R.log_cell[k] = U.cell[u]
            R.log_opt[k] = U.sub[u]
            R.ctr[C_LOG] = k + 1
        R.ctr[C_EVENTS] += 1
        R.ctr[C_KIND0 + kind] += 1
        if P.audit_every > 0 and R.ctr[C_EVENTS] % P.audit_every == 0:
            if not audit(U, C, P, G, t):
                R.ctr[C_AUDIT_AT] = R.ctr[C_EVENTS]
                return AUDIT_FAILED


@njit(cache=True)
def finish_averages(C, P, t):
    for j in range(C.counts.shape[0]):
        _advance(C, P, j, t)


# --- python-side state --------------------------------------------------------

@dataclass
class UserState:
    id: int
    position: tuple
    phase: str
    direction: float
    phase_end_time: float
    current_cell: int
    subscription: int | None
    kappa: np.ndarray
    c_hat_bps: float
    c_last_bps: float
    last_measure_pos: tuple


@dataclass
class CellCounters:
    counts: np.ndarray          # [n_0, n_1, ..., n_S]
    averages: np.ndarray        # time averages, same layout
    last_event_time: float      # relative to the end of the warm-up

    @property
    def n_users(self) -> int:
        return int(self.counts.sum())


class SimulationError(RuntimeError):
    pass


class SimState:
    """Arrays of one simulation run plus helpers to inspect and drive them."""

    def __init__(self, cfg: ScenarioConfig, grid: Grid, params: Params, geom: Geometry,
                 users: Users, cells: Cells, queue: Queue, recorder: Recorder,
                 rng: np.random.Generator, seed):
        self.cfg = cfg
        self.grid = grid
        self.P = params
        self.G = geom
        self.U = users
        self.C = cells
        self.Q = queue
        self.R = recorder
        self.rng = rng
        self.seed = seed
        self.now = 0.0
        self._samples: list[tuple] = []
        self._log: list[tuple] = []

    @property
    def n_users(self) -> int:
        return len(self.U.cell)

    def position(self, u: int, t: float | None = None) -> np.ndarray:
        t = self.now if t is None else t
        x, y = _position(self.U, self.P, u, t)
        return self.G.centers[self.U.cell[u]] + np.array([x, y])

    def user(self, u: int) -> UserState:
        U = self.U
        sub = int(U.sub[u])
        ref = self.G.centers[U.cell[u]] + np.array([U.refx[u], U.refy[u]])
        return UserState(
            id=u, position=tuple(self.position(u)), phase="moving" if U.moving[u] else "paused",
            direction=math.atan2(U.diry[u], U.dirx[u]), phase_end_time=float(U.phase_end[u]),
            current_cell=int(U.cell[u]) + 1, subscription=sub if sub > 0 else None,
            kappa=U.kappa[u].copy(), c_hat_bps=float(U.c_hat[u]),
            c_last_bps=float(U.c_last[u]), last_measure_pos=tuple(ref),
        )

    def cell(self, cell_id: int) -> CellCounters:
        j = cell_id - 1
        return CellCounters(self.C.counts[j].copy(), self.C.avg[j].copy(), float(self.C.tlast[j]))

    def next_event_time(self, u: int, kind: int) -> float:
        return float(self.Q.key[u * N_KINDS + kind])

    def event_counts(self) -> dict:
        return {KIND_NAMES[k]: int(self.R.ctr[C_KIND0 + k]) for k in range(N_KINDS)}

    def audit(self) -> bool:
        return bool(audit(self.U, self.C, self.P, self.G, self.now))

    # -- single operations, mostly for tests and debugging -------------------
    def subscribe(self, u: int, t: float | None = None) -> int:
        t = self.now if t is None else t
        out = int(subscribe(self.U, self.C, self.P, self.G, self.R, u, t, DECISION_PERIODIC))
        self._flush()
        return out

    def rwp_step(self, u: int, t: float) -> float:
        rwp_transition(self.U, self.P, self.G, self.Q, u, t, self.rng)
        return self.next_event_time(u, MOBILITY)

    def handle_handover(self, u: int, to_cell: int, t: float) -> int:
        from_cell = int(self.U.cell[u]) + 1
        if to_cell == from_cell:
            raise ValueError("handover needs two distinct cells")
        p = self.position(u, t)
        off = wrapped_displacement(self.G.centers[to_cell - 1], p, self.grid)
        out = int(relocate(self.U, self.C, self.P, self.G, self.Q, self.R, u, to_cell - 1,
                           float(off[0]), float(off[1]), t, self.rng))
        self._flush()
        return out

    # -- driving -------------------------------------------------------------
    def advance(self, t_stop: float) -> None:
        while True:
            status = run_events(self.U, self.C, self.P, self.G, self.Q, self.R, t_stop, self.rng)
            self._flush()
            if status == DONE:
                break
            if status == AUDIT_FAILED:
                raise SimulationError(
                    f"counter audit failed after event {int(self.R.ctr[C_AUDIT_AT])}")
        self.now = t_stop

    def _flush(self) -> None:
        R = self.R
        k = int(R.ctr[C_SAMPLES])
        if k:
            self._samples.append((R.samp_cell[:k].copy(), R.samp_val[:k].copy(),
                                  R.samp_kind[:k].copy()))
            R.ctr[C_SAMPLES] = 0
        k = int(R.ctr[C_LOG])
        if k:
            self._log.append(tuple(a[:k].copy() for a in
                                   (R.log_t, R.log_kind, R.log_user, R.log_cell, R.log_opt)))
            R.ctr[C_LOG] = 0

    def capacity_samples(self):
        """(cell index, c_hat, decision origin) of every post-warm-up decision."""
        if not self._samples:
            return np.zeros(0, np.int32), np.zeros(0), np.zeros(0, np.int8)
        return tuple(np.concatenate(parts) for parts in zip(*self._samples))

    def event_log(self):
        if not self._log:
            return None
        names = ("time", "kind", "user", "cell", "option")
        cols = [np.concatenate(parts) for parts in zip(*self._log)]
        return dict(zip(names, cols))


def _hex_normals() -> np.ndarray:
    ang = np.deg2rad(60.0 * np.arange(6))
    return np.column_stack([np.cos(ang), np.sin(ang)])


def init_state(cfg: ScenarioConfig, seed, grid: Grid | None = None, *,
               sample_buffer: int = 1 << 20, log_buffer: int = 0,
               record_samples: bool = True, initial_subscriptions: bool = True) -> SimState:
    """Place users, draw their perturbations, take first measurements, subscribe.

    Users start paused at uniform positions inside their initial cell.
    Initial subscriptions are taken one user at a time in random order.
    """
    cfg.validate()
    grid = grid or build_grid(cfg.isd_m)
    rng = np.random.default_rng(seed)
    n_cells = grid.n_cells
    S = cfg.n_nst
    n = cfg.users_per_cell * n_cells

    bs, bore, cochan, lat, lat_inv = kernel_geometry(grid)
    geom = Geometry(
        centers=np.ascontiguousarray(grid.centers), edge_nb=np.ascontiguousarray(grid.edge_neighbors - 1),
        normals=_hex_normals(), bs=bs, bore=bore, cochan=cochan, lat=lat, lat_inv=lat_inv,
        rp=cfg.radio.packed(), weights=np.ascontiguousarray(cfg.weight_table()),
    )
    v0 = cfg.mu * math.log(cfg.r0_bps) if cfg.r0_bps > 0 else -np.inf
    params = Params(
        speed=cfg.speed_mps, t_pause_max=cfg.t_pause_max_s, t_walk_max=cfg.t_walk_max_s,
        d_update=cfg.d_update_m, t_update=cfg.t_update_s, lam=cfg.ema_lambda, t_sub=cfg.t_sub_s,
        mu=cfg.mu, price=cfg.price, v0=v0, warmup=cfg.warmup_s, apothem=grid.apothem,
        audit_every=int(cfg.audit_every), record_samples=bool(record_samples),
        ho_reset=bool(cfg.handover_resets_estimate),
    )

    cell0 = np.repeat(np.arange(n_cells, dtype=np.int64), cfg.users_per_cell)
    xy = sample_in_cell(cell0 + 1, n, grid, rng)
    off = xy - grid.centers[cell0]
    kappa = rng.gumbel(loc=-EULER_GAMMA * cfg.nu, scale=cfg.nu, size=(n, S + 1))
    users = Users(
        cell=cell0, ox=off[:, 0].copy(), oy=off[:, 1].copy(), moving=np.zeros(n, np.int64),
        dirx=np.ones(n), diry=np.zeros(n), t0=np.zeros(n),
        phase_end=rng.uniform(0.0, cfg.t_pause_max_s, n), sub=np.zeros(n, np.int64),
        kappa=kappa, c_last=np.zeros(n), c_hat=np.zeros(n),
        ema_phase=rng.uniform(0.0, cfg.t_update_s, n), ema_k=np.zeros(n, np.int64),
        refx=off[:, 0].copy(), refy=off[:, 1].copy(), ho_edge=np.full(n, -1, np.int64),
    )
    counts = np.zeros((n_cells, S + 1), np.int64)
    np.add.at(counts, (cell0, 0), 1)
    cells = Cells(counts=counts, avg=counts.astype(float), tlast=np.zeros(n_cells))

    key = np.full(n * N_KINDS, np.inf)
    key[MOBILITY::N_KINDS] = users.phase_end
    key[SUBSCRIPTION::N_KINDS] = rng.uniform(0.0, cfg.t_sub_s, n)
    queue = Queue(heap=np.zeros(n * N_KINDS, np.int64), pos=np.zeros(n * N_KINDS, np.int64), key=key)
    _heapify(queue)

    recorder = Recorder(
        ctr=np.zeros(C_KIND0 + N_KINDS, np.int64),
        samp_cell=np.zeros(sample_buffer, np.int32), samp_val=np.zeros(sample_buffer),
        samp_kind=np.zeros(sample_buffer, np.int8),
        log_t=np.zeros(log_buffer), log_kind=np.zeros(log_buffer, np.int8),
        log_user=np.zeros(log_buffer, np.int64), log_cell=np.zeros(log_buffer, np.int64),
        log_opt=np.zeros(log_buffer, np.int64),
    )
    state = SimState(cfg, grid, params, geom, users, cells, queue, recorder, rng, seed)
    _initial_measurements(users, params, geom, rng)
    if initial_subscriptions:
        for u in rng.permutation(n):
            if recorder.ctr[C_SAMPLES] >= sample_buffer:
                state._flush()
            subscribe(users, cells, params, geom, recorder, int(u), 0.0, DECISION_INITIAL)
        state._flush()
    return state


@njit(cache=True)
def _initial_measurements(U, P, G, rng):
    for u in range(U.cell.shape[0]):
        U.c_last[u] = _measure_here(U, P, G, u, 0.0, rng)
        U.c_hat[u] = U.c_last[u]


# --- results --------------------------------------------------------------------

@dataclass
class SimResult:
    sigma_hat: np.ndarray        # (cells,)
    rho_hat: np.ndarray          # (cells, S)
    n_hat: np.ndarray            # (cells,)
    averages: np.ndarray         # (cells, S + 1) time averages, column 0 unsubscribed
    capacity_stats: list         # CapacityStats per cell (None when no samples)
    virtual_time: float
    warmup: float
    seed: object
    event_counts: dict

    @property
    def cell_ids(self) -> np.ndarray:
        return np.arange(1, len(self.sigma_hat) + 1)

    def pooled_capacity_stats(self) -> CapacityStats:
        return self._pooled

    def grid_sigma(self) -> float:
        """Grid-level subscription ratio from pooled time averages."""
        n_hat = self.averages.sum()
        return float((n_hat - self.averages[:, 0].sum()) / n_hat)

    def grid_rho(self) -> np.ndarray:
        subs = self.averages[:, 1:].sum(axis=0)
        return subs / subs.sum()


def indicators_from_averages(avg: np.ndarray):
    """Per-cell n-hat, sigma-hat and rho-hat from the time-average table."""
    n_hat = avg.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma = (n_hat - avg[:, 0]) / n_hat
        rho = avg[:, 1:] / (sigma * n_hat)[:, None]
    return n_hat, sigma, rho


def per_cell_stats(cells, values, n_cells: int) -> list:
    order = np.argsort(cells, kind="stable")
    cells, values = cells[order], values[order]
    bounds = np.searchsorted(cells, np.arange(n_cells + 1))
    out = []
    for j in range(n_cells):
        v = values[bounds[j]:bounds[j + 1]]
        out.append(CapacityStats.from_samples(v) if v.size >= 2 else None)
    return out


def run(cfg: ScenarioConfig, seed=None, *, grid: Grid | None = None, log_events: bool = False,
        progress=None) -> SimResult:
    """One replication, deterministic for a given (config, seed)."""
    seed = cfg.seed if seed is None else seed
    state = init_state(cfg, seed, grid, log_buffer=(1 << 16) if log_events else 0)
    # advance in slices so a caller can report progress
    n_slices = 20
    for k in range(1, n_slices + 1):
        t = cfg.duration_s * k / n_slices
        state.advance(t)
        if progress is not None:
            progress(t, cfg.duration_s)
    finish_averages(state.C, state.P, cfg.duration_s)
    result = collect(state)
    if log_events:
        result.event_log = state.event_log()
    return result


def collect(state: SimState) -> SimResult:
    n_hat, sigma, rho = indicators_from_averages(state.C.avg)
    cells, vals, _ = state.capacity_samples()
    stats = per_cell_stats(cells, vals, state.grid.n_cells)
    res = SimResult(
        sigma_hat=sigma, rho_hat=rho, n_hat=n_hat, averages=state.C.avg.copy(),
        capacity_stats=stats, virtual_time=state.now, warmup=state.cfg.warmup_s,
        seed=state.seed, event_counts=state.event_counts(),
    )
    res._pooled = CapacityStats.from_samples(vals) if vals.size >= 2 else None
    return res
