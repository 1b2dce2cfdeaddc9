"""Replicated experiments, analytic comparison and tabular output."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats as sps

from slicesim import analytic, sim
from slicesim.config import ScenarioConfig, case_shares
from slicesim.grid import build_grid
from slicesim.radio import CapacityStats, estimate_capacity_stats

CASES = ("a", "b", "c", "d", "e")
CASE_PARAMETER = {
    "a": "users_per_cell",
    "b": "n_nst",
    "c": "r0_bps",
    "d": "ema_lambda",
    "e": "lambda_t_sub",
}
CASE_E_DEFAULT = (12.0, 24.0, 36.0, 48.0, 56.0, 72.0)


def relative_error(simulated, analytic_value) -> float:
    if simulated == 0:
        raise ValueError("relative error is undefined for a zero simulated value")
    return abs(simulated - analytic_value) / abs(simulated)


def confidence_interval(values, level: float = 0.99) -> tuple[float, float]:
    """Student-t interval on the mean: returns (mean, half-width)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("a confidence interval needs at least two values")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = float(x.mean())
    s = float(x.std(ddof=1))
    if s == 0.0:
        return m, 0.0
    q = sps.t.ppf(0.5 + level / 2.0, df=x.size - 1)
    return m, float(q * s / math.sqrt(x.size))


# --- sweep grids ----------------------------------------------------------------

def case_points(case: str, case_e_grid=CASE_E_DEFAULT) -> list:
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")
    return {
        "a": [100, 150, 200, 250, 300, 350],
        "b": [2, 3, 4, 5, 6, 7],
        "c": [200e3, 300e3, 400e3, 500e3, 600e3, 700e3],
        "d": [0.1, 0.15, 0.2, 0.25, 0.3, 0.35],
        "e": [float(v) for v in case_e_grid],
    }[case]


def case_config(case: str, value, base: ScenarioConfig) -> ScenarioConfig:
    """The base scenario with one case parameter set to ``value``."""
    if case == "a":
        return base.replace(users_per_cell=int(value))
    if case == "b":
        return base.replace(shares=case_shares(int(value)), weights=None)
    if case == "c":
        return base.replace(r0_bps=float(value))
    if case == "d":
        return base.replace(ema_lambda=float(value), t_sub_s=24.0 / float(value))
    if case == "e":
        return base.replace(t_sub_s=float(value) / base.ema_lambda)
    raise ValueError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")


# --- replicated runs --------------------------------------------------------------

@dataclass
class Replication:
    seed: int
    sigma_hat: float             # grid level
    rho_hat: np.ndarray          # grid level, (S,)
    sigma_hat_cells: np.ndarray
    rho_hat_cells: np.ndarray
    n_hat: np.ndarray            # per cell
    sample_cells: np.ndarray
    sample_values: np.ndarray
    event_counts: dict


def replication_seeds(master_seed: int, reps: int) -> list[int]:
    ss = np.random.SeedSequence(master_seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(reps)]


def run_replication(cfg: ScenarioConfig, seed: int) -> Replication:
    state = sim.init_state(cfg, seed)
    state.advance(cfg.duration_s)
    sim.finish_averages(state.C, state.P, cfg.duration_s)
    n_hat, sig, rho = sim.indicators_from_averages(state.C.avg)
    cells, vals, _ = state.capacity_samples()
    subs = state.C.avg[:, 1:].sum(axis=0)
    return Replication(
        seed=seed, sigma_hat=float(subs.sum() / state.C.avg.sum()), rho_hat=subs / subs.sum(),
        sigma_hat_cells=sig, rho_hat_cells=rho, n_hat=n_hat,
        sample_cells=cells, sample_values=vals, event_counts=state.event_counts(),
    )


def run_replications(cfg: ScenarioConfig, reps: int | None = None, seed: int | None = None,
                     workers: int = 1) -> list[Replication]:
    reps = cfg.replications if reps is None else reps
    seeds = replication_seeds(cfg.seed if seed is None else seed, reps)
    if workers <= 1:
        out = [run_replication(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run_replication, [cfg] * reps, seeds))
    return out


def is_homogeneous(cfg: ScenarioConfig) -> bool:
    w = cfg.weight_table()
    return bool(np.all(w == w[0]))


def capacity_statistics(cfg: ScenarioConfig, reps: list[Replication], *, pooled: bool,
                        seed: int | None = None) -> list[CapacityStats]:
    """Per-cell capacity statistics from the configured source.

    With ``pooled`` every cell receives the statistics of all cells together.
    """
    n_cells = len(reps[0].n_hat) if reps else 57
    if cfg.capacity_source == "subscription":
        cells = np.concatenate([r.sample_cells for r in reps])
        vals = np.concatenate([r.sample_values for r in reps])
        if pooled:
            return [CapacityStats.from_samples(vals)] * n_cells
        return sim.per_cell_stats(cells, vals, n_cells)
    grid = build_grid(cfg.isd_m)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if pooled:
        # every cell is equivalent under wrap-around, so one cell stands for all
        st = estimate_capacity_stats(1, grid, cfg.radio, cfg.capacity_samples, rng)
        return [st] * n_cells
    return [estimate_capacity_stats(c, grid, cfg.radio, cfg.capacity_samples, rng)
            for c in range(1, n_cells + 1)]


@dataclass
class PointSummary:
    sigma_hat: float
    sigma_ci: float
    rho_hat: np.ndarray
    indicators: dict             # variant -> IndicatorSet
    stats: list
    n_hat: np.ndarray
    homogeneous: bool


def summarize(cfg: ScenarioConfig, reps: list[Replication], level: float = 0.99) -> PointSummary:
    """Simulated indicators with CI plus the three analytic variants."""
    homog = is_homogeneous(cfg)
    sig = [r.sigma_hat for r in reps]
    if len(sig) >= 2:
        s_mean, s_ci = confidence_interval(sig, level)
    else:
        s_mean, s_ci = float(sig[0]), float("nan")
    n_hat = np.mean([r.n_hat for r in reps], axis=0)
    st = capacity_statistics(cfg, reps, pooled=homog)
    weights = cfg.weight_table()
    if homog:
        n_hat_used = np.full_like(n_hat, n_hat.mean())
    else:
        n_hat_used = n_hat
    ind = {v: analytic.compute_indicators(st, n_hat_used, weights, cfg.choice, v)
           for v in analytic.VARIANTS}
    if homog:
        for v, s in ind.items():
            if np.ptp(s.sigma) != 0 or np.any(np.ptp(s.rho, axis=0) != 0):
                raise AssertionError(f"{v} indicators differ between cells of a homogeneous grid")
    rho_hat = np.mean([r.rho_hat for r in reps], axis=0)
    return PointSummary(s_mean, s_ci, rho_hat, ind, st, n_hat, homog)


# --- comparison rows --------------------------------------------------------------

@dataclass
class ComparisonRow:
    case: str
    parameter: str
    value: float
    replications: int
    sigma_hat: float
    sigma_ci: float
    sigma_mean_cap: float
    sigma_median_cap: float
    sigma_mod_beta: float
    err_mean_cap: float
    err_median_cap: float
    err_mod_beta: float
    rho_err: float
    rho_err_mod_beta: float


COLUMNS = tuple(f.name for f in fields(ComparisonRow))


def _grid_sigma(ind, n_hat) -> float:
    return float(np.sum(ind.sigma * n_hat) / np.sum(n_hat))


def _mean_rho_error(rho_hat, rho_ana) -> float:
    return float(np.mean(np.abs(rho_hat - rho_ana) / rho_hat))


def comparison_row(case: str, parameter: str, value, summary: PointSummary, reps: int) -> ComparisonRow:
    ind = summary.indicators
    s = {v: _grid_sigma(ind[v], summary.n_hat) for v in analytic.VARIANTS}
    rho_b = ind["mean-capacity"].rho[0]
    rho_mod = ind["modified-beta"].rho[0]
    if not summary.homogeneous:
        # tenant fractions pooled over the grid, weighted by subscriber counts
        w = (ind["mean-capacity"].sigma * summary.n_hat)[:, None]
        rho_b = (ind["mean-capacity"].rho * w).sum(axis=0) / w.sum()
        w = (ind["modified-beta"].sigma * summary.n_hat)[:, None]
        rho_mod = (ind["modified-beta"].rho * w).sum(axis=0) / w.sum()
    sh = summary.sigma_hat
    return ComparisonRow(
        case=case, parameter=parameter, value=float(value), replications=reps,
        sigma_hat=sh, sigma_ci=summary.sigma_ci,
        sigma_mean_cap=s["mean-capacity"], sigma_median_cap=s["median-capacity"],
        sigma_mod_beta=s["modified-beta"],
        err_mean_cap=relative_error(sh, s["mean-capacity"]),
        err_median_cap=relative_error(sh, s["median-capacity"]),
        err_mod_beta=relative_error(sh, s["modified-beta"]),
        rho_err=_mean_rho_error(summary.rho_hat, rho_b),
        rho_err_mod_beta=_mean_rho_error(summary.rho_hat, rho_mod),
    )


def run_point(cfg: ScenarioConfig, case: str = "-", parameter: str = "-", value=float("nan"),
              reps: int | None = None, seed: int | None = None, workers: int = 1,
              level: float = 0.99) -> ComparisonRow:
    reps = cfg.replications if reps is None else reps
    runs = run_replications(cfg, reps, seed, workers)
    return comparison_row(case, parameter, value, summarize(cfg, runs, level), reps)


def run_case(case: str, config: ScenarioConfig, *, reps: int | None = None, seed: int | None = None,
             points=None, workers: int = 1, progress=None) -> list[ComparisonRow]:
    pts = case_points(case) if points is None else list(points)
    rows = []
    for v in pts:
        cfg = case_config(case, v, config)
        rows.append(run_point(cfg, case, CASE_PARAMETER[case], v, reps, seed, workers))
        if progress is not None:
            progress(rows[-1])
    return rows


def sweep(parameter: str, values, config: ScenarioConfig, *, reps: int | None = None,
          seed: int | None = None, workers: int = 1, progress=None) -> list[ComparisonRow]:
    """Vary any ScenarioConfig field over explicit values."""
    known = {f.name for f in fields(ScenarioConfig)}
    if parameter not in known:
        raise ValueError(f"unknown parameter {parameter!r}")
    rows = []
    for v in values:
        cfg = config.replace(**{parameter: v})
        rows.append(run_point(cfg, "sweep", parameter, v if np.isscalar(v) else float("nan"),
                              reps, seed, workers))
        if progress is not None:
            progress(rows[-1])
    return rows


# --- output -----------------------------------------------------------------------

def emit(rows, path, fmt: str = "csv") -> Path:
    """Write rows in a fixed column order (see COLUMNS)."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh)
                w.writerow(COLUMNS)
                for r in rows:
                    w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
            else:
                json.dump({"columns": list(COLUMNS), "rows": [asdict(r) for r in rows]}, fh, indent=1)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def read_rows(path, fmt: str | None = None) -> list[ComparisonRow]:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    types = {f.name: f.type for f in fields(ComparisonRow)}

    def conv(name, v):
        t = types[name]
        return v if t == "str" else int(v) if t == "int" else float(v)

    if fmt == "json":
        doc = json.loads(path.read_text())
        return [ComparisonRow(**{k: conv(k, d[k]) for k in COLUMNS}) for d in doc["rows"]]
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [ComparisonRow(**{k: conv(k, d[k]) for k in COLUMNS}) for d in reader]


STATS_COLUMNS = ("cell_id", "mean_bps", "median_bps", "var_log_c", "n_samples", "seed", "n_hat")


def write_stats(stats, path, n_hat=None, seed=None, cell_ids=None) -> Path:
    """Per-cell capacity statistics; ``n_hat`` and ``seed`` columns may be blank."""
    path = Path(path)
    cell_ids = range(1, len(stats) + 1) if cell_ids is None else cell_ids
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for k, (cid, st) in enumerate(zip(cell_ids, stats)):
            nh = "" if n_hat is None else repr(float(n_hat[k]))
            w.writerow([cid, repr(st.mean_bps), repr(st.median_bps), repr(st.var_log_c),
                        st.sample_count, "" if seed is None else seed, nh])
    return path


def read_stats(path):
    """Returns ({cell_id: CapacityStats}, {cell_id: n_hat} or None)."""
    stats, n_hat = {}, {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(STATS_COLUMNS[:5]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for d in reader:
            cid = int(d["cell_id"])
            stats[cid] = CapacityStats(float(d["mean_bps"]), float(d["median_bps"]),
                                       float(d["var_log_c"]), int(d["n_samples"]))
            if d.get("n_hat"):
                n_hat[cid] = float(d["n_hat"])
    if n_hat and set(n_hat) != set(stats):
        raise ValueError(f"{path}: n_hat given for some cells only")
    return stats, (n_hat or None)
