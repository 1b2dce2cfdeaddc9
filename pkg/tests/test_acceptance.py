"""End-to-end acceptance checks, one verdict line per criterion.

The reference experiment and the trend checks run long (tens of minutes on
one core); everything else finishes in seconds.
"""
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from slicesim import harness, sim
from slicesim.analytic import AnalyticInputs, allocate, rho, sigma_residual, solve_sigma
from slicesim.config import ScenarioConfig, case_shares
from slicesim.logit import EULER_GAMMA, ChoiceParams, static_choice_probabilities

BETA = 2.0 / 3.0

# printed tenant fractions at beta = 2/3, keyed by number of tenants
PRINTED_RHO = {
    2: [0.387, 0.613],
    3: [0.214, 0.340, 0.446],
    4: [0.139, 0.221, 0.289, 0.351],
    5: [0.099, 0.157, 0.206, 0.249, 0.289],
    6: [0.075, 0.118, 0.155, 0.188, 0.218, 0.246],
    7: [0.059, 0.093, 0.122, 0.148, 0.171, 0.193, 0.214],
}


def test_closed_form_fractions(verdict):
    worst, misses = 0.0, []
    for S, printed in PRINTED_RHO.items():
        dev = np.abs(rho(np.array(case_shares(S)), BETA) - printed)
        worst = max(worst, float(dev.max()))
        misses += [f"|S|={S} rho_{i + 1} off by {d:.6f}" for i, d in enumerate(dev) if d > 5e-4]
    ok = not misses
    verdict("1 tenant fractions", ok, f"max deviation {worst:.6f} (tol 0.0005)"
            + ("; " + ", ".join(misses) if misses else ""))
    assert ok, misses


def test_solver_contract(verdict):
    rng = np.random.default_rng(2024)
    n_inst = 1000
    outside, big_residual, non_monotone, worst = 0, 0, 0, 0.0
    for _ in range(n_inst):
        g = 10.0 ** rng.uniform(-3, 3)
        b = rng.uniform(0.05, 0.95)
        w = rng.uniform(0.05, 1.0, size=rng.integers(1, 9))
        inp = AnalyticInputs(w, b, g)
        s = solve_sigma(inp)
        r = abs(sigma_residual(s, inp))
        worst = max(worst, r)
        outside += not 0.0 < s < 1.0
        big_residual += not r < 1e-12
        path = [solve_sigma(AnalyticInputs(w, b, gg)) for gg in np.logspace(-3, 3, 50)]
        non_monotone += bool(np.any(np.diff(path) < 0))
    ok = outside == 0 and big_residual == 0 and non_monotone == 0
    verdict("2 solver contract", ok,
            f"{outside} outside (0,1), {big_residual}/{n_inst} with |F| >= 1e-12 "
            f"(worst {worst:.2e}), {non_monotone} non-monotone in gamma")
    assert ok


def test_static_logit_oracle(verdict):
    rng = np.random.default_rng(77)
    n_cfg, n_draw = 24, 100_000
    outliers, checks, worst = 0, 0, 0.0
    for _ in range(n_cfg):
        S = int(rng.integers(1, 8))
        w = rng.uniform(0.1, 1.0, S)
        counts = np.concatenate([[0], rng.integers(0, 60, S)]).astype(np.int64)
        c = rng.uniform(5e6, 60e6)
        params = ChoiceParams(mu=rng.uniform(0.5, 3.0), nu=rng.uniform(0.3, 2.0),
                              r0_bps=rng.choice([0.0, rng.uniform(100e3, 1e6)]))
        rates = w / w.sum() * c / (counts[1:] + 1)
        p = static_choice_probabilities(rates, params)
        kappa = rng.gumbel(-EULER_GAMMA * params.nu, params.nu, size=(n_draw, S + 1))
        v0 = params.no_subscription_utility
        picks = sim.decide_batch(w, counts, np.full(n_draw, c), kappa, params.mu, params.price, v0)
        freq = np.bincount(picks, minlength=S + 1) / n_draw
        for i in range(S + 1):
            if p[i] in (0.0, 1.0):
                outliers += freq[i] != p[i]
                continue
            z = abs(freq[i] - p[i]) / math.sqrt(p[i] * (1 - p[i]) / n_draw)
            worst = max(worst, z)
            outliers += z > 3.0
            checks += 1
    ok = outliers <= 1
    verdict("3 static logit oracle", ok,
            f"{outliers} outliers beyond 3 SE in {checks} option checks over {n_cfg} configs "
            f"(max |z| {worst:.2f})")
    assert ok


def test_streaming_estimator(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 400))
        times = np.concatenate([[0.0], np.cumsum(rng.exponential(rng.uniform(0.01, 50), n - 1))])
        counts = rng.integers(0, 300, n)
        t_end = times[-1] + rng.exponential(10.0)
        avg, t_prev = 0.0, 0.0
        for k in range(1, n):
            avg = sim.update_time_average(avg, t_prev, times[k], counts[k - 1])
            t_prev = times[k]
        avg = sim.update_time_average(avg, t_prev, t_end, counts[-1])
        batch = np.sum(np.diff(np.append(times, t_end)) * counts) / t_end
        worst = max(worst, abs(avg - batch) / max(1.0, abs(batch)))
    ok = worst <= 1e-9
    verdict("4 streaming averages", ok, f"max deviation {worst:.2e} over 1000 logs (tol 1e-9)")
    assert ok


@pytest.fixture(scope="module")
def reference_row():
    base = ScenarioConfig()
    warm = 10 * base.t_sub_s
    cfg = base.replace(warmup_s=warm, duration_s=warm + 1e5)
    return harness.run_point(cfg, "ref", "-", reps=5, seed=20240)


def test_reference_experiment(verdict, reference_row):
    r = reference_row
    checks = {
        "err median-capacity <= 0.03": r.err_median_cap <= 0.03,
        "err modified-beta <= 0.03": r.err_mod_beta <= 0.03,
        "err mean-capacity > err median-capacity": r.err_mean_cap > r.err_median_cap,
        "rho err <= 0.02": r.rho_err <= 0.02,
        "rho err (modified beta) <= 0.02": r.rho_err_mod_beta <= 0.02,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict("5 reference experiment", ok,
            f"sigma_hat {r.sigma_hat:.4f} +/- {r.sigma_ci:.4f}; errors mean {r.err_mean_cap:.4f}, "
            f"median {r.err_median_cap:.4f}, modified {r.err_mod_beta:.4f}; rho errors "
            f"{r.rho_err:.4f} / {r.rho_err_mod_beta:.4f}" + (f"; failed: {failed}" if failed else ""))
    assert ok, failed


def test_zero_reservation_rate(verdict):
    cfg = ScenarioConfig(users_per_cell=20, r0_bps=0.0, warmup_s=500.0, duration_s=5000.0)
    rep = harness.run_replication(cfg, 11)
    ok = rep.sigma_hat == 1.0 and bool(np.all(rep.sigma_hat_cells == 1.0))
    verdict("6 zero reservation rate", ok,
            f"grid sigma_hat {rep.sigma_hat!r}, per-cell min {rep.sigma_hat_cells.min()!r}")
    assert ok


def test_conservation(verdict):
    cfg = ScenarioConfig(users_per_cell=20, warmup_s=500.0, duration_s=8000.0, audit_every=1000)
    state = sim.init_state(cfg, 9)
    n0 = state.C.counts.sum()
    population_ok = True
    for t in np.linspace(800.0, cfg.duration_s, 10):
        state.advance(t)  # raises if any checkpoint audit fails
        population_ok &= state.C.counts.sum() == n0 == state.n_users
    n_audits = int(state.R.ctr[sim.C_EVENTS]) // cfg.audit_every
    rng = np.random.default_rng(4)
    alloc_err = 0.0
    for _ in range(1000):
        w = rng.uniform(1e-3, 1.0, rng.integers(1, 9))
        c = 10.0 ** rng.uniform(4, 9)
        alloc_err = max(alloc_err, abs(allocate(w, c).sum() - c) / c)
    ok = bool(population_ok) and n_audits > 0 and alloc_err <= 1e-12
    verdict("7 conservation", ok,
            f"{n_audits} audits passed, population {n0} constant: {bool(population_ok)}, "
            f"max allocation error {alloc_err:.1e}")
    assert ok


def test_mobility_uniformity(verdict):
    # only user 0 is observed; mobility of different users is independent
    cfg = ScenarioConfig(users_per_cell=1, duration_s=1e6, warmup_s=0.0)
    state = sim.init_state(cfg, 31, record_samples=False)
    spacing = 5000.0
    visits = []
    for t in np.arange(spacing, cfg.duration_s + 1.0, spacing):
        state.advance(t)
        visits.append(int(state.U.cell[0]))
    counts = np.bincount(visits, minlength=state.grid.n_cells)
    p = float(chisquare(counts).pvalue)
    ok = p > 0.01
    verdict("8 mobility uniformity", ok,
            f"chi-square p = {p:.3f} from {len(visits)} samples spaced {spacing:.0f} s")
    assert ok


TREND_POINTS = {
    "a": ([100, 250, 350], "decreasing"),
    "c": ([200e3, 500e3, 700e3], "decreasing"),
    "d": ([0.1, 0.2, 0.35], "increasing"),
}


def test_error_trends(verdict):
    # short runs (2 x 2e4 s after a 10 t_s warm-up); the mean-capacity error is
    # bias-dominated at these lengths, the median one mostly noise
    base = ScenarioConfig()
    cache, lines, ok = {}, [], True
    for case, (points, direction) in TREND_POINTS.items():
        errs = []
        for v in points:
            cfg = harness.case_config(case, v, base)
            cfg = cfg.replace(warmup_s=10 * cfg.t_sub_s, duration_s=10 * cfg.t_sub_s + 2e4)
            if cfg not in cache:
                cache[cfg] = harness.run_point(cfg, reps=2, seed=3).err_mean_cap
            errs.append(cache[cfg])
        d = np.diff(errs)
        good = bool(np.all(d < 0) if direction == "decreasing" else np.all(d > 0))
        ok &= good
        lines.append(f"{case} {direction} {'ok' if good else 'NOT'} "
                     f"[{', '.join(f'{e:.4f}' for e in errs)}]")
    verdict("trends (mean-capacity error)", ok, "; ".join(lines))
    assert ok
