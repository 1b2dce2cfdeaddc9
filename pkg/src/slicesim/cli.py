"""Command-line entry point: ``slicesim <command> ...``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from slicesim import analytic, harness, sim
from slicesim.config import ConfigError, ScenarioConfig, load_config
from slicesim.grid import build_grid, dump_csv
from slicesim.radio import estimate_capacity_stats


def _config(path) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_grid(args) -> None:
    dump_csv(build_grid(_config(args.config).isd_m), args.out)


def cmd_capstats(args) -> None:
    cfg = _config(args.config)
    grid = build_grid(cfg.isd_m)
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    n = args.samples or cfg.capacity_samples
    cells = args.cells or list(range(1, grid.n_cells + 1))
    stats = [estimate_capacity_stats(c, grid, cfg.radio, n, rng) for c in cells]
    harness.write_stats(stats, args.out, seed=seed, cell_ids=cells)


def cmd_simulate(args) -> None:
    cfg = _config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    state = sim.init_state(cfg, seed, log_buffer=(1 << 16) if args.log else 0)
    steps = 20
    for k in range(1, steps + 1):
        state.advance(cfg.duration_s * k / steps)
        if args.verbose:
            _log(f"t = {state.now:.0f} s")
    sim.finish_averages(state.C, state.P, cfg.duration_s)
    res = sim.collect(state)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        S = res.rho_hat.shape[1]
        w.writerow(["cell_id", "sigma_hat"] + [f"rho_hat_{i}" for i in range(1, S + 1)]
                   + ["n_hat", "seed", "virtual_time"])
        for k in range(len(res.sigma_hat)):
            w.writerow([k + 1, repr(res.sigma_hat[k])] + [repr(x) for x in res.rho_hat[k]]
                       + [repr(res.n_hat[k]), seed, repr(res.virtual_time)])
    if args.capstats:
        stats = res.capacity_stats
        if any(s is None for s in stats):
            raise ConfigError("too few post-warm-up decisions to estimate capacity statistics")
        harness.write_stats(stats, args.capstats, res.n_hat, seed=seed)
    if args.log:
        log = state.event_log()
        with Path(args.log).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "user", "cell_id", "option"])
            if log is not None:
                for t, k, u, c, o in zip(*log.values()):
                    w.writerow([repr(float(t)), sim.KIND_NAMES[k], int(u), int(c) + 1, int(o)])


def cmd_analytic(args) -> None:
    cfg = _config(args.config)
    stats, n_hat = harness.read_stats(args.stats)
    cells = sorted(stats)
    if n_hat is None:
        n_hat = {c: float(cfg.users_per_cell) for c in cells}
    weights = cfg.weight_table()[np.asarray(cells) - 1]
    variants = [args.variant] if args.variant else list(analytic.VARIANTS)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        S = cfg.n_nst
        w.writerow(["cell_id", "variant", "sigma"] + [f"rho_{i}" for i in range(1, S + 1)]
                   + ["beta_used", "gamma_used"])
        for v in variants:
            ind = analytic.compute_indicators(stats, n_hat, weights, cfg.choice, v)
            for k, cid in enumerate(ind.cell_ids):
                w.writerow([int(cid), v, repr(float(ind.sigma[k]))]
                           + [repr(float(x)) for x in ind.rho[k]]
                           + [repr(float(ind.beta_used[k])), repr(float(ind.gamma_used[k]))])


def _progress(row) -> None:
    _log(f"{row.parameter}={row.value:g}: sigma_hat={row.sigma_hat:.4f} "
         f"err(mean)={row.err_mean_cap:.4f} err(median)={row.err_median_cap:.4f} "
         f"err(mod)={row.err_mod_beta:.4f}")


def _out_path(out: str, stem: str, fmt: str) -> Path:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{stem}.{fmt}"


def cmd_compare(args) -> None:
    cfg = _config(args.config)
    rows = harness.run_case(args.case, cfg, reps=args.reps, seed=args.seed,
                            points=harness.case_points(args.case, cfg.case_e_grid),
                            workers=args.workers, progress=_progress)
    path = harness.emit(rows, _out_path(args.out, f"case_{args.case}", args.format), args.format)
    _log(f"wrote {path}")


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def cmd_sweep(args) -> None:
    cfg = _config(args.config)
    values = [_parse_value(v) for v in args.values]
    rows = harness.sweep(args.param, values, cfg, reps=args.reps, seed=args.seed,
                         workers=args.workers, progress=_progress)
    path = harness.emit(rows, _out_path(args.out, f"sweep_{args.param}", args.format), args.format)
    _log(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicesim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML/JSON scenario file (defaults when omitted)")
        sp.add_argument("--out", required=True, help=out_help)

    sp = sub.add_parser("grid", help="write the cell layout and frequency plan")
    common(sp, "CSV file")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("capstats", help="capacity statistics from random positions")
    common(sp, "CSV file")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--cells", type=int, nargs="*")
    sp.set_defaults(func=cmd_capstats)

    sp = sub.add_parser("simulate", help="one simulation run")
    common(sp, "CSV file with per-cell indicators")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--capstats", help="also write per-cell decision-time capacity statistics")
    sp.add_argument("--log", help="per-event debug log (CSV)")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analytic", help="analytic indicators from capacity statistics")
    common(sp, "CSV file")
    sp.add_argument("--stats", required=True, help="capacity statistics CSV")
    sp.add_argument("--variant", choices=analytic.VARIANTS)
    sp.set_defaults(func=cmd_analytic)

    for name, func, helptext in (("compare", cmd_compare, "one parameter-sweep case"),
                                 ("sweep", cmd_sweep, "explicit parameter grid")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, "output directory")
        if name == "compare":
            sp.add_argument("--case", required=True, choices=harness.CASES)
        else:
            sp.add_argument("--param", required=True, help="ScenarioConfig field name")
            sp.add_argument("--values", required=True, nargs="+")
        sp.add_argument("--reps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
