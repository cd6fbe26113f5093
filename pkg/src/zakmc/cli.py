"""Experiment runner: reproduces the benchmark tables and cost comparisons.

Every subcommand writes CSV files whose first line is a metadata comment
(seed, configuration hash, package version); identical configuration and
seed produce byte-identical files regardless of the worker count.

Exit codes: 0 success, 2 configuration error, 3 stability refusal,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from .estimators import (
    ALPHA_GRID,
    EstimatorError,
    Setup,
    alpha_search,
    fit_slopes,
    full_grid_mc,
    full_grid_mlmc,
    level_difference_table,
    mixed_difference_table,
    mlmc_run,
    sparse_mc,
)
from .model import ModelParams
from .noise import SeedSpec, sample_path, write_path
from .solver import DEFAULT_BOUNDS, AdiSolver, Grid2D, StabilityError, dirac_init
from .spectral import decay_check, decay_constant, moment_e, moment_e2

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_NUMERICAL = 4

_CONFIG_FLOATS = ("mu_x", "mu_y", "rho_x", "rho_y", "rho_xy", "T", "x0", "y0",
                  "h0", "k0", "lam", "x_min", "x_max", "y_min", "y_max")
_CONFIG_INTS = ("l_star", "max_level", "n_pilot", "threads", "seed")


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    """Flat ``key=value`` file; blank lines and ``#`` comments ignored."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key in _CONFIG_FLOATS:
                    values[key] = float(value)
                elif key in _CONFIG_INTS:
                    values[key] = int(value)
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from err
    return values


def build_setup(args) -> Setup:
    cfg = load_config(args.config) if args.config else {}
    for key in _CONFIG_FLOATS + _CONFIG_INTS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    base = ModelParams.benchmark_defaults()
    try:
        params = ModelParams(
            mu_x=cfg.get("mu_x", base.mu_x), mu_y=cfg.get("mu_y", base.mu_y),
            rho_x=cfg.get("rho_x", base.rho_x), rho_y=cfg.get("rho_y", base.rho_y),
            rho_xy=cfg.get("rho_xy", base.rho_xy), T=cfg.get("T", base.T),
            x0=cfg.get("x0", base.x0), y0=cfg.get("y0", base.y0))
    except ValueError as err:
        raise ConfigError(str(err)) from err
    bounds = (cfg.get("x_min", DEFAULT_BOUNDS[0]), cfg.get("x_max", DEFAULT_BOUNDS[1]),
              cfg.get("y_min", DEFAULT_BOUNDS[2]), cfg.get("y_max", DEFAULT_BOUNDS[3]))
    threads = cfg.get("threads", min(8, os.cpu_count() or 1))
    return Setup(
        params=params,
        h0=cfg.get("h0", 0.5),
        k0=cfg.get("k0", 0.125),
        bounds=bounds,
        lam=cfg.get("lam", 4.0),
        l_star=cfg.get("l_star", 2),
        max_level=cfg.get("max_level", 8),
        n_pilot=cfg.get("n_pilot", 768),
        threads=threads,
        master_seed=cfg.get("seed", 0),
    )


def _config_digest(setup: Setup, extras: dict) -> str:
    parts = [f"zakmc={__version__}"]
    for name in ("mu_x", "mu_y", "rho_x", "rho_y", "rho_xy", "T", "x0", "y0"):
        parts.append(f"{name}={getattr(setup.params, name)!r}")
    for name in ("h0", "k0", "bounds", "lam", "l_star", "max_level",
                 "n_pilot", "master_seed"):
        parts.append(f"{name}={getattr(setup, name)!r}")
    for key in sorted(extras):
        parts.append(f"{key}={extras[key]!r}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


def write_csv(path: str, header: list[str], rows, setup: Setup, **extras) -> None:
    digest = _config_digest(setup, extras)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# seed={setup.master_seed} config={digest} zakmc={__version__}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _log2_abs(x: float) -> float:
    return math.log2(abs(x)) if x != 0.0 else float("-inf")


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _dump_paths(setup: Setup, args, tag: str, levels_steps: dict) -> None:
    if not args.dump_paths:
        return
    os.makedirs(args.dump_paths, exist_ok=True)
    for l, n_steps in levels_steps.items():
        p = sample_path(SeedSpec(setup.master_seed, 0, f"{tag}-l{l}"),
                        n_steps, setup.k_level(l))
        write_path(p, os.path.join(args.dump_paths, f"{tag}-l{l}-s0.bin"))


def _report_rows(report):
    rows = []
    for st in report.levels:
        rows.append((str(st.level).replace(",", " "), repr(st.mean),
                     repr(st.variance), repr(st.cost), st.n_samples))
    return rows


def _write_report(args, setup: Setup, report, name: str, **extras) -> None:
    rows = _report_rows(report)
    write_csv(_out_path(args, name),
              ["level", "mean", "variance", "cost", "n_samples"],
              rows, setup, method=report.method, estimate=report.estimate,
              epsilon=report.epsilon, alpha=report.alpha,
              total_cost=report.total_cost, **extras)
    print(f"{report.method}: estimate={report.estimate:.8f} "
          f"eps={report.epsilon} alpha={report.alpha} "
          f"cost={report.total_cost:.4g} levels={len(report.levels)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_table1(args) -> int:
    setup = build_setup(args)
    samples = args.samples * (10 if args.full else 1)
    rows = mixed_difference_table(setup, args.levels, args.k, samples)
    out = [(st.level[0], st.level[1], _log2_abs(st.mean),
            _log2_abs(st.variance), st.n_samples) for st in rows]
    write_csv(_out_path(args, "table1.csv"),
              ["l1", "l2", "log2_abs_mean", "log2_var", "M"],
              out, setup, levels=args.levels, k=args.k, samples=samples)
    _dump_paths(setup, args, "table1", {0: round(setup.params.T / args.k)})
    for st in rows:
        if st.level in ((1, 1), (2, 2)):
            print(f"dP{st.level}: log2|mean|={_log2_abs(st.mean):.2f} "
                  f"log2 var={_log2_abs(st.variance):.2f}")
    return EXIT_OK


def cmd_table2(args) -> int:
    setup = build_setup(args)
    base = args.samples * (10 if args.full else 1)
    stats = level_difference_table(setup, args.levels, base,
                                   min_level_samples=args.min_samples)
    out = [(st.level, _log2_abs(st.mean), _log2_abs(st.variance),
            math.log2(st.cost / st.n_samples), st.n_samples) for st in stats]
    write_csv(_out_path(args, "table2.csv"),
              ["l", "log2_abs_mean", "log2_var", "log2_cost", "M"],
              out, setup, levels=args.levels, samples=base)
    if args.levels >= 3:
        slopes = {f: fit_slopes(stats, f) for f in ("mean", "variance", "cost")}
        print("fitted slopes: mean={mean:.2f} variance={variance:.2f} "
              "cost={cost:.2f}".format(**slopes))
    _dump_paths(setup, args, "table2",
                {l: setup.steps_level(l) for l in range(args.levels + 1)})
    return EXIT_OK


def cmd_sparse_mc(args) -> int:
    setup = build_setup(args)
    report = sparse_mc(setup, level=args.level, epsilon=args.eps,
                       n_samples=args.samples, alpha=args.alpha or 0.1)
    _write_report(args, setup, report, "sparse_mc.csv")
    return EXIT_OK


def cmd_mlmc(args) -> int:
    setup = build_setup(args)
    report = mlmc_run(setup, args.eps, alpha=args.alpha or "auto")
    _write_report(args, setup, report, "mlmc.csv")
    _dump_paths(setup, args, "mlmc",
                {l: setup.steps_level(l)
                 for l in range(report.details["stopping_level"] + 1)})
    return EXIT_OK


def cmd_full_mc(args) -> int:
    setup = build_setup(args)
    report = full_grid_mc(setup, level=args.level, epsilon=args.eps,
                          n_samples=args.samples, alpha=args.alpha or "auto")
    _write_report(args, setup, report, "full_mc.csv")
    if args.dump_field:
        _dump_field(setup, report.details["level"], args.dump_field,
                    args.dump_stride)
    return EXIT_OK


def cmd_full_mlmc(args) -> int:
    setup = build_setup(args)
    report = full_grid_mlmc(setup, args.eps, alpha=args.alpha or "auto")
    _write_report(args, setup, report, "full_mlmc.csv")
    return EXIT_OK


def _dump_field(setup: Setup, level: int, filename: str, stride: int) -> None:
    """Evolve sample 0 at the given level and dump field layers as CSV."""
    h = setup.h0 * 2.0 ** -level
    k = setup.k_level(level)
    n_steps = setup.steps_level(level)
    grid = Grid2D.make(h, h, setup.params.x0, setup.params.y0, setup.bounds)
    solver = AdiSolver(grid, setup.params, k)
    z = sample_path(SeedSpec(setup.master_seed, 0, "field"), n_steps, k).steps
    field = dirac_init(grid)
    xs = grid.x_min + h * np.arange(grid.n_x)
    ys = grid.y_min + h * np.arange(grid.n_y)
    keep = stride if stride > 0 else n_steps
    with open(filename, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,x,y,value\n")

        def emit(layer, f):
            for i in range(grid.n_x):
                for j in range(grid.n_y):
                    fh.write(f"{layer},{xs[i]!r},{ys[j]!r},{f[i, j]!r}\n")

        for n in range(n_steps):
            field = solver.step(field, (z[n, 0], z[n, 1]))
            if (n + 1) % keep == 0 or n + 1 == n_steps:
                emit(n + 1, field)


def cmd_compare_cost(args) -> int:
    setup = build_setup(args)
    eps_list = sorted((float(e) for e in args.eps), reverse=True)
    methods = args.methods.split(",")
    alpha = args.alpha or "auto"
    rows = []
    for eps in eps_list:
        for method in methods:
            try:
                if method == "full-mc":
                    rep = full_grid_mc(
                        setup, epsilon=eps,
                        alpha=0.2 if alpha == "auto" else float(alpha))
                elif method == "sparse-mc":
                    rep = sparse_mc(setup, epsilon=eps,
                                    alpha=0.2 if alpha == "auto" else float(alpha),
                                    family_kind=args.sparse_family)
                elif method == "full-mlmc":
                    rep = full_grid_mlmc(setup, eps, alpha=alpha)
                elif method == "sparse-mlmc":
                    rep = mlmc_run(setup, eps, alpha=alpha)
                else:
                    raise ConfigError(f"unknown method {method!r}")
                rows.append((method, eps, rep.total_cost, eps * eps * rep.total_cost,
                             rep.estimate, "ok"))
                print(f"{method:12s} eps={eps:<10g} cost={rep.total_cost:.4g} "
                      f"eps2cost={eps * eps * rep.total_cost:.4g} alpha={rep.alpha}")
            except ConfigError:
                raise
            except (EstimatorError, StabilityError, ValueError) as err:
                rows.append((method, eps, float("nan"), float("nan"),
                             float("nan"), f"failed: {err}"))
                print(f"{method:12s} eps={eps:<10g} FAILED: {err}",
                      file=sys.stderr)
    write_csv(_out_path(args, "cost.csv"),
              ["method", "epsilon", "total_cost", "eps2_cost", "estimate", "status"],
              rows, setup, methods=args.methods, eps=tuple(eps_list))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    setup = build_setup(args)
    params = setup.params
    h = args.h
    k = args.k if args.k is not None else setup.lam * h * h
    lo, hi = h ** (-args.p), math.pi / (2.0 * h)
    freqs = np.linspace(lo, hi, args.n_freq)
    kappa = decay_constant(params, setup.lam)
    n_steps = params.T / k
    rows = []
    for xi in freqs:
        for eta in freqs:
            m1 = moment_e(xi, eta, params, k, h, h, variant=args.variant)
            m2 = float(moment_e2(xi, eta, params, k, h, h, variant=args.variant))
            ratio = m2 ** n_steps * math.exp(kappa * (xi * xi + eta * eta))
            rows.append((float(xi), float(eta), float(abs(m1)), m2, ratio))
    write_csv(_out_path(args, "oracle.csv"),
              ["xi", "eta", "abs_mean_amp", "second_moment", "bound_ratio"],
              rows, setup, h=h, k=k, p=args.p, variant=args.variant)
    worst = decay_check(params, k, h, setup.lam, p=args.p, n_freq=args.n_freq,
                        variant=args.variant)
    print(f"decay bound worst ratio: {worst:.6f} ({'ok' if worst < 1 else 'VIOLATED'})")
    return EXIT_OK if worst < 1.0 else EXIT_NUMERICAL


def cmd_alpha_search(args) -> int:
    setup = build_setup(args)
    alphas = tuple(float(a) for a in args.alphas) if args.alphas else ALPHA_GRID
    best, report, predictions = alpha_search(setup, args.eps, alphas,
                                             method=args.method)
    rows = [(a, cost, int(a == best)) for a, cost in predictions]
    write_csv(_out_path(args, "alpha.csv"),
              ["alpha", "predicted_cost", "selected"],
              rows, setup, eps=args.eps, method=args.method)
    _write_report(args, setup, report, "alpha_best.csv", searched_alpha=best)
    print(f"best alpha: {best}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="key=value configuration file")
    sub.add_argument("--seed", type=int, dest="seed", help="master seed")
    sub.add_argument("--threads", type=int, help="worker process count")
    sub.add_argument("--out", default=".", help="output directory for CSV files")
    sub.add_argument("--full", action="store_true",
                     help="full-scale sample counts (10x the reduced default)")
    sub.add_argument("--dump-paths", help="directory for binary path dumps")
    sub.add_argument("--dump-field", help="CSV file for field snapshots")
    sub.add_argument("--dump-stride", type=int, default=0,
                     help="dump every Nth layer (default: final layer only)")
    for key in _CONFIG_FLOATS:
        if key not in ("x_min", "x_max", "y_min", "y_max"):
            sub.add_argument(f"--{key.replace('_', '-')}", type=float,
                             dest=key, help=argparse.SUPPRESS)
    for key in ("l_star", "max_level", "n_pilot"):
        sub.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key,
                         help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zakmc",
        description="Finite-difference SPDE solver with sparse-grid and "
                    "multilevel Monte Carlo estimators")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    t1 = subs.add_parser("table1", help="mixed-difference statistics table")
    t1.add_argument("--levels", type=int, default=4)
    t1.add_argument("--k", type=float, default=4.0 ** -3)
    t1.add_argument("--samples", type=int, default=2000)
    t1.set_defaults(handler=cmd_table1, h0=1.0)
    _add_common(t1)

    t2 = subs.add_parser("table2", help="level-increment statistics table")
    t2.add_argument("--levels", type=int, default=5)
    t2.add_argument("--samples", type=int, default=3072,
                    help="level-0 sample count (shrinks 4x per level)")
    t2.add_argument("--min-samples", type=int, default=48)
    t2.set_defaults(handler=cmd_table2)
    _add_common(t2)

    sp = subs.add_parser("sparse-mc", help="Monte Carlo on the sparse value")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--level", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--alpha", type=float)
    sp.set_defaults(handler=cmd_sparse_mc)
    _add_common(sp)

    ml = subs.add_parser("mlmc", help="multilevel Monte Carlo on sparse values")
    ml.add_argument("--eps", type=float, required=True)
    ml.add_argument("--alpha")
    ml.set_defaults(handler=cmd_mlmc)
    _add_common(ml)

    fm = subs.add_parser("full-mc", help="plain Monte Carlo on a regular grid")
    fm.add_argument("--eps", type=float)
    fm.add_argument("--level", type=int)
    fm.add_argument("--samples", type=int)
    fm.add_argument("--alpha")
    fm.set_defaults(handler=cmd_full_mc)
    _add_common(fm)

    fl = subs.add_parser("full-mlmc", help="multilevel Monte Carlo, regular grids")
    fl.add_argument("--eps", type=float, required=True)
    fl.add_argument("--alpha")
    fl.set_defaults(handler=cmd_full_mlmc)
    _add_common(fl)

    cc = subs.add_parser("compare-cost", help="cost sweep over all methods")
    cc.add_argument("--eps", nargs="+", required=True)
    cc.add_argument("--methods",
                    default="full-mc,sparse-mc,full-mlmc,sparse-mlmc")
    cc.add_argument("--alpha")
    cc.add_argument("--sparse-family", default="balanced",
                    choices=("balanced", "standard"),
                    help="index-set family for the sparse MC column")
    cc.set_defaults(handler=cmd_compare_cost)
    _add_common(cc)

    oc = subs.add_parser("oracle-check", help="amplification moment sweep")
    oc.add_argument("--h", type=float, default=0.25)
    oc.add_argument("--k", type=float)
    oc.add_argument("--p", type=float, default=0.25)
    oc.add_argument("--n-freq", type=int, default=100)
    oc.add_argument("--variant", default="full-implicit",
                    choices=("full-implicit", "adi"))
    oc.set_defaults(handler=cmd_oracle_check)
    _add_common(oc)

    al = subs.add_parser("alpha-search", help="budget split optimisation")
    al.add_argument("--eps", type=float, required=True)
    al.add_argument("--alphas", nargs="*")
    al.add_argument("--method", default="sparse-mlmc",
                    choices=("sparse-mlmc", "full-mlmc"))
    al.set_defaults(handler=cmd_alpha_search)
    _add_common(al)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StabilityError as err:
        print(f"stability refusal: {err}", file=sys.stderr)
        return EXIT_STABILITY
    except (EstimatorError, ValueError, ArithmeticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
