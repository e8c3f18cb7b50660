"""Batch front end: ``sabrgrid --mode sparse --levels 3..11 --out table.csv``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path

from . import market
from .config import FORMATS, MODES, SOLVERS, ConfigError, RunConfig, check, parse_config, parse_levels
from .model import NUMERAIRE_CONVENTIONS, deflating_bond
from .montecarlo import SCHEMES, estimate_price
from .pde import NonConvergence, SolveStats, price_full_grid
from .report import Report, Row, figure_path, plot_convergence, render
from .sparse import SubgridFailure, price_sparse

log = logging.getLogger("sabrgrid")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def exact_price_bp(cfg: RunConfig) -> float | None:
    """Closed form, available for a lognormal caplet under its own payment measure."""
    if cfg.b - cfg.a != 1 or cfg.sigma != 0.0 or cfg.beta != 1.0:
        return None
    tenor = cfg.tenor
    if deflating_bond(cfg.numeraire, cfg.measure, cfg.a, cfg.b, cfg.sigma, tenor) != cfg.a + 1:
        return None
    curve = market.MarketCurve(cfg.forwards, tuple(v * cfg.v0 for v in cfg.vols))
    return market.caplet_black_value(curve, tenor, cfg.a, cfg.strike) * market.BP


def _grid_rows(cfg: RunConfig, exact: float | None) -> list[Row]:
    rows = []
    for level in cfg.level_range:
        t0 = time.perf_counter()
        if cfg.mode == "full":
            price = price_full_grid(level, cfg.swaption, cfg.curve, cfg.params, cfg.measure,
                                    cfg.solver_config, tenor=cfg.tenor, f_max=cfg.f_max,
                                    v_max=cfg.v_max, numeraire=cfg.numeraire, stats=SolveStats())
            points = (2**level + 1) ** cfg.dim
            method = "full"
        else:
            res = price_sparse(level, cfg.swaption, cfg.curve, cfg.params, cfg.measure,
                               cfg.solver_config, cfg.workers, tenor=cfg.tenor, f_max=cfg.f_max,
                               v_max=cfg.v_max, numeraire=cfg.numeraire)
            price, points, method = res.price_bp, res.grid_points, "sparse"
        elapsed = time.perf_counter() - t0
        log.info("%s level %d: %.6f bp (%.2f s)", method, level, price, elapsed)
        rows.append(Row(method, level, price, None if exact is None else abs(price - exact),
                        elapsed if cfg.timing else None, points))
    return rows


def _mc_row(cfg: RunConfig, exact: float | None) -> Row:
    t0 = time.perf_counter()
    res = estimate_price(cfg.swaption, cfg.curve, cfg.params, cfg.measure, cfg.mc_config,
                         cfg.workers, tenor=cfg.tenor, numeraire=cfg.numeraire)
    elapsed = time.perf_counter() - t0
    log.info("mc %d paths: %.6f +- %.6f bp (%.2f s)", res.paths, res.mean_bp, res.half_width_bp, elapsed)
    inside = None if exact is None or math.isnan(res.half_width_bp) else res.contains(exact)
    return Row("mc", None, res.mean_bp, None if exact is None else abs(res.mean_bp - exact),
               elapsed if cfg.timing else None, None, res.ci_low, res.ci_high, res.paths, inside)


def run(cfg: RunConfig) -> Report:
    """Execute the experiment described by ``cfg`` and return its report rows."""
    check(cfg)
    exact = exact_price_bp(cfg)
    if cfg.mode == "mc":
        rows = [_mc_row(cfg, exact)]
    elif cfg.mode == "compare":
        rows = _grid_rows(dataclasses.replace(cfg, mode="sparse"), exact)
        mc = _mc_row(cfg, exact)
        if not math.isnan(mc.ci_low_bp):
            for r in rows:
                r.inside_ci = mc.ci_low_bp <= r.solution_bp <= mc.ci_high_bp
        rows.append(mc)
    else:
        rows = _grid_rows(cfg, exact)
    return Report(cfg.mode, cfg.config_hash(), rows, exact)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sabrgrid", description=__doc__)
    p.add_argument("--config", metavar="FILE", help="INI-style run configuration")
    p.add_argument("--mode", choices=MODES)
    lv = p.add_mutually_exclusive_group()
    lv.add_argument("--level", type=int)
    lv.add_argument("--levels", metavar="LO..HI")
    p.add_argument("--libors", type=int, metavar="K", help="number of swap forwards (a=1, b=1+K)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int, help="time steps of the PDE solver")
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument("--numeraire", choices=NUMERAIRE_CONVENTIONS)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--out", metavar="FILE")
    p.add_argument("--format", dest="fmt", choices=FORMATS)
    p.add_argument("--no-timing", action="store_true", help="leave time_s empty (reproducible output)")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    if args.config:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = RunConfig()
    over = {}
    for name, field_ in (("mode", "mode"), ("sigma", "sigma"), ("phi", "phi"), ("beta", "beta"),
                         ("steps", "time_steps"), ("paths", "paths"), ("seed", "seed"),
                         ("workers", "workers"), ("solver", "solver"), ("numeraire", "numeraire"),
                         ("scheme", "scheme"), ("out", "out"), ("fmt", "fmt")):
        value = getattr(args, name)
        if value is not None:
            over[field_] = value
    if args.level is not None:
        over["levels"] = (args.level, args.level)
    if args.levels is not None:
        try:
            over["levels"] = parse_levels(args.levels)
        except ValueError as exc:
            raise ConfigError(f"--levels: {exc}") from None
    if args.libors is not None:
        over["a"], over["b"] = 1, 1 + args.libors
    if args.no_timing:
        over["timing"] = False
    if args.no_figure:
        over["figure"] = False
    try:
        cfg = dataclasses.replace(cfg, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return check(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, SubgridFailure, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = render(report, cfg.fmt)
    try:
        if cfg.out:
            Path(cfg.out).write_text(text, encoding="utf-8")
            if cfg.figure:
                plot_convergence(report, figure_path(cfg.out))
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
