"""Command-line interface: price, sweep, train, density.

Exit codes: 0 on success, 1 on computational failure (Monte Carlo overflow,
self-consistency non-convergence, training divergence, inconsistent input
surfaces), 2 on usage errors (bad flags, malformed config, missing files).

Flags override config-file values; ``--threads`` falls back to the
``BKGTFK_THREADS`` environment variable, then to the config.  All file output
is atomic and byte-reproducible for a fixed config/seed, independent of the
thread count.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .config import ConfigError, DEFAULTS, RunConfig, echo_text, parse_config_file
from .core import FROZEN_STATS, ModelCalibration, build_grid, recompute_stats
from .correction import (
    TrainingDivergedError,
    corrected_price,
    init_net,
    load_net,
    save_net,
    train,
)
from .gtfk import gtfk_price, solve_self_consistent
from .gtfk import _time_average_mean  # center of the path-average density
from .mc import mc_accumulation, mc_zcb_price
from .results import (
    density_grid,
    marginal_views,
    read_surface_csv,
    write_density_csv,
    write_loss_history_csv,
    write_marginal_csv,
    write_surface_csv,
)
from .sweep import error_surface, point_seed

__all__ = ["main"]

THREADS_ENV_VAR = "BKGTFK_THREADS"


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config_file(args.config) if args.config else DEFAULTS
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get(THREADS_ENV_VAR):
        try:
            threads = int(os.environ[THREADS_ENV_VAR])
        except ValueError:
            raise ConfigError(
                f"environment variable {THREADS_ENV_VAR} must be an integer, "
                f"got {os.environ[THREADS_ENV_VAR]!r}"
            ) from None
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    return cfg


def _out_dir(args: argparse.Namespace) -> str:
    out = getattr(args, "out", None) or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _split_points(cfg: RunConfig):
    training, holdout = build_grid(cfg.grid)
    if cfg.sweep_split == "training":
        return list(training)
    if cfg.sweep_split == "holdout":
        return list(holdout)
    return sorted(list(training) + list(holdout), key=lambda p: p.index)


def _emit(key: str, value) -> None:
    if isinstance(value, float):
        print(f"{key} {value!r}")
    else:
        print(f"{key} {value}")


def cmd_price(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    calib = ModelCalibration(a=args.a, theta=args.theta, sigma=args.sigma, r0=args.r0)
    mode = args.mode or cfg.mode
    net = None
    if args.method == "corrected":
        # validate before emitting anything so usage errors leave stdout clean
        if not args.weights:
            raise ConfigError("method 'corrected' requires --weights")
        net = load_net(args.weights)
    _emit("method", args.method)
    for key in ("a", "sigma", "theta", "r0"):
        _emit(key, getattr(args, key))
    _emit("tenor", args.tenor)
    _emit("mode", mode)

    if args.method == "mc":
        est = (mc_zcb_price if mode == "discount" else mc_accumulation)(calib, args.tenor, cfg.mc)
        _emit("price", est.value)
        _emit("stderr", est.stderr)
        _emit("n_paths", est.n_paths)
        _emit("seed", est.seed)
        return 0

    if net is None:
        price = gtfk_price(calib, args.tenor, quad=cfg.quad, lam=cfg.lam, mode=mode)
    else:
        price = corrected_price(calib, args.tenor, net, quad=cfg.quad, lam=cfg.lam, mode=mode)
    _emit("price", price)

    # Self-consistency diagnostics at the center of the path-average density.
    center = _time_average_mean(calib, args.tenor)
    if calib.sigma > 0.0:
        state = solve_self_consistent(center, calib, args.tenor, lam=cfg.lam)
        _emit("x_bar_center", state.x_bar)
        _emit("alpha", state.alpha)
        _emit("omega_sq", state.omega_sq)
        _emit("lambda", state.lam)
    if mode == "discount":
        # The reciprocal of the accumulation-mode price bounds the discount
        # price from below (Cauchy-Schwarz); report it for comparison.
        try:
            inv = 1.0 / gtfk_price(calib, args.tenor, quad=cfg.quad, lam=cfg.lam,
                                   mode="accumulation")
        except ArithmeticError:
            inv = math.nan
        _emit("inverse_accumulation_price", inv)
    return 0


def _render_surface_figures(out: str, views, include_corrected: bool) -> list[str]:
    from .plots import render_heatmap

    written = []
    for keys, cells in views.items():
        name = f"surface_{keys[0]}_{keys[1]}"
        gtfk_cells = {k: math.nan if not c["gtfk"] else
                      sum(c["gtfk"]) / len(c["gtfk"]) for k, c in cells.items()}
        path = os.path.join(out, f"{name}.png")
        render_heatmap(path, gtfk_cells, keys[0], keys[1],
                       f"mean |rel err| GTFK by ({keys[0]}, {keys[1]})", log_scale=True)
        written.append(path)
        if include_corrected:
            corr_cells = {k: math.nan if not c["corrected"] else
                          sum(c["corrected"]) / len(c["corrected"]) for k, c in cells.items()}
            path = os.path.join(out, f"{name}_corrected.png")
            render_heatmap(path, corr_cells, keys[0], keys[1],
                           f"mean |rel err| corrected by ({keys[0]}, {keys[1]})", log_scale=True)
            written.append(path)
    return written


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if args.no_figures:
        cfg = replace(cfg, figures=False)
    net = load_net(args.weights) if args.weights else None
    out = _out_dir(args)
    points = _split_points(cfg)
    rows = error_surface(points, mc_cfg=cfg.mc, quad=cfg.quad, lam=cfg.lam,
                         net=net, threads=cfg.threads)
    echo = echo_text(cfg)
    include_corrected = net is not None

    results_path = os.path.join(out, "results.csv")
    write_surface_csv(results_path, rows, config_echo=echo, include_corrected=include_corrected)
    views = marginal_views(rows)
    written = [results_path]
    for keys, cells in views.items():
        path = os.path.join(out, f"marginal_{keys[0]}_{keys[1]}.csv")
        write_marginal_csv(path, keys, cells, include_corrected=include_corrected)
        written.append(path)
    if cfg.figures:
        written += _render_surface_figures(out, views, include_corrected)

    failures = sum(1 for r in rows if not r.ok)
    _emit("points", len(rows))
    _emit("failures", failures)
    for path in written:
        _emit("wrote", path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    training, _ = build_grid(cfg.grid)
    if len(training) == 0:
        raise ConfigError("training grid is empty; lower holdout.fraction")
    stats = FROZEN_STATS if cfg.net_stats == "frozen" else recompute_stats(training)
    net = init_net(cfg.train.seed, hidden=cfg.net_hidden, degree=cfg.net_degree,
                   output_scale=cfg.net_output_scale,
                   taylor_weighting=cfg.net_taylor_weighting, stats=stats)

    def target(point):
        mc_cfg = replace(cfg.mc, seed=point_seed(cfg.mc.seed, point.index))
        return mc_zcb_price(point.calibration, point.tenor, mc_cfg).value

    points = list(training)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            targets = list(pool.map(target, points))
    else:
        targets = [target(p) for p in points]

    print(echo_text(cfg))
    pairs = [(p.calibration, p.tenor) for p in points]
    weights_path = os.path.join(out, "weights.txt")
    history_path = os.path.join(out, "loss_history.csv")
    try:
        trained, history = train(net, pairs, targets, cfg.train,
                                 quad=cfg.quad, lam=cfg.lam, mode=cfg.mode)
    except TrainingDivergedError as exc:
        write_loss_history_csv(history_path, exc.history)
        _emit("wrote", history_path)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_net(trained, weights_path)
    write_loss_history_csv(history_path, history)
    if history:
        _emit("initial_loss", history[0][1])
        _emit("final_loss", history[-1][1])
    _emit("wrote", weights_path)
    _emit("wrote", history_path)
    return 0


def cmd_density(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    pre_rows, _ = read_surface_csv(args.pre)
    post_rows, _ = read_surface_csv(args.post)
    try:
        density = density_grid(pre_rows, post_rows)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    path = os.path.join(out, "density.csv")
    write_density_csv(path, density)
    written = [path]
    if not args.no_figures:
        from .plots import render_heatmap
        fig_path = os.path.join(out, "density_a_sigma.png")
        render_heatmap(fig_path, density, "a", "sigma",
                       "fraction of points improved by correction")
        written.append(fig_path)
    for p in written:
        _emit("wrote", p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bkgtfk",
        description="Black-Karasinski bond pricing: Monte Carlo, GTFK, and "
                    "neural-corrected GTFK, with error-surface experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_out: bool = True):
        p.add_argument("--config", metavar="PATH", help="configuration file")
        p.add_argument("--seed", type=int, metavar="N", help="override mc.seed")
        p.add_argument("--threads", type=int, metavar="N",
                       help=f"worker threads (falls back to ${THREADS_ENV_VAR})")
        if with_out:
            p.add_argument("--out", metavar="DIR", help="output directory (default: out)")

    p_price = sub.add_parser("price", help="price a single bond")
    common(p_price, with_out=False)
    p_price.add_argument("--method", choices=("mc", "gtfk", "corrected"), default="gtfk")
    p_price.add_argument("--weights", metavar="PATH", help="weight file for method 'corrected'")
    p_price.add_argument("--a", type=float, required=True, help="mean-reversion speed")
    p_price.add_argument("--sigma", type=float, required=True, help="log-rate volatility")
    p_price.add_argument("--theta", type=float, required=True, help="target rate level")
    p_price.add_argument("--r0", type=float, required=True, help="initial short rate")
    p_price.add_argument("--tenor", type=float, required=True, help="maturity in years")
    p_price.add_argument("--mode", choices=("discount", "accumulation"))
    p_price.set_defaults(func=cmd_price)

    p_sweep = sub.add_parser("sweep", help="error surface over a calibration grid")
    common(p_sweep)
    p_sweep.add_argument("--weights", metavar="PATH",
                         help="weight file; adds corrected columns")
    p_sweep.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p_sweep.set_defaults(func=cmd_sweep)

    p_train = sub.add_parser("train", help="train the correction network")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_density = sub.add_parser("density", help="improvement density from two surfaces")
    p_density.add_argument("pre", help="surface CSV without correction")
    p_density.add_argument("post", help="surface CSV with correction")
    p_density.add_argument("--out", metavar="DIR", help="output directory (default: out)")
    p_density.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p_density.set_defaults(func=cmd_density)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
