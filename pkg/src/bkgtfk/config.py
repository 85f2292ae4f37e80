"""Run configuration: parsing, defaults, overrides, and canonical echo.

Config files are plain text, one ``key = value`` assignment per line, with
``#`` comments.  Keys are dotted paths (``a.min``, ``mc.n_paths``, ...); the
full key set is documented in the README.  :func:`canonical_text` renders a
configuration with every key explicit, floats in shortest round-trip form and
keys sorted, so the echo embedded in result files parses back to the exact
configuration that produced them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .core import AxisSpec, GridSpec
from .correction import TrainConfig
from .gtfk import QuadratureSpec
from .mc import McConfig

__all__ = ["RunConfig", "ConfigError", "parse_config", "parse_config_file",
           "canonical_text", "echo_text"]


class ConfigError(ValueError):
    """Malformed configuration text or unknown/invalid keys (a usage error)."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs; fully serializable via :func:`canonical_text`."""

    grid: GridSpec
    mc: McConfig = McConfig()
    quad: QuadratureSpec = QuadratureSpec()
    train: TrainConfig = TrainConfig()
    lam: float = 1.0
    mode: str = "discount"
    net_hidden: int = 8
    net_degree: int = 4
    net_output_scale: float = 0.01
    net_taylor_weighting: bool = True
    net_stats: str = "recomputed"
    sweep_split: str = "all"
    threads: int = 1
    figures: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("discount", "accumulation"):
            raise ConfigError(f"gtfk.mode must be 'discount' or 'accumulation', got {self.mode!r}")
        if self.net_stats not in ("frozen", "recomputed"):
            raise ConfigError(f"net.stats must be 'frozen' or 'recomputed', got {self.net_stats!r}")
        if self.sweep_split not in ("all", "training", "holdout"):
            raise ConfigError(
                f"sweep.split must be 'all', 'training' or 'holdout', got {self.sweep_split!r}"
            )
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ConfigError(f"gtfk.lambda must be non-negative, got {self.lam!r}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ConfigError(f"run.threads must be a positive integer, got {self.threads!r}")
        if self.net_hidden < 0:
            raise ConfigError(f"net.hidden must be >= 0, got {self.net_hidden!r}")


_DEFAULT_GRID = GridSpec(
    a=AxisSpec(0.05, 0.5, 4),
    sigma=AxisSpec(0.2, 1.0, 4),
    theta=AxisSpec(0.02, 0.06, 3),
    r0=AxisSpec(0.04, 0.04, 1),
    tenors=(1.0, 5.0, 10.0),
    holdout_fraction=0.25,
    holdout_seed=0,
    clamp_theta=True,
)

DEFAULTS = RunConfig(grid=_DEFAULT_GRID)


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from None


def _parse_floats(key: str, raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ConfigError(f"key {key!r}: expected a list of numbers, got {raw!r}")
    return tuple(_parse_float(key, p) for p in parts)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` configuration text on top of ``base``
    (package defaults when omitted).  Unknown keys are usage errors."""
    base = base or DEFAULTS
    kv: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in kv:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kv[key] = value.strip()

    def axis(name: str, default: AxisSpec) -> AxisSpec:
        lo = _parse_float(f"{name}.min", kv.pop(f"{name}.min", repr(default.lo)))
        hi = _parse_float(f"{name}.max", kv.pop(f"{name}.max", repr(default.hi)))
        steps = _parse_int(f"{name}.steps", kv.pop(f"{name}.steps", str(default.steps)))
        try:
            return AxisSpec(lo, hi, steps)
        except ValueError as exc:
            raise ConfigError(f"axis {name!r}: {exc}") from None

    g = base.grid
    tenors_raw = kv.pop("tenors", None)
    if tenors_raw is None:
        tenors_raw = " ".join(repr(t) for t in g.tenors)
    try:
        grid = GridSpec(
            a=axis("a", g.a),
            sigma=axis("sigma", g.sigma),
            theta=axis("theta", g.theta),
            r0=axis("r0", g.r0),
            tenors=_parse_floats("tenors", tenors_raw),
            holdout_fraction=_parse_float("holdout.fraction",
                                          kv.pop("holdout.fraction", repr(g.holdout_fraction))),
            holdout_seed=_parse_int("holdout.seed", kv.pop("holdout.seed", str(g.holdout_seed))),
            clamp_theta=_parse_bool("theta.clamp", kv.pop("theta.clamp",
                                                          "true" if g.clamp_theta else "false")),
        )
        mc = McConfig(
            n_paths=_parse_int("mc.n_paths", kv.pop("mc.n_paths", str(base.mc.n_paths))),
            steps_per_year=_parse_int("mc.steps_per_year",
                                      kv.pop("mc.steps_per_year", str(base.mc.steps_per_year))),
            seed=_parse_int("mc.seed", kv.pop("mc.seed", str(base.mc.seed))),
            antithetic=_parse_bool("mc.antithetic",
                                   kv.pop("mc.antithetic", "true" if base.mc.antithetic else "false")),
        )
        quad = QuadratureSpec(
            nodes=_parse_int("quad.nodes", kv.pop("quad.nodes", str(base.quad.nodes))),
            halfwidth=_parse_float("quad.halfwidth",
                                   kv.pop("quad.halfwidth", repr(base.quad.halfwidth))),
        )
        train = TrainConfig(
            learning_rate=_parse_float("train.learning_rate",
                                       kv.pop("train.learning_rate", repr(base.train.learning_rate))),
            epochs=_parse_int("train.epochs", kv.pop("train.epochs", str(base.train.epochs))),
            value_cap=_parse_float("train.value_cap",
                                   kv.pop("train.value_cap", repr(base.train.value_cap))),
            norm_cap=_parse_float("train.norm_cap",
                                  kv.pop("train.norm_cap", repr(base.train.norm_cap))),
            fd_step=_parse_float("train.fd_step", kv.pop("train.fd_step", repr(base.train.fd_step))),
            seed=_parse_int("train.seed", kv.pop("train.seed", str(base.train.seed))),
            bias_only=_parse_bool("train.bias_only",
                                  kv.pop("train.bias_only", "true" if base.train.bias_only else "false")),
        )
        cfg = RunConfig(
            grid=grid, mc=mc, quad=quad, train=train,
            lam=_parse_float("gtfk.lambda", kv.pop("gtfk.lambda", repr(base.lam))),
            mode=kv.pop("gtfk.mode", base.mode),
            net_hidden=_parse_int("net.hidden", kv.pop("net.hidden", str(base.net_hidden))),
            net_degree=_parse_int("net.degree", kv.pop("net.degree", str(base.net_degree))),
            net_output_scale=_parse_float("net.output_scale",
                                          kv.pop("net.output_scale", repr(base.net_output_scale))),
            net_taylor_weighting=_parse_bool(
                "net.taylor_weighting",
                kv.pop("net.taylor_weighting", "true" if base.net_taylor_weighting else "false")),
            net_stats=kv.pop("net.stats", base.net_stats),
            sweep_split=kv.pop("sweep.split", base.sweep_split),
            threads=_parse_int("run.threads", kv.pop("run.threads", str(base.threads))),
            figures=_parse_bool("run.figures", kv.pop("run.figures",
                                                      "true" if base.figures else "false")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if kv:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(kv))}")
    return cfg


def parse_config_file(path: str, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    return parse_config(text, base=base)


def canonical_text(cfg: RunConfig) -> str:
    """Render a configuration with every key explicit, sorted, floats in
    shortest round-trip form.  ``parse_config(canonical_text(cfg)) == cfg``."""
    g, mc, q, t = cfg.grid, cfg.mc, cfg.quad, cfg.train
    entries = {
        "a.min": repr(g.a.lo), "a.max": repr(g.a.hi), "a.steps": str(g.a.steps),
        "sigma.min": repr(g.sigma.lo), "sigma.max": repr(g.sigma.hi),
        "sigma.steps": str(g.sigma.steps),
        "theta.min": repr(g.theta.lo), "theta.max": repr(g.theta.hi),
        "theta.steps": str(g.theta.steps),
        "theta.clamp": "true" if g.clamp_theta else "false",
        "r0.min": repr(g.r0.lo), "r0.max": repr(g.r0.hi), "r0.steps": str(g.r0.steps),
        "tenors": ", ".join(repr(v) for v in g.tenors),
        "holdout.fraction": repr(g.holdout_fraction),
        "holdout.seed": str(g.holdout_seed),
        "mc.n_paths": str(mc.n_paths),
        "mc.steps_per_year": str(mc.steps_per_year),
        "mc.seed": str(mc.seed),
        "mc.antithetic": "true" if mc.antithetic else "false",
        "quad.nodes": str(q.nodes),
        "quad.halfwidth": repr(q.halfwidth),
        "gtfk.lambda": repr(cfg.lam),
        "gtfk.mode": cfg.mode,
        "train.learning_rate": repr(t.learning_rate),
        "train.epochs": str(t.epochs),
        "train.value_cap": repr(t.value_cap),
        "train.norm_cap": repr(t.norm_cap),
        "train.fd_step": repr(t.fd_step),
        "train.seed": str(t.seed),
        "train.bias_only": "true" if t.bias_only else "false",
        "net.hidden": str(cfg.net_hidden),
        "net.degree": str(cfg.net_degree),
        "net.output_scale": repr(cfg.net_output_scale),
        "net.taylor_weighting": "true" if cfg.net_taylor_weighting else "false",
        "net.stats": cfg.net_stats,
        "sweep.split": cfg.sweep_split,
        "run.threads": str(cfg.threads),
        "run.figures": "true" if cfg.figures else "false",
    }
    return "\n".join(f"{k} = {entries[k]}" for k in sorted(entries))


def echo_text(cfg: RunConfig) -> str:
    """Canonical text with execution-only keys normalized.

    ``run.threads`` and ``run.figures`` change how a run executes, never what
    it computes, so the echo embedded in result files pins them to their
    defaults — otherwise rerunning with a different thread count would change
    output bytes without changing results.
    """
    return canonical_text(replace(cfg, threads=DEFAULTS.threads, figures=DEFAULTS.figures))
