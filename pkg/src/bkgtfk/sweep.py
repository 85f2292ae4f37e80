"""Error-surface experiments: grid sweeps comparing pricers against Monte Carlo.

Each grid point gets its own derived seed (base seed + full-grid index), so a
sweep is reproducible point by point: rerunning a single calibration with its
recorded seed reproduces its row exactly.  Per-point failures are data, not
crashes — a failed point keeps its place in the output with NaN numerics and
the exception text in the ``failure`` column; the sweep continues.

Threading parallelizes over grid points only.  Every point's estimate is
bit-identical whether computed in the main thread or a pool, so thread count
never changes results, only wall time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .core import CalibrationGrid, GridPoint, ModelCalibration
from .correction import CoefficientNet, corrected_price
from .gtfk import QuadratureSpec, gtfk_price
from .mc import McConfig, mc_zcb_price
from .results import SurfaceRow

__all__ = ["error_surface", "point_seed"]

_SEED_MODULUS = 1 << 63


def point_seed(base_seed: int, index: int) -> int:
    """Per-point Monte Carlo seed: base seed plus full-grid index."""
    return (base_seed + index) % _SEED_MODULUS


def _price_point(
    point: GridPoint,
    mc_cfg: McConfig,
    quad: QuadratureSpec,
    lam: float,
    net: CoefficientNet | None,
) -> SurfaceRow:
    calib, tenor = point.calibration, point.tenor
    seed = point_seed(mc_cfg.seed, point.index)
    base = dict(a=calib.a, sigma=calib.sigma, theta=calib.theta, r0=calib.r0,
                tenor=tenor, seed=seed)
    try:
        mc = mc_zcb_price(calib, tenor, replace(mc_cfg, seed=seed))
        gtfk = gtfk_price(calib, tenor, quad=quad, lam=lam, mode="discount")
        corrected = (corrected_price(calib, tenor, net, quad=quad, lam=lam, mode="discount")
                     if net is not None else None)
    except (ArithmeticError, ValueError) as exc:
        nan = math.nan
        return SurfaceRow(mc_price=nan, mc_stderr=nan, gtfk_price=nan, rel_err_gtfk=nan,
                          corrected_price=None, rel_err_corrected=None,
                          failure=f"{type(exc).__name__}: {exc}", **base)
    rel_gtfk = (gtfk - mc.value) / mc.value
    rel_corr = (corrected - mc.value) / mc.value if corrected is not None else None
    return SurfaceRow(mc_price=mc.value, mc_stderr=mc.stderr, gtfk_price=gtfk,
                      rel_err_gtfk=rel_gtfk, corrected_price=corrected,
                      rel_err_corrected=rel_corr, **base)


def error_surface(
    grid: CalibrationGrid,
    mc_cfg: McConfig | None = None,
    quad: QuadratureSpec | None = None,
    lam: float = 1.0,
    net: CoefficientNet | None = None,
    threads: int = 1,
) -> list[SurfaceRow]:
    """Signed relative pricing error ``(pricer - mc) / mc`` over a grid.

    The GTFK column is always computed; a corrected column is added when a
    network is supplied.  Rows come back ordered by full-grid index whatever
    the thread count.
    """
    mc_cfg = mc_cfg or McConfig()
    quad = quad or QuadratureSpec()
    if int(threads) != threads or threads < 1:
        raise ValueError(f"threads must be a positive integer, got {threads!r}")
    points = list(grid)
    if threads == 1 or len(points) <= 1:
        return [_price_point(p, mc_cfg, quad, lam, net) for p in points]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: _price_point(p, mc_cfg, quad, lam, net), points))
