"""Black-Karasinski zero-coupon bond pricing.

Three pricers sharing one calibration vocabulary: a Monte Carlo oracle with
exact Ornstein-Uhlenbeck stepping, the GTFK variational path-integral
approximation, and a neural-corrected GTFK variant, plus the sweep machinery
that maps their relative-error surfaces to CSV grids and heatmaps.
"""

from .core import (
    FROZEN_STATS,
    AxisSpec,
    CalibrationGrid,
    GridPoint,
    GridSpec,
    ModelCalibration,
    NormalizationStats,
    build_grid,
    denormalize,
    log_target,
    normalize,
    recompute_stats,
)
from .correction import (
    CoefficientNet,
    DenseLayer,
    TrainConfig,
    TrainingDivergedError,
    clip_gradient,
    correct_xbar,
    corrected_price,
    fd_gradient,
    forward,
    frozen_reference_net,
    init_net,
    l1_loss,
    load_net,
    save_net,
    train,
)
from .gtfk import (
    GtfkConvergenceError,
    GtfkIntegrandError,
    GtfkState,
    QuadratureSpec,
    bk_potential,
    deterministic_price,
    gtfk_price,
    omega_equation,
    smeared_exponential,
    smearing_width,
    solve_self_consistent,
    trapezoid,
)
from .mc import (
    McConfig,
    McOverflowError,
    PriceEstimate,
    mc_accumulation,
    mc_zcb_price,
    simulate_log_rate_path,
)
from .results import SurfaceRow, density_grid, marginal_views, read_surface_csv
from .sweep import error_surface, point_seed

__version__ = "0.1.0"
