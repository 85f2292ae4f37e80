"""Calibration types, feature normalization, and calibration grids.

The short rate follows the Black-Karasinski dynamics

    d ln r_t = a (b - ln r_t) dt + sigma dW_t,        b = ln(theta),

so ``ln r`` is an Ornstein-Uhlenbeck process reverting at speed ``a`` to the
log of the target rate level ``theta``.  Everything downstream (Monte Carlo,
the path-integral approximation, the coefficient network) consumes the
``ModelCalibration`` bundle defined here together with a tenor in years.

Calibration grids are Cartesian products of per-parameter ranges crossed with
a tenor list, split deterministically into a training and a holdout subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelCalibration",
    "NormalizationStats",
    "AxisSpec",
    "GridSpec",
    "CalibrationGrid",
    "GridPoint",
    "FROZEN_STATS",
    "THETA_CLAMP_RANGE",
    "log_target",
    "normalize",
    "denormalize",
    "recompute_stats",
    "build_grid",
]

#: Input ordering shared by normalization stats and the coefficient network.
INPUT_NAMES = ("a", "sigma", "theta", "r0", "tenor")

#: Target-rate levels outside this band are clamped by default when grids are
#: built; the approximation and its correction are tuned for desk-realistic
#: rate levels.
THETA_CLAMP_RANGE = (0.02, 0.06)


def log_target(theta: float) -> float:
    """Return ``b = ln(theta)``, the reversion level in log-rate space.

    Parameters
    ----------
    theta : float
        Target rate level.  Must be strictly positive.

    Raises
    ------
    ValueError
        If ``theta`` is not strictly positive and finite.
    """
    if not (isinstance(theta, (int, float)) and math.isfinite(theta) and theta > 0.0):
        raise ValueError(f"theta must be strictly positive and finite, got {theta!r}")
    return math.log(theta)


@dataclass(frozen=True)
class ModelCalibration:
    """Black-Karasinski parameter bundle.

    Parameters
    ----------
    a : float
        Mean-reversion speed (strictly positive).
    theta : float
        Target rate level; the log-space reversion level is ``b = ln(theta)``.
    sigma : float
        Log-rate volatility.  Non-negative; ``sigma = 0`` is the deterministic
        limit in which the rate relaxes along its mean path.
    r0 : float
        Initial short rate (strictly positive), so ``x_0 = ln(r0)``.
    """

    a: float
    theta: float
    sigma: float
    r0: float

    def __post_init__(self) -> None:
        for name in ("a", "theta", "r0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be strictly positive and finite, got {value!r}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError(f"sigma must be non-negative and finite, got {self.sigma!r}")

    @property
    def b(self) -> float:
        """Log-space reversion level ``ln(theta)``."""
        return log_target(self.theta)

    @property
    def x0(self) -> float:
        """Initial log rate ``ln(r0)``."""
        return math.log(self.r0)

    def as_inputs(self, tenor: float) -> np.ndarray:
        """Raw feature vector ``(a, sigma, theta, r0, tenor)`` for the network."""
        return np.array([self.a, self.sigma, self.theta, self.r0, tenor], dtype=float)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-input standardization constants, in the fixed order
    ``(a, sigma, theta, r0, tenor)``.

    Stats come in two flavours: the frozen constants shipped with the package
    (:data:`FROZEN_STATS`, used by the reference network) and stats recomputed
    from a training grid via :func:`recompute_stats`.
    """

    means: tuple[float, ...]
    stdevs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.means) != 5 or len(self.stdevs) != 5:
            raise ValueError(
                f"expected exactly 5 (mean, stdev) pairs, got {len(self.means)} means "
                f"and {len(self.stdevs)} stdevs"
            )
        for i, (m, s) in enumerate(zip(self.means, self.stdevs)):
            if not (math.isfinite(m) and math.isfinite(s)):
                raise ValueError(f"non-finite stats for input {INPUT_NAMES[i]!r}")
            if s <= 0.0:
                raise ValueError(f"stdev for input {INPUT_NAMES[i]!r} must be > 0, got {s!r}")


#: Standardization constants for the frozen reference network shipped with the
#: package, in ``(a, sigma, theta, r0, tenor)`` order.
FROZEN_STATS = NormalizationStats(
    means=(0.2199, 0.6415, 0.0469, 0.0401, 5.9707),
    stdevs=(0.1139, 0.2739, 0.0137, 0.0186, 6.6736),
)


def normalize(raw: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Standardize a raw input vector: ``(raw - mean) / stdev`` componentwise.

    ``raw`` must hold the five inputs in ``(a, sigma, theta, r0, tenor)``
    order.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (5,):
        raise ValueError(f"expected a length-5 input vector, got shape {raw.shape}")
    return (raw - np.array(stats.means)) / np.array(stats.stdevs)


def denormalize(z: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Invert :func:`normalize`: ``z * stdev + mean`` componentwise."""
    z = np.asarray(z, dtype=float)
    if z.shape != (5,):
        raise ValueError(f"expected a length-5 input vector, got shape {z.shape}")
    return z * np.array(stats.stdevs) + np.array(stats.means)


@dataclass(frozen=True)
class AxisSpec:
    """Inclusive linear range for one calibration parameter.

    ``steps = 1`` collapses the axis to the single value ``lo``.
    """

    lo: float
    hi: float
    steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("axis bounds must be finite")
        if self.hi < self.lo:
            raise ValueError(f"axis upper bound {self.hi!r} below lower bound {self.lo!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.lo], dtype=float)
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class GridPoint:
    """One calibration/tenor pair together with its index in the full grid."""

    index: int
    calibration: ModelCalibration
    tenor: float


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid description: four parameter axes, a tenor list, and the
    deterministic holdout split."""

    a: AxisSpec
    sigma: AxisSpec
    theta: AxisSpec
    r0: AxisSpec
    tenors: tuple[float, ...]
    holdout_fraction: float = 0.0
    holdout_seed: int = 0
    clamp_theta: bool = True

    def __post_init__(self) -> None:
        if len(self.tenors) == 0:
            raise ValueError("tenor list must not be empty")
        for t in self.tenors:
            if not (math.isfinite(t) and t > 0.0):
                raise ValueError(f"tenors must be strictly positive, got {t!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(
                f"holdout fraction must lie in [0, 1), got {self.holdout_fraction!r}"
            )


@dataclass(frozen=True)
class CalibrationGrid:
    """An ordered collection of grid points with a provenance tag.

    ``provenance`` is ``"training"`` or ``"holdout"``.  Point order follows
    the full-grid enumeration index, so serializing a grid twice from the same
    spec yields byte-identical output.
    """

    points: tuple[GridPoint, ...]
    provenance: str

    def __post_init__(self) -> None:
        if self.provenance not in ("training", "holdout"):
            raise ValueError(f"provenance must be 'training' or 'holdout', got {self.provenance!r}")
        seen = set()
        for p in self.points:
            key = (p.calibration.a, p.calibration.sigma, p.calibration.theta,
                   p.calibration.r0, p.tenor)
            if key in seen:
                raise ValueError(f"duplicate grid point {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _clamped_axis_values(axis: AxisSpec, clamp: tuple[float, float] | None) -> np.ndarray:
    values = axis.values()
    if clamp is not None:
        values = np.clip(values, clamp[0], clamp[1])
        # clamping can merge neighbouring values; keep first occurrences only
        _, first = np.unique(values, return_index=True)
        values = values[np.sort(first)]
    return values


def recompute_stats(grid: CalibrationGrid) -> NormalizationStats:
    """Per-input mean/stdev over a grid's points.

    Axes collapsed to a single value have zero spread; their stdev is replaced
    by 1.0 so standardization stays well defined (the feature is constant and
    carries no information either way).
    """
    if len(grid) == 0:
        raise ValueError("cannot compute stats from an empty grid")
    rows = np.array([p.calibration.as_inputs(p.tenor) for p in grid.points])
    means = rows.mean(axis=0)
    stdevs = rows.std(axis=0)
    stdevs[stdevs == 0.0] = 1.0
    return NormalizationStats(means=tuple(float(m) for m in means),
                              stdevs=tuple(float(s) for s in stdevs))


def build_grid(spec: GridSpec) -> tuple[CalibrationGrid, CalibrationGrid]:
    """Expand a :class:`GridSpec` into (training, holdout) grids.

    The full grid is the Cartesian product of the four parameter axes and the
    tenor list, enumerated with ``a`` outermost and tenor innermost.  The
    holdout subset is chosen by a seeded permutation of the full index range,
    so the split is reproducible and ``training ∩ holdout = ∅`` by
    construction.  ``holdout_fraction = 0`` yields an empty holdout grid.

    Theta values are clamped into :data:`THETA_CLAMP_RANGE` unless
    ``spec.clamp_theta`` is false; values that collide after clamping are
    deduplicated.
    """
    clamp = THETA_CLAMP_RANGE if spec.clamp_theta else None
    a_vals = _clamped_axis_values(spec.a, None)
    s_vals = _clamped_axis_values(spec.sigma, None)
    t_vals = _clamped_axis_values(spec.theta, clamp)
    r_vals = _clamped_axis_values(spec.r0, None)

    points: list[GridPoint] = []
    index = 0
    for a in a_vals:
        for s in s_vals:
            for th in t_vals:
                for r in r_vals:
                    calib = ModelCalibration(a=float(a), theta=float(th),
                                             sigma=float(s), r0=float(r))
                    for tenor in spec.tenors:
                        points.append(GridPoint(index, calib, float(tenor)))
                        index += 1

    n_total = len(points)
    n_hold = int(round(spec.holdout_fraction * n_total))
    if n_hold > 0:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.holdout_seed)))
        hold_idx = set(rng.permutation(n_total)[:n_hold].tolist())
    else:
        hold_idx = set()

    training = tuple(p for p in points if p.index not in hold_idx)
    holdout = tuple(p for p in points if p.index in hold_idx)
    return (CalibrationGrid(training, "training"), CalibrationGrid(holdout, "holdout"))
