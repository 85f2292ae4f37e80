"""Variational path-integral (GTFK) approximation of Black-Karasinski bond prices.

For each candidate time-average log rate ``x_bar`` the harmonic trial action is
tuned self-consistently: the effective frequency solves

    omega^2 = a^2 + lam * sigma^2 * exp(alpha / 2) * exp(x_bar),          (*)

where the smearing width ``alpha`` is the Gaussian fluctuation variance of the
trial oscillator around its path average,

    alpha(omega, T) = sigma^2 / (omega^2 T) * ((omega T / 2) coth(omega T / 2) - 1),

with limits ``sigma^2 T / 12`` as ``omega T -> 0`` and ``sigma^2 / (2 omega)``
as ``omega T -> infinity``.  The classical potential of the model in log-rate
space is

    V(x_bar) = a^2 (b - x_bar)^2 / (2 sigma^2) - a/2 - s * exp(x_bar),

with ``s = +1`` for the accumulation factor and ``s = -1`` for discounting.

Price assembly integrates the smeared payoff against the exact distribution of
the path's time-average log rate.  For the fixed-start Ornstein-Uhlenbeck
process the time average ``x_bar = (1/T) \\int x_t dt`` is Gaussian with

    mean      m_c  = b + (x0 - b) (1 - e^{-aT}) / (aT),
    variance  vbar = sigma^2 / (a^2 T) * (1 - 2 (1-e^{-aT})/(aT) + (1-e^{-2aT})/(2aT)),

and the residual fluctuation of ``\\int e^x dt`` around a path with given time
average is captured by the conditional smearing width evaluated at the
self-consistent frequency from (*).  A deterministic prefactor carries the
integral of the rate along the exact mean path (closed form via the
exponential integral), which makes the sigma -> 0 limit of the price exact for
every starting point, not just on the reversion level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expi

from .core import ModelCalibration, log_target

__all__ = [
    "GtfkState",
    "QuadratureSpec",
    "GtfkConvergenceError",
    "GtfkIntegrandError",
    "bk_potential",
    "smeared_exponential",
    "omega_equation",
    "smearing_width",
    "solve_self_consistent",
    "trapezoid",
    "gtfk_price",
    "deterministic_price",
]

#: Cap on the squared trial frequency; nodes driven past it sit so deep in the
#: potential tail that they carry no quadrature weight.
_OMEGA_SQ_CAP = 1e30

_MODE_SIGNS = {"discount": 1.0, "accumulation": -1.0}


class GtfkConvergenceError(ArithmeticError):
    """The (alpha, omega) fixed point failed to converge."""

    def __init__(self, message: str, x_bar: float, alpha: float, residual: float):
        super().__init__(message)
        self.x_bar = x_bar
        self.alpha = alpha
        self.residual = residual


class GtfkIntegrandError(ArithmeticError):
    """A quadrature node produced a non-finite integrand value."""

    def __init__(self, message: str, node_index: int, node_value: float):
        super().__init__(message)
        self.node_index = node_index
        self.node_value = node_value


@dataclass(frozen=True)
class GtfkState:
    """Converged trial-oscillator parameters at one ``x_bar``.

    ``omega_sq`` and ``alpha`` jointly satisfy the self-consistency equation
    to the solver tolerance (the frequency is refreshed from the converged
    width on exit, so the residual of :func:`omega_equation` is zero to float
    precision).
    """

    x_bar: float
    alpha: float
    omega_sq: float
    lam: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_bar)):
            raise ValueError(f"x_bar must be finite, got {self.x_bar!r}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"alpha must be non-negative, got {self.alpha!r}")
        if not (math.isfinite(self.omega_sq) and self.omega_sq > 0.0):
            raise ValueError(f"omega_sq must be strictly positive, got {self.omega_sq!r}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature layout for the ``x_bar`` integral.

    ``nodes`` is odd so the span's midpoint is itself a node; ``halfwidth``
    measures the span in units of the larger of the stationary and
    time-average standard deviations of the log rate.
    """

    nodes: int = 401
    halfwidth: float = 8.0

    def __post_init__(self) -> None:
        if int(self.nodes) != self.nodes or self.nodes < 3 or self.nodes % 2 == 0:
            raise ValueError(f"nodes must be an odd integer >= 3, got {self.nodes!r}")
        if not (math.isfinite(self.halfwidth) and self.halfwidth > 0.0):
            raise ValueError(f"halfwidth must be strictly positive, got {self.halfwidth!r}")


def bk_potential(x_bar, calib: ModelCalibration, mode: str = "accumulation"):
    """Classical potential ``a^2 (b - x)^2 / (2 sigma^2) - a/2 - s e^x``.

    ``mode`` selects the payoff sign: ``s = +1`` for ``"accumulation"``,
    ``s = -1`` for ``"discount"``.  Requires ``sigma > 0`` (the quadratic
    well degenerates in the deterministic limit).
    """
    if mode not in _MODE_SIGNS:
        raise ValueError(f"mode must be 'discount' or 'accumulation', got {mode!r}")
    if calib.sigma == 0.0:
        raise ValueError("bk_potential requires sigma > 0")
    s = -_MODE_SIGNS[mode]  # +1 accumulation, -1 discount
    x = np.asarray(x_bar, dtype=float)
    b = calib.b
    quad = calib.a**2 * (b - x) ** 2 / (2.0 * calib.sigma**2)
    out = quad - 0.5 * calib.a - s * np.exp(x)
    return float(out) if np.isscalar(x_bar) else out


def smeared_exponential(x_bar, alpha):
    """Gaussian-smeared exponential ``E[e^x]`` for ``x ~ N(x_bar, alpha)``,
    i.e. ``exp(x_bar + alpha/2)``."""
    x = np.asarray(x_bar, dtype=float)
    al = np.asarray(alpha, dtype=float)
    if np.any(al < 0.0):
        raise ValueError("alpha must be non-negative")
    out = np.exp(x + 0.5 * al)
    return float(out) if (np.isscalar(x_bar) and np.isscalar(alpha)) else out


def omega_equation(omega, alpha, x_bar, calib: ModelCalibration, lam: float = 1.0):
    """Residual of the self-consistency condition,
    ``omega^2 - a^2 - lam * sigma^2 * exp(alpha/2 + x_bar)``."""
    w = np.asarray(omega, dtype=float)
    out = w * w - calib.a**2 - lam * calib.sigma**2 * smeared_exponential(x_bar, alpha)
    return float(out) if np.isscalar(omega) else out


def smearing_width(omega, tenor: float, sigma: float):
    """Trial-oscillator smearing width ``alpha(omega, T)``.

    Evaluates ``sigma^2/(omega^2 T) * (z coth z - 1)`` with ``z = omega T / 2``
    through three numerically safe regimes: a Taylor series for small ``z``
    (limit ``sigma^2 T / 12``), the direct expression at moderate ``z``, and
    the saturated form ``sigma^2/(2 omega) - sigma^2/(omega^2 T)`` once
    ``coth z`` is 1 to machine precision.
    """
    if not (math.isfinite(tenor) and tenor > 0.0):
        raise ValueError(f"tenor must be strictly positive, got {tenor!r}")
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise ValueError(f"sigma must be non-negative, got {sigma!r}")
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0.0):
        raise ValueError("omega must be non-negative")
    if sigma == 0.0:
        out = np.zeros_like(w)
        return float(out) if np.isscalar(omega) else out

    z = 0.5 * w * tenor
    small = z < 1e-4
    large = z > 20.0
    mid = ~(small | large)

    out = np.empty_like(z)
    # z -> 0: sigma^2 T / 12 * (1 - z^2/15 + 2 z^4 / 315)
    zs = np.where(small, z, 0.0)
    out = np.where(small, sigma * sigma * tenor / 12.0 * (1.0 - zs * zs / 15.0), out)
    zm = np.where(mid, z, 1.0)
    wm = np.where(mid, w, 1.0)
    out = np.where(mid, sigma * sigma / (wm * wm * tenor) * (zm / np.tanh(zm) - 1.0), out)
    wl = np.where(large, w, 1.0)
    out = np.where(large, sigma * sigma / (2.0 * wl) - sigma * sigma / (wl * wl * tenor), out)
    return float(out) if np.isscalar(omega) else out


def _conditional_smearing_width(omega, tenor: float, sigma: float):
    """Within-path variance of the log rate around its own time average.

    For a fixed-start OU path at frequency ``omega`` this is the time-averaged
    marginal variance minus the variance of the time average itself:

        (sigma^2 / 2 omega) (1 - (1 - e^{-2u}) / 2u)
          - (sigma^2 / omega^2 T) (1 - 2 (1 - e^{-u})/u + (1 - e^{-2u})/2u),

    with ``u = omega T``; the small-``u`` limit is ``sigma^2 T / 6``.  This is
    the smear actually applied to the payoff: the mean-path weight already
    accounts for where the path average sits, so only the conditional spread
    around that average remains.
    """
    w = np.asarray(omega, dtype=float)
    if sigma == 0.0:
        out = np.zeros_like(w)
        return float(out) if np.isscalar(omega) else out

    u = w * tenor
    small = u < 1e-3
    s2 = sigma * sigma

    us = np.where(small, u, 0.0)
    series = s2 * tenor * (1.0 / 6.0 - us / 12.0 + us * us / 20.0)

    ud = np.where(small, 1.0, u)
    wd = np.where(small, 1.0, w)
    one_m_e2 = -np.expm1(-2.0 * ud)
    one_m_e1 = -np.expm1(-ud)
    mean_var = s2 / (2.0 * wd) * (1.0 - one_m_e2 / (2.0 * ud))
    avg_var = s2 / (wd * wd * tenor) * (1.0 - 2.0 * one_m_e1 / ud + one_m_e2 / (2.0 * ud))
    direct = np.maximum(mean_var - avg_var, 0.0)

    out = np.where(small, series, direct)
    return float(out) if np.isscalar(omega) else out


def _solve_width_nodes(
    x_eff: np.ndarray,
    calib: ModelCalibration,
    tenor: float,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (alpha, omega_sq) fixed point over an array of node values.

    Starts from ``alpha = 0``, alternates the two update maps, and applies
    0.5 damping on components whose update direction flips.  On exit the
    frequency is refreshed from the converged width so the residual of
    :func:`omega_equation` is exactly zero in floats.
    """
    a2 = calib.a**2
    coupling = lam * calib.sigma**2
    if coupling == 0.0:
        # Frequency pinned at the bare reversion speed; one width update.
        omega_sq = np.full_like(x_eff, a2)
        alpha = np.asarray(smearing_width(np.sqrt(omega_sq), tenor, calib.sigma))
        return alpha, omega_sq

    alpha = np.zeros_like(x_eff)
    prev_delta = np.zeros_like(x_eff)
    converged = False
    for _ in range(max_iter):
        with np.errstate(over="ignore"):
            omega_sq = np.minimum(a2 + coupling * np.exp(x_eff + 0.5 * alpha), _OMEGA_SQ_CAP)
        alpha_new = smearing_width(np.sqrt(omega_sq), tenor, calib.sigma)
        delta = alpha_new - alpha
        if np.max(np.abs(delta)) <= tol:
            alpha = alpha_new
            converged = True
            break
        oscillating = delta * prev_delta < 0.0
        alpha = np.where(oscillating, alpha + 0.5 * delta, alpha_new)
        prev_delta = delta
    if not converged:
        worst = int(np.argmax(np.abs(delta)))
        raise GtfkConvergenceError(
            f"self-consistency loop did not reach |delta alpha| <= {tol:g} within "
            f"{max_iter} iterations (worst node x_bar={x_eff[worst]:.6g}, "
            f"residual {abs(delta[worst]):.3g})",
            x_bar=float(x_eff[worst]),
            alpha=float(alpha[worst]),
            residual=float(abs(delta[worst])),
        )
    with np.errstate(over="ignore"):
        omega_sq = np.minimum(a2 + coupling * np.exp(x_eff + 0.5 * alpha), _OMEGA_SQ_CAP)
    return alpha, omega_sq


def solve_self_consistent(
    x_bar: float,
    calib: ModelCalibration,
    tenor: float,
    lam: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> GtfkState:
    """Solve the (alpha, omega) self-consistency at a single ``x_bar``.

    With ``sigma = 0`` the loop converges immediately to
    ``(alpha, omega^2) = (0, a^2)``; with ``lam = 0`` the frequency stays
    pinned at ``a`` and the width is ``smearing_width(a, T)`` after one
    update.

    Raises
    ------
    GtfkConvergenceError
        If the width update has not contracted below ``tol`` after
        ``max_iter`` iterations; the exception carries the last iterate.
    """
    if not (math.isfinite(x_bar)):
        raise ValueError(f"x_bar must be finite, got {x_bar!r}")
    if not (math.isfinite(tenor) and tenor > 0.0):
        raise ValueError(f"tenor must be strictly positive, got {tenor!r}")
    if not (math.isfinite(lam) and lam >= 0.0):
        raise ValueError(f"lam must be non-negative, got {lam!r}")
    alpha, omega_sq = _solve_width_nodes(
        np.array([x_bar], dtype=float), calib, tenor, lam, tol=tol, max_iter=max_iter
    )
    return GtfkState(x_bar=float(x_bar), alpha=float(alpha[0]),
                     omega_sq=float(omega_sq[0]), lam=float(lam))


def trapezoid(nodes: Sequence[float], values: Sequence[float]) -> float:
    """Composite trapezoid rule over strictly increasing nodes.

    Raises
    ------
    ValueError
        If the arrays differ in length, hold fewer than two points, or the
        nodes are not strictly increasing.
    """
    x = np.asarray(nodes, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"nodes and values must be 1-d of equal length, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two quadrature nodes")
    dx = np.diff(x)
    if np.any(dx <= 0.0):
        raise ValueError("nodes must be strictly increasing")
    return float(np.sum(0.5 * dx * (y[1:] + y[:-1])))


def _decay_fraction(u: float) -> float:
    """(1 - e^{-u}) / u, series-protected near zero."""
    if u < 1e-6:
        return 1.0 - 0.5 * u + u * u / 6.0
    return -math.expm1(-u) / u


def _time_average_mean(calib: ModelCalibration, tenor: float) -> float:
    u = calib.a * tenor
    return calib.b + (calib.x0 - calib.b) * _decay_fraction(u)


def _time_average_variance(calib: ModelCalibration, tenor: float) -> float:
    if calib.sigma == 0.0:
        return 0.0
    u = calib.a * tenor
    s2t = calib.sigma * calib.sigma * tenor
    if u < 1e-3:
        return s2t * (1.0 / 3.0 - u / 4.0 + 7.0 * u * u / 60.0)
    bracket = 1.0 - 2.0 * (-math.expm1(-u)) / u + (-math.expm1(-2.0 * u)) / (2.0 * u)
    return calib.sigma**2 / (calib.a**2 * tenor) * bracket


def _mean_path_integral(calib: ModelCalibration, tenor: float) -> float:
    """``\\int_0^T exp(b + (x0 - b) e^{-a t}) dt`` in closed form.

    Substituting ``v = c e^{-a t}`` with ``c = x0 - b`` turns the integrand
    into ``e^b e^v / (a v)``, so the integral is
    ``(e^b / a) (Ei(c) - Ei(c e^{-aT}))``; a short series in ``c`` covers the
    removable singularity at ``c = 0``.
    """
    c = calib.x0 - calib.b
    u = calib.a * tenor
    eb = calib.theta  # e^{b}
    if abs(c) < 1e-8:
        t1 = c * (-math.expm1(-u)) / calib.a
        t2 = c * c * (-math.expm1(-2.0 * u)) / (4.0 * calib.a)
        return eb * (tenor + t1 + t2)
    return eb / calib.a * (expi(c) - expi(c * math.exp(-u)))


def deterministic_price(calib: ModelCalibration, tenor: float, mode: str = "discount") -> float:
    """Bond price in the sigma = 0 limit: ``exp(-s' \\int_0^T e^{m(t)} dt)``
    along the deterministic mean path ``m(t) = b + (x0 - b) e^{-a t}``."""
    if mode not in _MODE_SIGNS:
        raise ValueError(f"mode must be 'discount' or 'accumulation', got {mode!r}")
    return math.exp(-_MODE_SIGNS[mode] * _mean_path_integral(calib, tenor))


def _node_grid(calib: ModelCalibration, tenor: float, quad: QuadratureSpec) -> tuple[np.ndarray, float, float]:
    """Quadrature nodes spanning both the reversion level and the transient
    center, stretched by the larger of the stationary and time-average
    standard deviations."""
    center = _time_average_mean(calib, tenor)
    var = _time_average_variance(calib, tenor)
    scale = max(calib.sigma / math.sqrt(2.0 * calib.a), math.sqrt(var))
    lo = min(calib.b, center) - quad.halfwidth * scale
    hi = max(calib.b, center) + quad.halfwidth * scale
    return np.linspace(lo, hi, quad.nodes), center, var


def gtfk_price(
    calib: ModelCalibration,
    tenor: float,
    quad: QuadratureSpec | None = None,
    lam: float = 1.0,
    mode: str = "discount",
    correction: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """GTFK approximation of the bond price.

    The payoff exponent at each node uses the smeared rate
    ``exp(x_bar' + alpha_c / 2)`` with the conditional width ``alpha_c``
    evaluated at the node's self-consistent frequency; nodes are weighted by
    the exact Gaussian density of the path time average, and a deterministic
    prefactor re-centers the rate integral on the exact mean path.  With
    ``sigma = 0`` this collapses to :func:`deterministic_price`.

    Parameters
    ----------
    correction : callable, optional
        Maps the array of node values ``x_bar`` to shifted values ``x_bar'``
        used *only* inside the exponential-rate terms (the self-consistency
        coupling and the payoff smear); the Gaussian weight keeps the raw
        nodes.  ``None`` applies no shift.

    Raises
    ------
    GtfkConvergenceError
        If the self-consistency loop fails at any node.
    GtfkIntegrandError
        If a node produces a non-finite integrand (accumulation overflow).
    """
    if quad is None:
        quad = QuadratureSpec()
    if mode not in _MODE_SIGNS:
        raise ValueError(f"mode must be 'discount' or 'accumulation', got {mode!r}")
    if not (math.isfinite(tenor) and tenor > 0.0):
        raise ValueError(f"tenor must be strictly positive, got {tenor!r}")
    if not (math.isfinite(lam) and lam >= 0.0):
        raise ValueError(f"lam must be non-negative, got {lam!r}")
    sgn = _MODE_SIGNS[mode]

    mean_integral = _mean_path_integral(calib, tenor)
    if calib.sigma == 0.0:
        return math.exp(-sgn * mean_integral)

    nodes, center, var = _node_grid(calib, tenor, quad)
    spacing = (nodes[-1] - nodes[0]) / (quad.nodes - 1)

    if math.sqrt(var) < spacing:
        # Time-average density narrower than the node spacing: quadrature over
        # it would see a single point anyway, so price directly at the center.
        x = np.array([center])
        xe = np.asarray(correction(x), dtype=float) if correction is not None else x
        _, omega_sq = _solve_width_nodes(xe, calib, tenor, lam)
        alpha_c = _conditional_smearing_width(np.sqrt(omega_sq), tenor, calib.sigma)
        exponent = (
            -sgn * (mean_integral - tenor * math.exp(center))
            - sgn * tenor * float(np.exp(xe[0] + 0.5 * alpha_c[0]))
        )
        try:
            price = math.exp(exponent)
        except OverflowError:
            price = math.inf
        if not (math.isfinite(price) and price > 0.0):
            raise GtfkIntegrandError(
                f"non-finite price at degenerate node x_bar={center:.6g}", 0, center
            )
        return price

    xe = np.asarray(correction(nodes), dtype=float) if correction is not None else nodes
    if xe.shape != nodes.shape:
        raise ValueError("correction must preserve the node array shape")

    _, omega_sq = _solve_width_nodes(xe, calib, tenor, lam)
    alpha_c = _conditional_smearing_width(np.sqrt(omega_sq), tenor, calib.sigma)

    log_gauss = -((nodes - center) ** 2) / (2.0 * var)
    with np.errstate(over="ignore"):
        smeared = np.exp(xe + 0.5 * alpha_c)
        log_payoff = log_gauss - sgn * tenor * smeared

    bad = ~np.isfinite(log_payoff)
    if sgn > 0:
        bad &= ~np.isneginf(log_payoff)  # discounting may underflow to -inf harmlessly
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        detail = "accumulation payoff overflowed" if sgn < 0 else "non-finite payoff"
        raise GtfkIntegrandError(
            f"non-finite integrand at node {i} (x_bar={nodes[i]:.6g}): {detail}",
            i, float(nodes[i]),
        )

    m_num = float(np.max(log_payoff))
    if not math.isfinite(m_num):
        raise GtfkIntegrandError(
            "payoff underflowed at every quadrature node; price below double range",
            0, float(nodes[0]),
        )
    num = trapezoid(nodes, np.exp(log_payoff - m_num))
    m_den = float(np.max(log_gauss))
    den = trapezoid(nodes, np.exp(log_gauss - m_den))

    log_price = (
        -sgn * (mean_integral - tenor * math.exp(center))
        + (math.log(num) + m_num)
        - (math.log(den) + m_den)
    )
    try:
        price = math.exp(log_price)
    except OverflowError:
        price = math.inf
    if not (math.isfinite(price) and price > 0.0):
        raise GtfkIntegrandError(
            f"price assembly produced a non-finite value (log price {log_price:.6g})",
            -1, center,
        )
    return price
