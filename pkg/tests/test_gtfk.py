import math

import mpmath
import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad as sciquad
from scipy.optimize import brentq

from bkgtfk.core import ModelCalibration
from bkgtfk.gtfk import (
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
from bkgtfk.gtfk import _conditional_smearing_width
from bkgtfk.mc import McConfig, mc_zcb_price

from conftest import REF_CALIB, REF_TENOR

# Frozen goldens at the reference point (computed once, bit-stable since).
GTFK_FIXTURE = 0.7236402023499696
STATE_ALPHA = 0.19675441802587212
STATE_OMEGA_SQ = 0.06965165719122848


def exact_width(omega, tenor, sigma, dps=40):
    """High-precision evaluation of sigma^2/(omega^2 T) (z coth z - 1),
    z = omega T / 2, used as the oracle for every smearing_width branch."""
    with mpmath.workdps(dps):
        w, T, s = mpmath.mpf(omega), mpmath.mpf(tenor), mpmath.mpf(sigma)
        z = w * T / 2
        return float(s**2 / (w**2 * T) * (z / mpmath.tanh(z) - 1))


class TestPotential:
    def test_values_at_reversion_level(self, ref_calib):
        b = ref_calib.b
        assert bk_potential(b, ref_calib) == pytest.approx(-0.2199 / 2 - 0.0469, rel=1e-14)
        assert bk_potential(b, ref_calib, mode="discount") == pytest.approx(
            -0.2199 / 2 + 0.0469, rel=1e-14)

    def test_quadratic_well_is_positive(self, ref_calib):
        # one log-unit below the reversion level
        x = ref_calib.b - 1.0
        expected = (0.2199**2 / (2 * 0.6415**2)) - 0.2199 / 2 - 0.0469 * math.exp(-1)
        assert bk_potential(x, ref_calib) == pytest.approx(expected, rel=1e-14)

    def test_vectorized(self, ref_calib):
        xs = np.array([ref_calib.b, ref_calib.b - 0.5])
        out = bk_potential(xs, ref_calib)
        assert out.shape == (2,)
        assert out[0] == bk_potential(float(xs[0]), ref_calib)

    def test_rejects_zero_sigma_and_bad_mode(self, ref_calib):
        flat = ModelCalibration(a=0.2, sigma=0.0, theta=0.04, r0=0.04)
        with pytest.raises(ValueError):
            bk_potential(flat.b, flat)
        with pytest.raises(ValueError):
            bk_potential(ref_calib.b, ref_calib, mode="forward")


class TestSmearedExponential:
    def test_zero_width_is_plain_exponential(self):
        assert smeared_exponential(-3.0, 0.0) == math.exp(-3.0)

    def test_matches_gauss_hermite_average(self):
        # E[e^x], x ~ N(x_bar, alpha), via 80-node Hermite quadrature
        x_bar, alpha = -3.0597, 0.21
        nodes, weights = hermegauss(80)
        oracle = float(np.sum(weights * np.exp(x_bar + math.sqrt(alpha) * nodes))
                       / math.sqrt(2.0 * math.pi))
        assert smeared_exponential(x_bar, alpha) == pytest.approx(oracle, rel=1e-13)

    def test_rejects_negative_width(self):
        with pytest.raises(ValueError):
            smeared_exponential(-3.0, -0.01)


class TestOmegaEquation:
    def test_zero_at_closed_form_root(self, ref_calib):
        alpha, x_bar, lam = 0.21, -3.0, 1.0
        omega = math.sqrt(ref_calib.a**2 + lam * ref_calib.sigma**2 * math.exp(x_bar + alpha / 2))
        assert omega_equation(omega, alpha, x_bar, ref_calib, lam) == pytest.approx(0.0, abs=1e-16)

    def test_sign_change_brackets_root(self, ref_calib):
        alpha, x_bar = 0.21, -3.0
        assert omega_equation(ref_calib.a, alpha, x_bar, ref_calib) < 0.0
        assert omega_equation(5.0, alpha, x_bar, ref_calib) > 0.0


class TestSmearingWidth:
    @pytest.mark.parametrize("omega_t", [1e-6, 1e-4, 0.1, 2.0, 10.0, 39.9, 40.1, 100.0])
    def test_matches_high_precision_oracle_across_branches(self, omega_t):
        tenor, sigma = 5.0, 0.6415
        omega = omega_t / tenor
        assert smearing_width(omega, tenor, sigma) == pytest.approx(
            exact_width(omega, tenor, sigma), rel=1e-12)

    def test_small_frequency_limit(self):
        # omega -> 0 saturates the diffusive limit sigma^2 T / 12
        assert smearing_width(0.0, 5.0, 0.6415) == 0.6415**2 * 5.0 / 12.0

    def test_deep_saturation_equals_two_term_form(self):
        # At omega T = 50 the direct expression has collapsed onto
        # sigma^2/(2 omega) - sigma^2/(omega^2 T) to machine precision
        # (coth(25) - 1 ~ 1e-22).
        tenor, sigma = 5.0, 0.6415
        omega = 50.0 / tenor
        saturated = sigma**2 / (2 * omega) - sigma**2 / (omega**2 * tenor)
        assert smearing_width(omega, tenor, sigma) == pytest.approx(saturated, rel=1e-15)

    def test_half_width_asymptote_approached_at_rate_two_over_omega_t(self):
        # alpha / (sigma^2 / 2 omega) = 1 - 2/(omega T): 0.96 at omega T = 50,
        # within 1% of the bare asymptote only once omega T >= 200.
        tenor, sigma = 5.0, 0.6415
        for omega_t, expected in [(50.0, 0.96), (200.0, 0.99)]:
            omega = omega_t / tenor
            ratio = smearing_width(omega, tenor, sigma) / (sigma**2 / (2 * omega))
            assert ratio == pytest.approx(expected, abs=1e-12)
        assert smearing_width(400.0 / tenor, tenor, sigma) / (sigma**2 / (2 * 400.0 / tenor)) > 0.99

    def test_zero_sigma_gives_zero(self):
        assert smearing_width(1.3, 5.0, 0.0) == 0.0

    def test_vectorized_matches_scalar_per_branch(self):
        tenor, sigma = 5.0, 0.5
        omegas = np.array([1e-7, 0.3, 9.0])  # small / mid / large branch
        out = smearing_width(omegas, tenor, sigma)
        for i, w in enumerate(omegas):
            assert out[i] == smearing_width(float(w), tenor, sigma)

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            smearing_width(-0.1, 5.0, 0.5)
        with pytest.raises(ValueError):
            smearing_width(0.3, 0.0, 0.5)
        with pytest.raises(ValueError):
            smearing_width(0.3, 5.0, -0.5)


class TestConditionalWidth:
    def exact(self, omega, tenor, sigma, dps=40):
        # time-averaged marginal variance minus the variance of the
        # time average, for a fixed-start OU path
        with mpmath.workdps(dps):
            w, T, s = mpmath.mpf(omega), mpmath.mpf(tenor), mpmath.mpf(sigma)
            u = w * T
            mean_var = s**2 / (2 * w) * (1 - (1 - mpmath.e**(-2 * u)) / (2 * u))
            avg_var = s**2 / (w**2 * T) * (
                1 - 2 * (1 - mpmath.e**(-u)) / u + (1 - mpmath.e**(-2 * u)) / (2 * u))
            return float(mean_var - avg_var)

    @pytest.mark.parametrize("u", [1e-5, 9e-4, 1.1e-3, 0.5, 3.0, 30.0])
    def test_matches_high_precision_oracle(self, u):
        tenor, sigma = 5.0, 0.6415
        omega = u / tenor
        assert _conditional_smearing_width(omega, tenor, sigma) == pytest.approx(
            self.exact(omega, tenor, sigma), rel=1e-9)

    def test_small_u_limit_is_sigma_sq_t_over_six(self):
        got = _conditional_smearing_width(1e-9, 5.0, 0.6415)
        assert got == pytest.approx(0.6415**2 * 5.0 / 6.0, rel=1e-8)

    def test_zero_sigma_gives_zero(self):
        assert _conditional_smearing_width(0.5, 5.0, 0.0) == 0.0


class TestSelfConsistency:
    def test_frozen_state_at_reference_point(self, ref_calib):
        st = solve_self_consistent(math.log(0.0469), ref_calib, REF_TENOR)
        assert st.alpha == STATE_ALPHA
        assert st.omega_sq == STATE_OMEGA_SQ

    @pytest.mark.parametrize("tenor", [1.0, 5.0, REF_TENOR])
    def test_residual_and_width_consistency(self, ref_calib, tenor):
        st = solve_self_consistent(ref_calib.b, ref_calib, tenor)
        residual = omega_equation(math.sqrt(st.omega_sq), st.alpha, st.x_bar, ref_calib, st.lam)
        assert abs(residual) <= 1e-12
        assert abs(st.alpha - smearing_width(math.sqrt(st.omega_sq), tenor, ref_calib.sigma)) <= 1e-10

    def test_idempotent_under_one_more_update(self, ref_calib):
        # Feeding the converged state back through both update maps moves it
        # by no more than the solver tolerance.
        st = solve_self_consistent(ref_calib.b, ref_calib, 5.0)
        omega_sq_next = (ref_calib.a**2
                         + st.lam * ref_calib.sigma**2 * math.exp(st.x_bar + st.alpha / 2))
        alpha_next = smearing_width(math.sqrt(omega_sq_next), 5.0, ref_calib.sigma)
        assert omega_sq_next == pytest.approx(st.omega_sq, rel=1e-12)
        assert abs(alpha_next - st.alpha) <= 1e-10

    def test_deterministic_rerun(self, ref_calib):
        a = solve_self_consistent(-3.1, ref_calib, 5.0)
        b = solve_self_consistent(-3.1, ref_calib, 5.0)
        assert (a.alpha, a.omega_sq) == (b.alpha, b.omega_sq)

    @pytest.mark.parametrize("x_bar,tenor,lam", [
        (math.log(0.0469), REF_TENOR, 1.0),
        (-2.5, 2.0, 1.0),
        (-3.5, 10.0, 0.7),
    ])
    def test_agrees_with_bracketing_root_finder(self, ref_calib, x_bar, tenor, lam):
        f = lambda w: omega_equation(
            w, smearing_width(w, tenor, ref_calib.sigma), x_bar, ref_calib, lam)
        w_star = brentq(f, ref_calib.a, 5.0, xtol=1e-14, rtol=8.9e-16)
        st = solve_self_consistent(x_bar, ref_calib, tenor, lam=lam)
        assert math.sqrt(st.omega_sq) == pytest.approx(w_star, rel=1e-12)

    def test_zero_coupling_decouples_exactly(self, ref_calib):
        st = solve_self_consistent(-3.0, ref_calib, 5.0, lam=0.0)
        assert st.omega_sq == ref_calib.a**2
        assert st.alpha == smearing_width(ref_calib.a, 5.0, ref_calib.sigma)

    def test_zero_sigma_converges_immediately(self):
        flat = ModelCalibration(a=0.3, sigma=0.0, theta=0.04, r0=0.04)
        st = solve_self_consistent(flat.b, flat, 5.0)
        assert st.alpha == 0.0
        assert st.omega_sq == flat.a**2

    def test_iteration_budget_exhaustion_carries_state(self, ref_calib):
        with pytest.raises(GtfkConvergenceError) as exc_info:
            solve_self_consistent(ref_calib.b, ref_calib, 5.0, max_iter=1)
        err = exc_info.value
        assert err.x_bar == ref_calib.b
        assert err.residual > 1e-10
        assert err.alpha >= 0.0

    def test_rejects_invalid_arguments(self, ref_calib):
        with pytest.raises(ValueError):
            solve_self_consistent(math.nan, ref_calib, 5.0)
        with pytest.raises(ValueError):
            solve_self_consistent(-3.0, ref_calib, 0.0)
        with pytest.raises(ValueError):
            solve_self_consistent(-3.0, ref_calib, 5.0, lam=-1.0)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            GtfkState(x_bar=-3.0, alpha=-0.1, omega_sq=0.05, lam=1.0)
        with pytest.raises(ValueError):
            GtfkState(x_bar=-3.0, alpha=0.1, omega_sq=0.0, lam=1.0)


class TestQuadratureSpec:
    def test_defaults(self):
        spec = QuadratureSpec()
        assert spec.nodes == 401 and spec.halfwidth == 8.0

    @pytest.mark.parametrize("kwargs", [
        dict(nodes=400),   # even
        dict(nodes=1),
        dict(halfwidth=0.0),
        dict(halfwidth=math.nan),
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            QuadratureSpec(**kwargs)


class TestTrapezoid:
    def test_linear_exact(self):
        assert trapezoid([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]) == 2.0

    def test_constant(self):
        nodes = np.linspace(-1.3, 2.7, 11)
        assert trapezoid(nodes, np.full(11, 0.75)) == pytest.approx(0.75 * 4.0, rel=1e-15)

    def test_exponential_on_default_node_count(self):
        nodes = np.linspace(0.0, 1.0, 401)
        got = trapezoid(nodes, np.exp(nodes))
        assert got == pytest.approx(math.e - 1.0, abs=1e-6)

    def test_non_uniform_nodes(self):
        # piecewise: 0.5 over [0,1] + 4.0 over [1,3]
        assert trapezoid([0.0, 1.0, 3.0], [0.0, 1.0, 3.0]) == 4.5

    @pytest.mark.parametrize("nodes,values", [
        ([0.0, 1.0], [1.0]),
        ([0.0], [1.0]),
        ([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]),
        ([1.0, 0.0], [1.0, 1.0]),
    ])
    def test_rejects_malformed_input(self, nodes, values):
        with pytest.raises(ValueError):
            trapezoid(nodes, values)


class TestDeterministicPrice:
    def test_flat_start(self):
        calib = ModelCalibration(a=0.25, sigma=0.0, theta=0.04, r0=0.04)
        assert deterministic_price(calib, 5.0) == pytest.approx(math.exp(-0.2), rel=1e-14)

    def test_relaxing_start_matches_adaptive_quadrature(self):
        calib = ModelCalibration(a=0.3, sigma=0.0, theta=0.05, r0=0.02)
        m = lambda t: math.exp(calib.b + (calib.x0 - calib.b) * math.exp(-calib.a * t))
        integral, _ = sciquad(m, 0.0, 7.0, epsabs=1e-14, epsrel=1e-14)
        assert deterministic_price(calib, 7.0) == pytest.approx(math.exp(-integral), rel=1e-12)

    def test_accumulation_is_reciprocal(self):
        calib = ModelCalibration(a=0.3, sigma=0.0, theta=0.05, r0=0.02)
        disc = deterministic_price(calib, 7.0)
        acc = deterministic_price(calib, 7.0, mode="accumulation")
        assert acc == pytest.approx(1.0 / disc, rel=1e-12)
        assert acc > 1.0

    def test_rejects_bad_mode(self, ref_calib):
        with pytest.raises(ValueError):
            deterministic_price(ref_calib, 5.0, mode="both")


class TestGtfkPrice:
    def test_frozen_fixture(self, ref_calib):
        assert gtfk_price(ref_calib, REF_TENOR) == GTFK_FIXTURE

    def test_zero_sigma_collapses_to_deterministic(self):
        calib = ModelCalibration(a=0.3, sigma=0.0, theta=0.05, r0=0.02)
        assert gtfk_price(calib, 7.0) == deterministic_price(calib, 7.0)

    def test_vanishing_sigma_limit(self):
        flat = ModelCalibration(a=0.25, sigma=1e-8, theta=0.04, r0=0.04)
        assert gtfk_price(flat, 5.0) == pytest.approx(math.exp(-0.2), rel=1e-4)

    def test_vanishing_sigma_limit_relaxing_start(self):
        calib = ModelCalibration(a=0.3, sigma=1e-8, theta=0.05, r0=0.02)
        assert gtfk_price(calib, 7.0) == pytest.approx(
            deterministic_price(ModelCalibration(a=0.3, sigma=0.0, theta=0.05, r0=0.02), 7.0),
            rel=1e-4)

    @pytest.mark.parametrize("a", [0.05, 0.5])
    @pytest.mark.parametrize("sigma", [0.2, 1.0])
    @pytest.mark.parametrize("tenor", [1.0, 10.0])
    @pytest.mark.parametrize("r0", [0.02, 0.06])
    def test_discount_price_in_unit_interval(self, a, sigma, tenor, r0):
        calib = ModelCalibration(a=a, sigma=sigma, theta=0.04, r0=r0)
        p = gtfk_price(calib, tenor)
        assert 0.0 < p < 1.0

    def test_node_refinement_converged(self, ref_calib):
        p401 = gtfk_price(ref_calib, REF_TENOR, QuadratureSpec(nodes=401))
        p801 = gtfk_price(ref_calib, REF_TENOR, QuadratureSpec(nodes=801))
        assert abs(p801 - p401) / p401 <= 1e-6

    def test_identity_correction_is_bit_transparent(self, ref_calib):
        plain = gtfk_price(ref_calib, REF_TENOR)
        shifted = gtfk_price(ref_calib, REF_TENOR, correction=lambda x: x)
        assert shifted == plain

    def test_constant_upward_shift_lowers_discount_price(self, ref_calib):
        # the correction enters only through e^{x_bar}: raising the log rate
        # at every node must cheapen the bond
        plain = gtfk_price(ref_calib, REF_TENOR)
        bumped = gtfk_price(ref_calib, REF_TENOR, correction=lambda x: x + 0.05)
        assert bumped < plain

    def test_correction_must_preserve_shape(self, ref_calib):
        with pytest.raises(ValueError):
            gtfk_price(ref_calib, REF_TENOR, correction=lambda x: x[:-1])

    def test_short_tenor_agrees_with_mc(self):
        calib = ModelCalibration(a=0.05, sigma=0.10, theta=0.04, r0=0.04)
        est = mc_zcb_price(calib, 1.0, McConfig(n_paths=2**13, seed=303))
        assert abs(gtfk_price(calib, 1.0) - est.value) <= 3.0 * est.stderr

    def test_accumulation_mode_dominates_reciprocal(self, ref_calib):
        disc = gtfk_price(ref_calib, REF_TENOR)
        acc = gtfk_price(ref_calib, REF_TENOR, mode="accumulation")
        assert acc > 1.0
        # E[e^X] >= 1 / E[e^-X]
        assert 1.0 / acc <= disc

    def test_accumulation_overflow_raises_named_error(self):
        wild = ModelCalibration(a=0.05, sigma=3.0, theta=0.05, r0=0.05)
        with pytest.raises(GtfkIntegrandError):
            gtfk_price(wild, 30.0, mode="accumulation")

    def test_rejects_invalid_arguments(self, ref_calib):
        with pytest.raises(ValueError):
            gtfk_price(ref_calib, 0.0)
        with pytest.raises(ValueError):
            gtfk_price(ref_calib, 5.0, mode="both")
        with pytest.raises(ValueError):
            gtfk_price(ref_calib, 5.0, lam=-0.5)
