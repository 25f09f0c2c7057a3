"""Certification tests: constant synthesis, Lyapunov pieces, grid verifiers.

Grid margins are frozen at reduced resolutions (the acceptance suite runs
the full 400 x 400 checks); where a worst case has a closed form — the
boundary-decrement margin, the planar margins, the reach-time integral —
the pinned number is cross-checked against that form, not just replayed.
"""

import dataclasses
import math

import numpy as np
import pytest

from rclf.certify import (
    AffineFunction,
    CertificateReport,
    ControlAffineSystem,
    GrowthEnvelope,
    check_rclf_constants,
    reach_time_bound,
    relaxed_band_constants,
    relaxed_growth_envelope,
    rclf_lyapunov_parts,
    synthesize_rclf_constants,
    verify_rclf_derivative,
    verify_relaxed_clf_conditions,
    verify_relaxed_conditions,
)
from rclf.chemostat import GrowthModel, S2Certificate, check_S2, solve_equilibrium, transformed_growth
from rclf.feedback import LSpec, PsiSpec, QuadraticForm, RclfFeedbackParams

DEMO = solve_equilibrium(
    S_i=512.0,
    K=1.0,
    b=0.0,
    m=0.0,
    D_s=5.409168374721223,
    growth=GrowthModel("haldane", 75.0, 100.0, 0.025),
).with_uncertainty(0.05)
S2 = check_S2(DEMO)
CONSTANTS = synthesize_rclf_constants(DEMO, S2)
PSI = PsiSpec(slope=1.0)
ELL = LSpec(l0=1.0)

FROZEN = {
    "x1_star": -1.8520068513355552,
    "p": 1.33973428603327,
    "delta": 0.669867143016635,
    "beta_min": -3.2921015548959454,
    "beta_max": 3.498261598887135,
    "eps": 0.28954031335786956,
    "r": 2.856339597011185,
    "L": 0.0301912171477172,
    "B": 3.498261598887135,
    "M": 4582424.913323581,
    "A": 3857582.879639095,
}


class TestConstantSynthesis:
    def test_frozen_values(self):
        for name, want in FROZEN.items():
            assert getattr(CONSTANTS, name) == pytest.approx(want, rel=1e-12), name

    def test_offset_is_midpoint_of_feasible_interval(self):
        # The demo band is feasible down to offset zero, so the midpoint
        # rule lands exactly at p/2.
        assert CONSTANTS.delta == pytest.approx(CONSTANTS.p / 2.0, rel=1e-15)

    def test_curvature_ceiling_follows_binding_ratio(self):
        k = CONSTANTS
        eps_a = (1.0 - math.exp(k.x1_star)) / (-k.x1_star)
        eps_b = (math.exp(k.beta_min) - 1.0) / k.beta_min
        assert k.eps == pytest.approx(0.99 * min(eps_a, eps_b), rel=1e-14)
        assert eps_b < eps_a  # balance side binds for the demo plant

    def test_band_magnitude_consistency(self):
        k = CONSTANTS
        assert k.B == max(abs(k.beta_min), abs(k.beta_max))
        assert k.beta_min < 0.0 < k.beta_max
        assert 0.0 < k.delta < k.p

    def test_resubstitution_is_silent(self):
        check_rclf_constants(DEMO, CONSTANTS)  # must not raise

    def test_shrunk_curvature_rejected(self):
        small_A = dataclasses.replace(CONSTANTS, A=CONSTANTS.A / 1000.0)
        with pytest.raises(ValueError, match="A too small"):
            check_rclf_constants(DEMO, small_A)
        small_M = dataclasses.replace(CONSTANTS, M=CONSTANTS.M / 100.0)
        with pytest.raises(ValueError, match="M below"):
            check_rclf_constants(DEMO, small_M)

    def test_tampered_band_rejected(self):
        shifted = dataclasses.replace(
            CONSTANTS,
            beta_min=CONSTANTS.beta_min - 1.0,
            B=max(abs(CONSTANTS.beta_min - 1.0), CONSTANTS.beta_max),
        )
        with pytest.raises(ValueError, match="balance band inconsistent"):
            check_rclf_constants(DEMO, shifted)

    def test_oversized_eps_rejected_on_each_side(self):
        # 0.9 breaks the substrate-side bound; 0.4 clears it but breaks
        # the balance side (the demo's eps ceiling is about 0.29).
        with pytest.raises(ValueError, match="substrate-side"):
            check_rclf_constants(DEMO, dataclasses.replace(CONSTANTS, eps=0.9))
        with pytest.raises(ValueError, match="balance-side"):
            check_rclf_constants(DEMO, dataclasses.replace(CONSTANTS, eps=0.4))

    def test_constructor_validation(self):
        with pytest.raises(ValueError, match="delta"):
            dataclasses.replace(CONSTANTS, delta=CONSTANTS.p * 2.0)
        with pytest.raises(ValueError, match="beta"):
            dataclasses.replace(CONSTANTS, beta_max=-1.0)
        with pytest.raises(ValueError, match="B must equal"):
            dataclasses.replace(CONSTANTS, B=1.0)

    def test_infeasible_band_reported(self):
        # A plant with a large biomass-recycle factor G = D_s/(K(D_s+b)-m)
        # cannot support this margin: the upper band bound stays negative
        # for every offset in (0, p).
        lean = solve_equilibrium(
            100.0, 1.0, 0.0, 1.8, 1.9, GrowthModel("monod", 4.0, 10.0)
        )
        forged = S2Certificate(S_plus=1.0, p=1.0, x1_plus=-5.0, x1_star=-1.0)
        with pytest.raises(ValueError, match="no admissible balance-band offset"):
            synthesize_rclf_constants(lean, forged)


class TestLyapunovParts:
    def test_zero_at_origin_positive_elsewhere(self):
        value, _ = rclf_lyapunov_parts(CONSTANTS)
        assert value(0.0, 0.0) == 0.0
        rng = np.random.default_rng(55)
        x1 = rng.uniform(-8.0, 8.0, size=2000)
        x2 = rng.uniform(-8.0, 8.0, size=2000)
        keep = x1**2 + x2**2 > 1e-12
        assert np.all(value(x1[keep], x2[keep]) > 0.0)

    def test_gradient_matches_finite_differences(self):
        value, dgamma = rclf_lyapunov_parts(CONSTANTS)
        eh = 1e-6
        for x1 in (-3.0, -0.5, 0.7, 1.5, 2.9):
            num = (value(x1 + eh, 0.0) - value(x1 - eh, 0.0)) / (2.0 * eh)
            assert dgamma(x1) == pytest.approx(num, rel=1e-5)

    def test_wing_switches_smoothly(self):
        # C^1 at the switch point x1 = -x1_star: the exponential wing and
        # its slope both vanish there.
        _, dgamma = rclf_lyapunov_parts(CONSTANTS)
        sw = -CONSTANTS.x1_star
        below = float(dgamma(sw - 1e-9))
        above = float(dgamma(sw + 1e-9))
        assert above - below == pytest.approx(0.0, abs=1e-2 * abs(below))
        assert float(dgamma(sw)) == pytest.approx(CONSTANTS.M * sw, rel=1e-12)

    def test_quadratic_plus_kinetic_split(self):
        value, _ = rclf_lyapunov_parts(CONSTANTS)
        assert value(-1.0, 3.0) - value(-1.0, 0.0) == pytest.approx(4.5, rel=1e-12)


class TestGrowthEnvelope:
    ENV = relaxed_growth_envelope(DEMO)

    def test_floor_and_growth(self):
        rng = np.random.default_rng(60)
        x1 = rng.uniform(-20.0, 20.0, size=1000)
        x2 = rng.uniform(-20.0, 20.0, size=1000)
        vals = self.ENV.value(x1, x2)
        assert np.min(vals) >= 1.0
        assert self.ENV.value(0.0, 0.0) < self.ENV.value(0.0, 30.0)
        assert self.ENV.value(0.0, 0.0) < self.ENV.value(-30.0, 0.0)

    def test_radially_unbounded_on_rays(self):
        for theta in np.linspace(0.0, 2.0 * math.pi, 17):
            radii = np.array([1.0, 10.0, 100.0, 1000.0])
            vals = self.ENV.value(radii * math.cos(theta), radii * math.sin(theta))
            assert np.all(np.diff(vals) > 0.0)

    def test_gradient_matches_finite_differences(self):
        eh = 1e-6
        rng = np.random.default_rng(61)
        for _ in range(50):
            x1, x2 = rng.uniform(-5.0, 5.0, size=2)
            g1, g2 = self.ENV.grad(x1, x2)
            n1 = (self.ENV.value(x1 + eh, x2) - self.ENV.value(x1 - eh, x2)) / (2 * eh)
            n2 = (self.ENV.value(x1, x2 + eh) - self.ENV.value(x1, x2 - eh)) / (2 * eh)
            assert g1 == pytest.approx(n1, rel=1e-5, abs=1e-7)
            assert g2 == pytest.approx(n2, rel=1e-5, abs=1e-7)

    def test_ridge_inactive_below_profile(self):
        # Deep below the sustainable biomass level only the x1 and min
        # terms contribute.
        env = GrowthEnvelope(c=0.5)
        assert env.value(1.0, -3.0) == pytest.approx(0.5 + 4.5 + 1.0, rel=1e-12)


class TestBandConstants:
    def test_frozen_values(self):
        eps_hat, delta0 = relaxed_band_constants(DEMO, CONSTANTS.x1_star, PSI, ELL)
        assert eps_hat == pytest.approx(0.9260034256677776, rel=1e-15)
        assert delta0 == pytest.approx(0.9503611464535089, rel=1e-14)

    def test_closed_forms(self):
        x1s = CONSTANTS.x1_star
        eps_hat, delta0 = relaxed_band_constants(DEMO, x1s, PSI, ELL)
        assert eps_hat == -0.5 * x1s
        want = (DEMO.c * math.exp(-0.5 * x1s) + 1.0) * (-0.5 * x1s)
        assert delta0 == pytest.approx(want, rel=1e-14)

    def test_decrement_scales_with_gain_floor(self):
        _, d1 = relaxed_band_constants(DEMO, CONSTANTS.x1_star, PSI, LSpec(2.0))
        _, d2 = relaxed_band_constants(DEMO, CONSTANTS.x1_star, PSI, LSpec(1.0))
        assert d1 == pytest.approx(2.0 * d2, rel=1e-15)


class TestRelaxedVerifier:
    REPORTS = verify_relaxed_conditions(DEMO, CONSTANTS, PSI, ELL, grid=(80, 80))

    def test_all_regions_pass(self):
        assert [r.region for r in self.REPORTS] == ["omega_P2", "lemma25_h", "lemma25_W"]
        assert all(r.passed for r in self.REPORTS)

    def test_frozen_margins(self):
        margins = {r.region: r.worst_margin for r in self.REPORTS}
        assert margins["omega_P2"] == pytest.approx(-44.2255730045182, rel=1e-10)
        assert margins["lemma25_h"] == pytest.approx(-0.015884259807798062, rel=1e-10)
        assert margins["lemma25_W"] == pytest.approx(-6.7754388198541005, rel=1e-10)

    def test_boundary_margin_matches_closed_form(self):
        # The worst point of the decrement check sits at the band edge
        # x1 = x1_star/2 with the biomass coordinate at the window floor,
        # where the push term exactly cancels the required rate and only
        # the harvest flux is left over.
        x1h = 0.5 * CONSTANTS.x1_star
        x2lo = CONSTANTS.beta_min - 3.0
        mu_t = transformed_growth(DEMO, x1h)
        want = -(DEMO.c * math.exp(-x1h) + 1.0) * (DEMO.K * mu_t - DEMO.m) * (
            DEMO.G * math.exp(x2lo) * (math.exp(-x1h) - 1.0)
        )
        margins = {r.region: r.worst_margin for r in self.REPORTS}
        assert margins["lemma25_h"] == pytest.approx(want, rel=1e-12)

    def test_envelope_contracts_for_demo(self):
        wrep = self.REPORTS[2]
        assert wrep.k_w == pytest.approx(-0.7856727760003324, rel=1e-10)
        assert wrep.strict is False

    def test_json_round_trip_fields(self):
        doc = self.REPORTS[0].to_json_dict()
        assert doc["region"] == "omega_P2"
        assert doc["grid"] == [80, 80]
        assert doc["passed"] is True
        assert len(doc["witness"]["state"]) == 2
        assert len(doc["witness"]["d"]) == 2
        assert doc["window"][0][0] == CONSTANTS.x1_star


class TestSteeringVerifier:
    def test_four_cases_pass_with_frozen_margins(self):
        params = RclfFeedbackParams(x1_star=CONSTANTS.x1_star, M=CONSTANTS.M)
        reports = verify_rclf_derivative(DEMO, CONSTANTS, params, grid=(60, 60))
        by = {r.region: r for r in reports}
        assert set(by) == {"case1", "case2", "case3", "case4"}
        for rep in reports:
            assert rep.passed and rep.strict
        assert by["case1"].worst_margin == pytest.approx(-973054.2578491551, rel=1e-10)
        assert by["case2"].worst_margin == pytest.approx(-1110.7028981090814, rel=1e-10)
        assert by["case3"].worst_margin == pytest.approx(-88.39197940795961, rel=1e-10)
        assert by["case4"].worst_margin == pytest.approx(-510988.8798533656, rel=1e-10)


def planar_system() -> ControlAffineSystem:
    """Undisturbed planar plant with an input floor at -1."""

    def f(d, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([-X[:, 0] + X[:, 1], np.zeros(len(X))])

    def g(d, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.broadcast_to(np.array([0.0, 1.0]), X.shape).copy()

    return ControlAffineSystem(f=f, g=g, box=None, a_limit=1.0, gamma=lambda X: 1.0)


def planar_law(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return -np.minimum(1.0, X[:, 1])


PLANAR_V = QuadraticForm(P=np.eye(2))
PLANAR_H = AffineFunction(w=np.array([0.0, 1.0]), offset=-0.5)


def planar_delta(hv):
    return 0.5 + 0.0 * np.asarray(hv, dtype=float)


class TestGenericChecker:
    REPORTS = verify_relaxed_clf_conditions(
        planar_system(), PLANAR_V, PLANAR_H, PLANAR_V, planar_delta,
        K=1.0, eps=0.5, candidate=planar_law, grid=(100, 100),
    )

    def test_regions_and_outcomes(self):
        by = {r.region: r for r in self.REPORTS}
        assert set(by) == {"R1", "R2", "R3", "ex41"}
        assert all(r.passed for r in self.REPORTS)
        assert by["R2"].strict and not by["R1"].strict

    def test_boundary_margin_is_grid_snap(self):
        # On {h >= 0} the decrement margin is 1/2 - min(1, x2), worst at
        # the first grid ordinate past 1/2.
        by = {r.region: r.worst_margin for r in self.REPORTS}
        grid = np.linspace(-6.0, 6.0, 100)
        first = grid[np.searchsorted(grid, 0.5)]
        assert by["R1"] == pytest.approx(-(first - 0.5), rel=1e-12)
        assert by["R3"] == by["R1"]

    def test_decrease_margin_from_nearest_offgrid_point(self):
        # V-dot = -x1^2 + x1 x2 - x2 min(1, x2) peaks just outside the
        # origin ball at the half-spacing diagonal point.
        by = {r.region: r.worst_margin for r in self.REPORTS}
        half = 0.5 * (12.0 / 99.0)
        assert by["R2"] == pytest.approx(-(half**2), rel=1e-12)

    def test_corridor_margin_touches_zero(self):
        by = {r.region: r.worst_margin for r in self.REPORTS}
        assert by["ex41"] == 0.0

    def test_without_floor_no_corridor_report(self):
        sys_plain = dataclasses.replace(planar_system(), a_limit=None, gamma=None)
        reports = verify_relaxed_clf_conditions(
            sys_plain, PLANAR_V, PLANAR_H, PLANAR_V, planar_delta,
            K=1.0, eps=0.5, candidate=planar_law, grid=(50, 50),
        )
        assert [r.region for r in reports] == ["R1", "R2", "R3"]

    def test_nonpositive_decrement_rejected(self):
        with pytest.raises(ValueError, match="delta_fn"):
            verify_relaxed_clf_conditions(
                planar_system(), PLANAR_V, PLANAR_H, PLANAR_V,
                lambda hv: 0.0 * np.asarray(hv), K=1.0, eps=0.5,
                candidate=planar_law, grid=(20, 20),
            )

    def test_eps_validated(self):
        with pytest.raises(ValueError, match="eps"):
            verify_relaxed_clf_conditions(
                planar_system(), PLANAR_V, PLANAR_H, PLANAR_V, planar_delta,
                K=1.0, eps=0.0, candidate=planar_law, grid=(20, 20),
            )


class TestAffinePieces:
    def test_affine_function(self):
        fn = AffineFunction(w=np.array([2.0, -1.0]), offset=3.0)
        assert fn(np.array([1.0, 1.0])) == 4.0
        X = np.array([[1.0, 0.0], [0.0, 2.0]])
        np.testing.assert_allclose(fn(X), [5.0, 1.0])
        np.testing.assert_allclose(fn.grad(X), [[2.0, -1.0], [2.0, -1.0]])

    def test_system_corners(self):
        from rclf.dynamics import CompactBox

        sys_boxed = ControlAffineSystem(
            f=lambda d, X: X, g=lambda d, X: X, box=CompactBox([0.0], [0.3])
        )
        np.testing.assert_allclose(sys_boxed.corners(), [[0.0], [0.3]])
        assert planar_system().corners().shape == (1, 0)


class TestReachBound:
    EPS_HAT, DELTA0 = relaxed_band_constants(DEMO, CONSTANTS.x1_star, PSI, ELL)

    def test_entry_time_formula(self):
        T, _ = reach_time_bound(5.0, self.EPS_HAT, self.DELTA0, 0.0, 1.0)
        assert T == (5.0 - self.EPS_HAT) / self.DELTA0
        assert T == pytest.approx(4.2867878064410325, rel=1e-15)

    def test_already_inside_band(self):
        T, _ = reach_time_bound(0.5 * self.EPS_HAT, self.EPS_HAT, self.DELTA0, 0.0, 1.0)
        assert T == 0.0

    def test_isotropic_radius_integral(self):
        # W = |x|^2/2 + 1 level sets have radius sqrt(2(s-1)); from B = 1
        # the exact integral over [1, 2] is 2 sqrt(2) / 3.
        _, G = reach_time_bound(0.1, self.EPS_HAT, self.DELTA0, 0.0, 1.0)
        assert G == pytest.approx(2.0 * math.sqrt(2.0) / 3.0, rel=5e-3)

    def test_growth_envelope_radius_frozen(self):
        _, G = reach_time_bound(
            5.0, self.EPS_HAT, self.DELTA0, 0.0, 1.0,
            w_envelope=relaxed_growth_envelope(DEMO),
        )
        assert G == pytest.approx(1.527122774402364, rel=1e-12)

    def test_excursion_grows_with_rate_and_start(self):
        args = (self.EPS_HAT, self.DELTA0)
        _, g_flat = reach_time_bound(5.0, *args, 0.0, 1.0)
        _, g_grow = reach_time_bound(5.0, *args, 0.5, 1.0)
        _, g_high = reach_time_bound(5.0, *args, 0.0, 4.0)
        assert g_flat < g_grow
        assert g_flat < g_high

    def test_validation(self):
        with pytest.raises(ValueError, match="delta0"):
            reach_time_bound(1.0, self.EPS_HAT, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="eps_hat"):
            reach_time_bound(1.0, 0.0, self.DELTA0, 0.0, 1.0)
        with pytest.raises(ValueError, match="K_W"):
            reach_time_bound(1.0, self.EPS_HAT, self.DELTA0, -1.0, 1.0)
