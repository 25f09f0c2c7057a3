"""Acceptance suite: the ten shipped guarantees, one verdict line each.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines go by;
every criterion also asserts, so a silent run is equally binding. Takes a
few minutes wall clock, dominated by the amplitude sweep (criterion 5)
and the three-stage saturation design (criterion 8).
"""

import itertools
import json
import math
import time

import numpy as np

from rclf.certify import synthesize_rclf_constants, verify_relaxed_conditions
from rclf.certify import verify_relaxed_clf_conditions
from rclf.chemostat import (
    GrowthModel,
    check_S2,
    from_transformed,
    growth_rate,
    solve_equilibrium,
    to_transformed,
    transformed_rhs,
)
from rclf.cli import main
from rclf.dynamics import integrate_rk4
from rclf.feedback import LSpec, PsiSpec, patch_feedbacks
from rclf.harness import (
    UrgasConfig,
    relaxed_loop,
    run_urgas_suite,
    simulate_closed_loop,
    simulate_physical,
    uncertainty_sweep,
    validate_absorbing_entry,
    washout_counterexample,
)

from test_certify import (
    PLANAR_H,
    PLANAR_V,
    planar_delta,
    planar_law,
    planar_system,
)

HALDANE = GrowthModel("haldane", 75.0, 100.0, 0.025)
D_STAR = 5.409168374721223
DEMO = solve_equilibrium(512.0, 1.0, 0.0, 0.0, D_STAR, HALDANE).with_uncertainty(0.05)
WASHOUT_PLANT = solve_equilibrium(600.0, 1.0, 0.0, -0.01 * 1.0 * D_STAR, D_STAR, HALDANE)
CONSTANTS = synthesize_rclf_constants(DEMO, check_S2(DEMO))


def _verdict(tag: str, ok: bool, detail: str) -> None:
    line = f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def test_criterion_01_equilibrium_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for d1, d2 in itertools.product((0.0, DEMO.a), repeat=2):
        dx1, dx2 = transformed_rhs(DEMO, 0.0, 0.0, 0.0, d1, d2)
        worst = max(worst, abs(float(dx1)), abs(float(dx2)))
    elapsed = time.perf_counter() - t0
    _verdict(
        "criterion 01 equilibrium identity",
        worst < 1e-12 and elapsed < 1.0,
        f"max residual {worst:.3e} over 4 corners, {elapsed:.3f} s",
    )


def test_criterion_02_certificate_suite():
    t0 = time.perf_counter()
    constants = synthesize_rclf_constants(DEMO, check_S2(DEMO))
    reports = verify_relaxed_conditions(DEMO, constants, PsiSpec(), LSpec())
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in reports) and len(reports) == 3
    strict_ok = all(r.worst_margin < -1e-6 for r in reports if r.strict)
    worst = max(r.worst_margin for r in reports if r.strict)
    _verdict(
        "criterion 02 certificate suite",
        ok and strict_ok and elapsed < 60.0,
        f"3 sub-checks on 400x400 grids, worst strict margin {worst:.3e}, "
        f"{elapsed:.1f} s",
    )


def test_criterion_03_urgas_monte_carlo():
    cfg = UrgasConfig(
        trials=200,
        init_radius=3.0,
        horizon=20.0,
        step=1e-3,
        switch_dt=0.1,
        master_seed=42,
        eps_levels=(0.01, 0.25, 1.0, 2.0),
    )
    t0 = time.perf_counter()
    rep = run_urgas_suite(relaxed_loop(DEMO), cfg)
    elapsed = time.perf_counter() - t0
    taus = [rep.attractivity_tau_per_eps[e] for e in cfg.eps_levels]
    ok = (
        rep.converged_fraction == 1.0
        and not rep.failed
        and math.isfinite(rep.lagrange_sup)
        and all(a >= b for a, b in zip(taus, taus[1:]))
        and elapsed < 120.0
    )
    # regression pin on the seeded batch
    ok = ok and abs(rep.lagrange_sup - 2.992883479014292) < 1e-9
    _verdict(
        "criterion 03 urgas monte carlo",
        ok,
        f"200 trials all to |x| <= 1e-2, lagrange sup {rep.lagrange_sup:.6g}, "
        f"tau {taus[0]:.3f} -> {taus[-1]:.3f}, {elapsed:.1f} s",
    )


def test_criterion_04_absorbing_entry_bound():
    rep = validate_absorbing_entry(
        relaxed_loop(DEMO), CONSTANTS, trials=100, seed=42, step=1e-3, h_span=5.0
    )
    ok = (
        rep.trials == 100
        and rep.entry_violations == 0
        and rep.reexit_violations == 0
        and rep.entered_fraction == 1.0
        and rep.max_entry_time <= rep.max_entry_bound
    )
    _verdict(
        "criterion 04 absorbing entry bound",
        ok,
        f"100 trials, worst entry {rep.max_entry_time:.4f} <= bound "
        f"{rep.max_entry_bound:.4f}, zero violations",
    )


def test_criterion_05_uncertainty_independence():
    cfg = UrgasConfig(
        trials=200,
        init_radius=3.0,
        horizon=20.0,
        step=1e-3,
        switch_dt=0.1,
        master_seed=42,
        eps_levels=(0.01, 2.0),
        delta_bisect_iters=1,
        delta_horizon=1.0,
    )
    t0 = time.perf_counter()
    rep = uncertainty_sweep(
        DEMO, (0.0, 0.05, 0.5, 5.0), cfg, step_overrides={5.0: 0.1 / 1024}
    )
    elapsed = time.perf_counter() - t0
    ok = rep.law_identical and rep.all_converged
    for r in rep.reports.values():
        taus = [r.attractivity_tau_per_eps[e] for e in cfg.eps_levels]
        ok = ok and not r.failed and math.isfinite(r.lagrange_sup)
        ok = ok and all(a >= b for a, b in zip(taus, taus[1:]))
    _verdict(
        "criterion 05 uncertainty independence",
        ok,
        "a in {0, 0.05, 0.5, 5} all converged, law bit-identical at 100 "
        f"probes, {elapsed:.0f} s",
    )


def test_criterion_06_washout_counterexample():
    res = washout_counterexample(WASHOUT_PLANT)
    ok = res.S_1 < res.S_2 and res.washout and res.flag_time is not None
    ok = ok and res.flag_time <= 0.01
    ok = ok and res.trajectory.states[-1, 0] < 1e-6 * WASHOUT_PLANT.S_i

    # From the midpoint of the rest levels the matching law recovers the
    # upper one.
    Xs = WASHOUT_PLANT.X_s

    def matching(S, X):
        return growth_rate(WASHOUT_PLANT.growth, S) * X / Xs

    traj, _ = simulate_physical(
        WASHOUT_PLANT, matching, 0.5 * (res.S_1 + res.S_2), Xs, 5.0, 1e-3
    )
    err_mid = max(
        abs(traj.states[-1, 0] - res.S_2) / res.S_2,
        abs(traj.states[-1, 1] - Xs) / Xs,
    )
    ok = ok and err_mid <= 0.01

    # The band law repairs the same near-washout start back to the
    # operating point.
    x1, x2 = to_transformed(WASHOUT_PLANT, Xs, res.S_1 / 2.0)
    rec = simulate_closed_loop(relaxed_loop(WASHOUT_PLANT), [x1, x2], 20.0, 1e-3)
    Xf, Sf = from_transformed(WASHOUT_PLANT, rec.states[-1, 0], rec.states[-1, 1])
    err_rep = max(
        abs(Sf - WASHOUT_PLANT.S_s) / WASHOUT_PLANT.S_s, abs(Xf - Xs) / Xs
    )
    ok = ok and not rec.diverged and err_rep <= 0.01
    _verdict(
        "criterion 06 washout counterexample",
        ok,
        f"roots {res.S_1:.4g} < {res.S_2:.4g}, flag at t = {res.flag_time:.4g}; "
        f"midpoint leg err {err_mid:.2e}, repair leg err {err_rep:.2e}",
    )


def test_criterion_07_constrained_planar_example():
    def rhs(t, x, dv):
        return np.array([-x[0] + x[1], -min(1.0, x[1])])

    worst = 0.0
    u_min = np.inf
    for x1 in np.linspace(-5.0, 5.0, 5):
        for x2 in np.linspace(-5.0, 5.0, 5):
            traj = integrate_rk4(rhs, [x1, x2], None, 50.0, 1e-2)
            assert not traj.diverged
            worst = max(worst, float(np.linalg.norm(traj.states[-1])))
            u_min = min(u_min, float(np.min(-np.minimum(1.0, traj.states[:, 1]))))
    reports = verify_relaxed_clf_conditions(
        planar_system(), PLANAR_V, PLANAR_H, PLANAR_V, planar_delta,
        K=1.0, eps=0.5, candidate=planar_law,
    )
    checker_ok = all(r.passed for r in reports) and len(reports) == 4
    _verdict(
        "criterion 07 constrained planar example",
        worst <= 1e-3 and u_min >= -1.0 and checker_ok,
        f"25 starts to |x| <= {worst:.1e} by T = 50, min u = {u_min:g}, "
        "checker 4/4",
    )


def test_criterion_08_saturated_backstepping(tmp_path):
    details = []
    ok = True
    for name in ("backstep2.toml", "backstep3.toml"):
        out = tmp_path / name.replace(".toml", "")
        code = main(
            ["backstep", "--config", f"configs/{name}", "--out", str(out),
             "--quiet"]
        )
        doc = json.loads((out / "backstep.json").read_text())
        margins = [row["p"] / row["p_bound"] for row in doc["stages"]]
        in_interval = all(
            row["a_lo"] < row["a"] < row["a_hi"] for row in doc["stages"]
        )
        ok = (
            ok
            and code == 0
            and doc["converged"]
            and doc["input_ok"]
            and doc["max_input"] <= doc["input_bound"]
            and min(margins) >= 1.1 - 1e-12
            and in_interval
        )
        details.append(
            f"n={doc['n']} final {doc['max_final_norm']:.1e} "
            f"margin {min(margins):.2f}"
        )
    _verdict(
        "criterion 08 saturated backstepping",
        ok,
        "; ".join(details) + "; 50 trials each, |u| within bound",
    )


def test_criterion_09_numerics():
    def rhs(t, x, dv):
        return -x

    errs = []
    for h in (0.1, 0.05):
        traj = integrate_rk4(rhs, [1.0], None, 1.0, h)
        errs.append(abs(float(traj.states[-1, 0]) - math.exp(-1.0)))
    ratio = errs[0] / errs[1]
    order_ok = 13.0 <= ratio <= 19.0

    rng = np.random.default_rng(20240817)
    S = DEMO.S_i * rng.uniform(1e-3, 1.0 - 1e-3, size=10_000)
    X = DEMO.X_s * np.exp(rng.uniform(-6.0, 6.0, size=10_000))
    x1, x2 = to_transformed(DEMO, X, S)
    Xb, Sb = from_transformed(DEMO, x1, x2)
    rt = max(
        float(np.max(np.abs(Sb - S) / S)), float(np.max(np.abs(Xb - X) / X))
    )
    round_ok = rt < 1e-10

    z1 = rng.uniform(-4.0, 4.0, size=1_000)
    z2 = rng.uniform(-4.0, 4.0, size=1_000)
    a = DEMO.a
    second = 0.0
    for channel in (0, 1):
        outs = []
        for level in (0.0, a / 2.0, a):
            d = [a / 3.0, a / 3.0]
            d[channel] = level
            outs.append(transformed_rhs(DEMO, z1, z2, 0.3, d[0], d[1]))
        for comp in (0, 1):
            diff = outs[0][comp] - 2.0 * outs[1][comp] + outs[2][comp]
            second = max(second, float(np.max(np.abs(diff))))
    affine_ok = second < 1e-12

    _verdict(
        "criterion 09 numerics",
        order_ok and round_ok and affine_ok,
        f"RK4 ratio {ratio:.2f}, round-trip {rt:.1e} on 1e4 points, "
        f"d-affinity second difference {second:.1e} on 1e3 probes",
    )


def test_criterion_10_patching_combiner():
    def k1(x):
        return 1.0 + x[0]

    def k2(x):
        return 10.0 + x[1]

    def k_tilde(x):
        return -5.0 + 0.1 * x[0]

    def h(x):
        return x[1]

    eps, r = 1.0, 0.1

    def patched(x):
        return patch_feedbacks(k1, k2, k_tilde, h, eps, r, None, np.asarray(x))

    rng = np.random.default_rng(7)
    exclusive_ok = True
    for _ in range(200):
        # origin ball -> local law, bitwise
        v = rng.normal(size=2)
        x = 0.09 * v / np.linalg.norm(v)
        exclusive_ok &= patched(x) == k_tilde(x)
        # far side of the boundary layer -> outer law, bitwise
        x = np.array([rng.uniform(0.5, 3.0), rng.uniform(0.81, 3.0)])
        exclusive_ok &= patched(x) == k1(x)
        # outside the doubled ball, below the layer -> band law, bitwise
        x = np.array([rng.uniform(0.5, 3.0), rng.uniform(-3.0, 0.19)])
        exclusive_ok &= patched(x) == k2(x)

    jump = 0.0
    for b in (0.2, 0.4, 0.6, 0.8):
        lo = patched([2.0, b - 1e-9])
        hi = patched([2.0, b + 1e-9])
        jump = max(jump, abs(hi - lo))
    u = np.array([0.6, 0.8])
    for radius in (r, 2.0 * r):
        lo = patched((radius - 1e-9) * u)
        hi = patched((radius + 1e-9) * u)
        jump = max(jump, abs(hi - lo))
    _verdict(
        "criterion 10 patching combiner",
        exclusive_ok and jump < 1e-8,
        f"bitwise in 3 exclusive regions (600 states), max seam jump "
        f"{jump:.1e}",
    )
