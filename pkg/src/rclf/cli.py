"""Config-driven command line: simulate, verify, urgas, sweep,
counterexample, backstep.

Configs are plain TOML (no code execution); every command is a pure
function of (config, seed) and writes its artifacts under the configured
output directory. JSON floats are fixed at 17 significant digits so
reruns are byte-identical.

Exit codes (stable): 0 success, 2 config error, 3 runtime failure
(divergence), 4 certificate or suite failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._fmt import csv_line, dumps_canonical
from ._svg import write_svg
from .chemostat import (
    ChemostatScenario,
    ConfigError,
    HypothesisError,
    _as_float,
    _require,
    check_S2,
    from_transformed,
    scenario_from_dict,
)
from .certify import (
    synthesize_rclf_constants,
    verify_rclf_derivative,
    verify_relaxed_conditions,
)
from .dynamics import CompactBox, write_trajectory_csv
from .feedback import (
    BacksteppingStageTable,
    GainSelectionError,
    LSpec,
    PsiSpec,
    RclfFeedbackParams,
    TriangularSystemSpec,
    backstepping_stage_bounds,
    compute_backstepping_gains,
)
from .harness import (
    UrgasConfig,
    classical_loop,
    rclf_loop,
    relaxed_loop,
    run_urgas_suite,
    simulate_backstepping_batch,
    simulate_closed_loop,
    uncertainty_sweep,
    washout_counterexample,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CERT = 4


# ---------------------------------------------------------------------------
# Config plumbing.


def _as_int(value, section: str, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(
            f"key '{key}' in section [{section}] must be an integer, got {value!r}"
        )
    return int(value)


def _as_float_list(value, section: str, key: str, length: Optional[int] = None):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(
            f"key '{key}' in section [{section}] must be a list, got {value!r}"
        )
    out = [_as_float(v, section, key) for v in value]
    if length is not None and len(out) != length:
        raise ConfigError(
            f"key '{key}' in section [{section}] must have {length} entries, "
            f"got {len(out)}"
        )
    return out


@dataclass
class ScenarioConfig:
    """Parsed run configuration: scenario sections plus artifact settings.

    The chemostat scenario is built lazily so commands that do not need it
    (backstep) can run from configs without [growth]/[chemostat].
    """

    raw: dict
    path: str
    master_seed: int
    out_dir: str
    _scenario: Optional[ChemostatScenario] = None

    def scenario(self) -> ChemostatScenario:
        if self._scenario is None:
            self._scenario = scenario_from_dict(self.raw)
        return self._scenario

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"section [{name}] must be a table")
        return sec


def load_config(path) -> ScenarioConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    seed = doc.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("top-level key 'master_seed' must be an integer")
    out_dir = doc.get("output_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("top-level key 'output_dir' must be a string")
    return ScenarioConfig(raw=doc, path=str(path), master_seed=seed, out_dir=out_dir)


def _build_loop(cfg: ScenarioConfig):
    fb = cfg.section("feedback")
    family = str(fb.get("family", "relaxed")).lower()
    scenario = cfg.scenario()
    if family == "relaxed":
        psi = PsiSpec(slope=_as_float(fb.get("psi_slope", 1.0), "feedback", "psi_slope"))
        l = LSpec(l0=_as_float(fb.get("l0", 1.0), "feedback", "l0"))
        return relaxed_loop(scenario, psi, l)
    if family == "rclf":
        s2 = check_S2(scenario)
        k = synthesize_rclf_constants(scenario, s2)
        params = RclfFeedbackParams(
            x1_star=k.x1_star,
            M=k.M,
            W_weight=_as_float(fb.get("W_weight", 1.0), "feedback", "W_weight"),
        )
        return rclf_loop(scenario, params)
    if family in ("classical", "mailleret"):
        q_extra = _as_float(fb.get("q_extra", 0.0), "feedback", "q_extra")
        return classical_loop(scenario, q_extra=q_extra)
    raise ConfigError(
        f"key 'family' in section [feedback] does not name a chemostat law: "
        f"{family!r}"
    )


def _integrator(cfg: ScenarioConfig):
    integ = cfg.section("integrator")
    step = _as_float(_require(integ, "integrator", "step"), "integrator", "step")
    horizon = _as_float(
        _require(integ, "integrator", "horizon"), "integrator", "horizon"
    )
    switch_dt = _as_float(integ.get("switch_dt", 0.1), "integrator", "switch_dt")
    return step, horizon, switch_dt


def _urgas_config(cfg: ScenarioConfig, trials_override: Optional[int]) -> UrgasConfig:
    step, horizon, switch_dt = _integrator(cfg)
    hn = cfg.section("harness")
    trials = trials_override
    if trials is None:
        trials = _as_int(_require(hn, "harness", "trials"), "harness", "trials")
    kwargs = {}
    if "delta_bisect_iters" in hn:
        kwargs["delta_bisect_iters"] = _as_int(
            hn["delta_bisect_iters"], "harness", "delta_bisect_iters"
        )
    if "delta_horizon" in hn:
        kwargs["delta_horizon"] = _as_float(
            hn["delta_horizon"], "harness", "delta_horizon"
        )
    if "eps_levels" in hn:
        kwargs["eps_levels"] = tuple(
            _as_float_list(hn["eps_levels"], "harness", "eps_levels")
        )
    try:
        return UrgasConfig(
            trials=trials,
            init_radius=_as_float(
                hn.get("init_radius", 3.0), "harness", "init_radius"
            ),
            horizon=horizon,
            step=step,
            switch_dt=switch_dt,
            master_seed=cfg.master_seed,
            **kwargs,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid harness/integrator settings: {exc}") from exc


def _out_path(cfg: ScenarioConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(obj))


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


# ---------------------------------------------------------------------------
# Commands.


def cmd_simulate(cfg: ScenarioConfig, quiet: bool = False) -> int:
    """One closed-loop run: transformed and physical CSV plus an SVG."""
    loop = _build_loop(cfg)
    sc = loop.scenario
    step, horizon, switch_dt = _integrator(cfg)
    integ = cfg.section("integrator")
    x0 = _as_float_list(integ.get("x0", [0.0, 0.0]), "integrator", "x0", length=2)

    traj = simulate_closed_loop(
        loop, x0, horizon, step, switch_dt=switch_dt, seed=cfg.master_seed
    )
    if traj.diverged:
        print("simulation diverged before the horizon", file=sys.stderr)
        return EXIT_RUNTIME

    path_t = _out_path(cfg, "simulate_transformed.csv")
    write_trajectory_csv(traj, path_t)

    X, S = from_transformed(sc, traj.states[:, 0], traj.states[:, 1])
    D = sc.D_s + traj.inputs
    path_p = _out_path(cfg, "simulate_physical.csv")
    with open(path_p, "w", encoding="utf-8") as fh:
        fh.write("t,S,X,D\n")
        for row in zip(traj.times, S, X, D):
            fh.write(csv_line(row) + "\n")

    path_svg = _out_path(cfg, "simulate.svg")
    write_svg(
        path_svg,
        [("S", traj.times, S), ("X", traj.times, X), ("D", traj.times, D)],
    )
    _say(quiet, f"wrote {path_t}, {path_p}, {path_svg}")
    _say(
        quiet,
        f"final S = {S[-1]:.6g} (S_s = {sc.S_s:.6g}), "
        f"X = {X[-1]:.6g} (X_s = {sc.X_s:.6g})",
    )
    return EXIT_OK


def cmd_verify(cfg: ScenarioConfig, quiet: bool = False) -> int:
    """Synthesize constants and grid-check the matching certificate."""
    fb = cfg.section("feedback")
    family = str(fb.get("family", "relaxed")).lower()
    try:
        scenario = cfg.scenario()
        s2 = check_S2(scenario)
        constants = synthesize_rclf_constants(scenario, s2)
    except ConfigError:
        raise
    except (HypothesisError, ValueError) as exc:
        print(f"standing-hypothesis check failed: {exc}", file=sys.stderr)
        return EXIT_CERT

    if family == "rclf":
        params = RclfFeedbackParams(
            x1_star=constants.x1_star,
            M=constants.M,
            W_weight=_as_float(fb.get("W_weight", 1.0), "feedback", "W_weight"),
        )
        reports = verify_rclf_derivative(scenario, constants, params)
    elif family == "relaxed":
        psi = PsiSpec(slope=_as_float(fb.get("psi_slope", 1.0), "feedback", "psi_slope"))
        l = LSpec(l0=_as_float(fb.get("l0", 1.0), "feedback", "l0"))
        reports = verify_relaxed_conditions(scenario, constants, psi, l)
    else:
        raise ConfigError(
            f"key 'family' in section [feedback] must be 'relaxed' or 'rclf' "
            f"for verify, got {family!r}"
        )

    all_passed = all(r.passed for r in reports)
    doc = {
        "family": family,
        "s2": {
            "S_plus": s2.S_plus,
            "p": s2.p,
            "x1_plus": s2.x1_plus,
            "x1_star": s2.x1_star,
        },
        "constants": dataclasses.asdict(constants),
        "reports": [r.to_json_dict() for r in reports],
        "all_passed": all_passed,
    }
    path = _out_path(cfg, "verify.json")
    _write_json(path, doc)
    for r in reports:
        _say(
            quiet,
            f"{r.region}: worst margin {r.worst_margin:.3e} "
            f"{'PASS' if r.passed else 'FAIL'}",
        )
    _say(quiet, f"wrote {path}")
    return EXIT_OK if all_passed else EXIT_CERT


def cmd_urgas(cfg: ScenarioConfig, quiet: bool = False, trials: Optional[int] = None) -> int:
    """Stability statistics for the configured closed loop."""
    loop = _build_loop(cfg)
    ucfg = _urgas_config(cfg, trials)
    report = run_urgas_suite(loop, ucfg)
    path = _out_path(cfg, "urgas.json")
    _write_json(path, report.to_json_dict())

    hn = cfg.section("harness")
    if hn.get("dump_first_trial", False):
        from .harness import _sample_batch_inputs

        x0, dv = _sample_batch_inputs(
            loop, 1, ucfg.init_radius, ucfg.switch_dt, ucfg.horizon,
            ucfg.master_seed,
        )
        traj = simulate_closed_loop(
            loop, x0[0], ucfg.horizon, ucfg.step, switch_dt=ucfg.switch_dt,
            d_values=dv[0],
        )
        write_trajectory_csv(traj, _out_path(cfg, "urgas_trial0.csv"))

    _say(
        quiet,
        f"converged {report.converged_fraction:.3f}, "
        f"lagrange sup {report.lagrange_sup:.6g}, wrote {path}",
    )
    if report.failed:
        print(f"{report.diverged_trials} trials diverged", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(cfg: ScenarioConfig, quiet: bool = False, trials: Optional[int] = None) -> int:
    """Stability suite across uncertainty amplitudes, one fixed law."""
    scenario = cfg.scenario()
    fb = cfg.section("feedback")
    psi = PsiSpec(slope=_as_float(fb.get("psi_slope", 1.0), "feedback", "psi_slope"))
    l = LSpec(l0=_as_float(fb.get("l0", 1.0), "feedback", "l0"))
    ucfg = _urgas_config(cfg, trials)
    hn = cfg.section("harness")
    a_values = _as_float_list(
        hn.get("a_values", [0.0, 0.05, 0.5, 5.0]), "harness", "a_values"
    )
    fine_above = _as_float(
        hn.get("sweep_fine_threshold", 0.5), "harness", "sweep_fine_threshold"
    )
    fine_step = _as_float(
        hn.get("sweep_fine_step", 0.1 / 1024), "harness", "sweep_fine_step"
    )
    overrides = {a: fine_step for a in a_values if a > fine_above}

    report = uncertainty_sweep(
        scenario, a_values, ucfg, psi=psi, l=l, step_overrides=overrides
    )
    path = _out_path(cfg, "sweep.json")
    _write_json(path, report.to_json_dict())
    for a in report.a_values:
        r = report.reports[a]
        _say(
            quiet,
            f"a = {a:g}: converged {r.converged_fraction:.3f}"
            + (" (diverged)" if r.failed else ""),
        )
    _say(quiet, f"wrote {path}")
    if any(r.failed for r in report.reports.values()):
        return EXIT_RUNTIME
    if not (report.all_converged and report.law_identical):
        return EXIT_CERT
    return EXIT_OK


def cmd_counterexample(cfg: ScenarioConfig, quiet: bool = False) -> int:
    """Washout of the growth-matching law on the negative-balance plant."""
    scenario = cfg.scenario()
    integ = cfg.section("integrator")
    horizon = _as_float(integ.get("horizon", 0.01), "integrator", "horizon")
    step = _as_float(integ.get("step", 1e-6), "integrator", "step")
    try:
        result = washout_counterexample(scenario, horizon=horizon, step=step)
    except ValueError as exc:
        print(f"counterexample regime check failed: {exc}", file=sys.stderr)
        return EXIT_CERT

    path = _out_path(cfg, "counterexample.json")
    _write_json(path, result.to_json_dict())
    traj = result.trajectory
    path_csv = _out_path(cfg, "washout.csv")
    with open(path_csv, "w", encoding="utf-8") as fh:
        fh.write("t,S,X,D\n")
        for row in zip(
            traj.times, traj.states[:, 0], traj.states[:, 1], traj.inputs
        ):
            fh.write(csv_line(row) + "\n")
    path_svg = _out_path(cfg, "washout.svg")
    write_svg(
        path_svg,
        [
            ("S", traj.times, traj.states[:, 0]),
            ("X", traj.times, traj.states[:, 1]),
            ("D", traj.times, traj.inputs),
        ],
    )
    _say(
        quiet,
        f"rest levels S_1 = {result.S_1:.6g}, S_2 = {result.S_2:.6g}; "
        f"washout = {result.washout}",
    )
    _say(quiet, f"wrote {path}, {path_csv}, {path_svg}")
    return EXIT_OK if result.washout else EXIT_CERT


def _build_triangular(cfg: ScenarioConfig):
    """Built-in parametric triangular family for backstep configs.

    f_i(d, x) = (alpha_i + beta_i d_1) q tanh(L x_i / q) and
    g_i(d, x) = g0_i + g1_i d_2 over the box [0, d_max]^2; the tanh keeps
    |f_i| <= min(q, L|x|) whenever alpha_i + beta_i d_max <= 1, and the
    affine g stays in [r, R] by the declared bounds.
    """
    fb = cfg.section("feedback")
    sec = "feedback"
    n = _as_int(_require(fb, sec, "n"), sec, "n")
    if n < 1:
        raise ConfigError("key 'n' in section [feedback] must be >= 1")
    q = _as_float(_require(fb, sec, "q"), sec, "q")
    L = _as_float(_require(fb, sec, "L"), sec, "L")
    r = _as_float(_require(fb, sec, "r"), sec, "r")
    R = _as_float(_require(fb, sec, "R"), sec, "R")
    d_max = _as_float(fb.get("d_max", 0.0), sec, "d_max")
    alpha = _as_float_list(_require(fb, sec, "alpha"), sec, "alpha", length=n)
    beta = _as_float_list(_require(fb, sec, "beta"), sec, "beta", length=n)
    g0 = _as_float_list(_require(fb, sec, "g0"), sec, "g0", length=n)
    g1 = _as_float_list(_require(fb, sec, "g1"), sec, "g1", length=n)
    for i in range(n):
        if alpha[i] < 0 or beta[i] < 0 or alpha[i] + beta[i] * d_max > 1 + 1e-12:
            raise ConfigError(
                f"key 'alpha'/'beta' in section [feedback]: need "
                f"alpha_i + beta_i d_max <= 1 at stage {i + 1}"
            )
        if g1[i] < 0 or g0[i] < r - 1e-12 or g0[i] + g1[i] * d_max > R + 1e-12:
            raise ConfigError(
                f"key 'g0'/'g1' in section [feedback]: need "
                f"r <= g0_i and g0_i + g1_i d_max <= R at stage {i + 1}"
            )

    def make_f(i):
        ai, bi = alpha[i], beta[i]

        def f(d, x):
            x = np.asarray(x, dtype=float)
            return (ai + bi * np.asarray(d)[..., 0]) * q * np.tanh(
                L * x[..., i] / q
            )

        return f

    def make_g(i):
        c0, c1 = g0[i], g1[i]

        def g(d, x):
            x = np.asarray(x, dtype=float)
            base = c0 + c1 * np.asarray(d)[..., 1]
            return base * np.ones(x.shape[:-1]) if x.ndim > 1 else float(base)

        return g

    box = CompactBox([0.0, 0.0], [d_max, d_max])
    spec = TriangularSystemSpec(
        n=n,
        fs=tuple(make_f(i) for i in range(n)),
        gs=tuple(make_g(i) for i in range(n)),
        q=q,
        L=L,
        r=r,
        R=R,
        box=box,
    )
    table = BacksteppingStageTable(
        eta=tuple(_as_float_list(_require(fb, sec, "eta"), sec, "eta", length=n)),
        c_tilde=tuple(
            _as_float_list(_require(fb, sec, "c_tilde"), sec, "c_tilde", length=n)
        ),
        mu1=_as_float(_require(fb, sec, "mu1"), sec, "mu1"),
        C1=_as_float(_require(fb, sec, "C1"), sec, "C1"),
        b1=_as_float(fb.get("b1", 0.0), sec, "b1"),
    )
    return spec, table, d_max


def cmd_backstep(cfg: ScenarioConfig, quiet: bool = False, trials: Optional[int] = None) -> int:
    """Design nested-saturation gains for a triangular config and test them."""
    spec, table, d_max = _build_triangular(cfg)
    step, horizon, _ = _integrator(cfg)
    hn = cfg.section("harness")
    if trials is None:
        trials = _as_int(hn.get("trials", 50), "harness", "trials")
    init_radius = _as_float(hn.get("init_radius", 0.3), "harness", "init_radius")

    try:
        rows = backstepping_stage_bounds(spec, table)
        gains = compute_backstepping_gains(spec, table)
    except GainSelectionError as exc:
        print(f"gain selection failed at stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_CERT

    X0 = np.empty((trials, spec.n))
    d = np.empty((trials, 2))
    for t in range(trials):
        ss = np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(t,))
        rng = np.random.default_rng(ss)
        v = rng.normal(size=spec.n)
        v /= np.linalg.norm(v)
        X0[t] = init_radius * rng.uniform() ** (1.0 / spec.n) * v
        d[t] = rng.uniform(0.0, d_max, size=2)
    finals, sup_u = simulate_backstepping_batch(
        spec, gains, X0, horizon, step, d=d
    )
    final_norms = np.linalg.norm(finals, axis=1)
    a_n = gains.a[-1]
    input_ok = bool(np.all(sup_u <= a_n))
    converged = bool(np.all(final_norms <= 1e-2))

    doc = {
        "n": spec.n,
        "stages": rows,
        "gains": {"a": list(gains.a), "p": list(gains.p)},
        "trials": trials,
        "max_final_norm": float(np.max(final_norms)),
        "max_input": float(np.max(sup_u)),
        "input_bound": a_n,
        "input_ok": input_ok,
        "converged": converged,
    }
    path = _out_path(cfg, "backstep.json")
    _write_json(path, doc)
    _say(
        quiet,
        f"n = {spec.n}: max final |x| = {doc['max_final_norm']:.3e}, "
        f"max |u| = {doc['max_input']:.6g} (bound {a_n:.6g}), wrote {path}",
    )
    return EXIT_OK if (input_ok and converged) else EXIT_CERT


# ---------------------------------------------------------------------------
# Entry point.


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rclf",
        description="Chemostat stabilization: simulate, certify, and stress "
        "feedback laws from TOML scenario configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "one closed-loop run (CSV + SVG)"),
        ("verify", "synthesize constants and grid-check certificates"),
        ("urgas", "Monte-Carlo stability statistics"),
        ("sweep", "stability across uncertainty amplitudes"),
        ("counterexample", "washout of the growth-matching law"),
        ("backstep", "saturated backstepping design and simulation"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML scenario file")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--trials", type=int, default=None, help="override trial count")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out

        if args.command == "simulate":
            return cmd_simulate(cfg, quiet=args.quiet)
        if args.command == "verify":
            return cmd_verify(cfg, quiet=args.quiet)
        if args.command == "urgas":
            return cmd_urgas(cfg, quiet=args.quiet, trials=args.trials)
        if args.command == "sweep":
            return cmd_sweep(cfg, quiet=args.quiet, trials=args.trials)
        if args.command == "counterexample":
            return cmd_counterexample(cfg, quiet=args.quiet)
        if args.command == "backstep":
            return cmd_backstep(cfg, quiet=args.quiet, trials=args.trials)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"standing-hypothesis check failed: {exc}", file=sys.stderr)
        return EXIT_CERT


if __name__ == "__main__":
    sys.exit(main())
