"""Seeded Monte-Carlo harness for the closed-loop chemostat.

Estimates the stability statistics (Lagrange bound, stability radius per
tolerance, attractivity tail time), validates the absorbing-band entry
bound trial by trial, sweeps the uncertainty amplitude under one fixed
law, and reproduces the washout counterexample of the growth-matching law.

All randomness flows from a master seed through per-trial SeedSequence
spawns, so every report is a pure function of (scenario, config, seed).
Batches integrate in the log coordinates with a fixed step, except that
the first nominal step after each disturbance switch is split into a
dyadic warmup ladder sized from the local derivative magnitude: switch
kicks and far-from-band initial states produce boundary layers whose rate
decays like 1/t, which the ladder resolves without adaptive stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .chemostat import (
    ChemostatScenario,
    _physical_rhs_raw,
    growth_rate,
    transformed_rhs,
)
from .certify import RclfConstants, reach_time_bound, relaxed_band_constants
from .dynamics import (
    BLOWUP_BOUND,
    CompactBox,
    Trajectory,
    sample_disturbance,
)
from .feedback import (
    LSpec,
    PsiSpec,
    RclfFeedbackParams,
    SaturatedGains,
    TriangularSystemSpec,
    _classical_u,
    dilution_matching_phi,
    relaxed_feedback,
    rclf_feedback,
)

__all__ = [
    "ClosedLoop",
    "relaxed_loop",
    "rclf_loop",
    "classical_loop",
    "UrgasConfig",
    "UrgasReport",
    "EntryReport",
    "SweepReport",
    "WashoutResult",
    "run_urgas_suite",
    "validate_absorbing_entry",
    "uncertainty_sweep",
    "washout_counterexample",
    "simulate_closed_loop",
    "simulate_physical",
    "simulate_backstepping_batch",
]

#: First-substep displacement target for the warmup ladder.
LADDER_THETA = 0.1
#: Extra halvings past the displacement target.
LADDER_PAD = 4
#: Depth cap; 2(K+1) warmup substeps, so even the cap is cheap.
LADDER_MAX_K = 48


@dataclass(frozen=True)
class ClosedLoop:
    """A scenario paired with a feedback law on the log coordinates.

    ``law(x1, x2)`` returns the dilution offset u (vectorized). ``psi``
    and ``l`` are retained for laws of the absorbing-band family so the
    entry validator can recover its decrement constant.
    """

    scenario: ChemostatScenario
    law: Callable
    kind: str = "relaxed"
    psi: Optional[PsiSpec] = None
    l: Optional[LSpec] = None

    def disturbance_box(self) -> CompactBox:
        a = self.scenario.a
        return CompactBox([0.0, 0.0], [a, a])


def relaxed_loop(
    scenario: ChemostatScenario,
    psi: Optional[PsiSpec] = None,
    l: Optional[LSpec] = None,
) -> ClosedLoop:
    psi = psi if psi is not None else PsiSpec()
    l = l if l is not None else LSpec()

    def law(x1, x2):
        return relaxed_feedback(scenario, psi, l, x1, x2)

    return ClosedLoop(scenario=scenario, law=law, kind="relaxed", psi=psi, l=l)


def rclf_loop(scenario: ChemostatScenario, params: RclfFeedbackParams) -> ClosedLoop:
    def law(x1, x2):
        return rclf_feedback(scenario, params, x1, x2)

    return ClosedLoop(scenario=scenario, law=law, kind="rclf")


def classical_loop(
    scenario: ChemostatScenario, phi: Optional[Callable] = None, q_extra=0.0
) -> ClosedLoop:
    """Growth-matching loop; ``q_extra`` is an added push term.

    A callable ``q_extra`` is used as-is; a scalar amplitude ``amp`` means
    the canonical one-sided shape ``amp * max(0, -x1)``, which keeps the
    required support in {x1 < 0} (zero amplitude adds nothing).
    """
    phi = phi if phi is not None else dilution_matching_phi(scenario)
    if callable(q_extra):
        q_fn = q_extra
    elif q_extra:
        amp = float(q_extra)

        def q_fn(x1, x2):
            return amp * np.maximum(0.0, -np.asarray(x1, dtype=float))

    else:
        q_fn = None

    def law(x1, x2):
        return _classical_u(scenario, phi, q_fn, x1, x2)

    return ClosedLoop(scenario=scenario, law=law, kind="classical")


# ---------------------------------------------------------------------------
# Batch integrator.


def _ladder_depth(f0: float, switch_dt: float) -> int:
    if not np.isfinite(f0):
        return LADDER_MAX_K
    q = max(f0 * switch_dt / LADDER_THETA, 2.0)
    return min(max(int(math.ceil(math.log2(q))) + LADDER_PAD, 1), LADDER_MAX_K)


def _ladder_sizes(step: float, depth: int) -> list:
    """Dyadic warmup covering exactly one nominal step.

    Two substeps at step/2^(K+1) plus pairs at step/2^(j+1) for j = K..1;
    the sizes are dyadic fractions, so their float sum is exactly ``step``.
    """
    sizes = [step * 2.0 ** -(depth + 1)] * 2
    for j in range(depth, 0, -1):
        sizes += [step * 2.0 ** -(j + 1)] * 2
    return sizes


@dataclass
class _BatchMetrics:
    final_states: np.ndarray
    diverged: np.ndarray
    sup_norm: np.ndarray
    last_outside: np.ndarray
    entry_time: Optional[np.ndarray] = None
    entry_excess: Optional[np.ndarray] = None
    recorded: Optional[Trajectory] = None


def _check_grid(step: float, switch_dt: float, horizon: float):
    s_per = int(round(switch_dt / step))
    if s_per < 1 or abs(s_per * step - switch_dt) > 1e-9 * switch_dt:
        raise ValueError(
            f"step {step} does not divide the switch interval {switch_dt}"
        )
    n_int = int(round(horizon / switch_dt))
    if n_int < 1 or abs(n_int * switch_dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError(
            f"horizon {horizon} is not a whole number of switch intervals "
            f"of {switch_dt}"
        )
    return s_per, n_int


def _run_batch(
    loop: ClosedLoop,
    x0: np.ndarray,
    d_values: np.ndarray,
    switch_dt: float,
    horizon: float,
    step: float,
    eps_levels: Sequence[float] = (),
    entry: Optional[tuple] = None,
    record_trial: Optional[int] = None,
) -> _BatchMetrics:
    """Integrate all trials at once, streaming the requested statistics.

    ``entry`` is (x1_star, eps_hat): track the interpolated first time the
    boundary margin h = x1_star/2 - x1 falls to eps_hat per trial, and the
    worst post-entry excess of h over eps_hat. Trials that blow up are
    frozen at their last state and excluded from further statistics.
    """
    sc = loop.scenario
    law = loop.law
    s_per, n_int = _check_grid(step, switch_dt, horizon)
    N = x0.shape[0]
    if d_values.shape[0] != N or d_values.shape[1] < n_int:
        raise ValueError("disturbance array does not cover the batch/horizon")

    x1 = x0[:, 0].astype(float).copy()
    x2 = x0[:, 1].astype(float).copy()
    active = np.ones(N, dtype=bool)
    diverged = np.zeros(N, dtype=bool)
    frozen = x0.astype(float).copy()
    nrm = np.hypot(x1, x2)
    sup_norm = nrm.copy()
    eps_arr = np.asarray(list(eps_levels), dtype=float)
    last_outside = np.zeros((N, eps_arr.size))

    track_entry = entry is not None
    if track_entry:
        x1_star, eps_hat = entry
        h_prev = 0.5 * x1_star - x1
        entered = h_prev <= eps_hat
        entry_time = np.where(entered, 0.0, np.nan)
        entry_excess = np.zeros(N)

    rt = record_trial
    if rt is not None:
        rec_t = [0.0]
        rec_x = [x0[rt].astype(float).copy()]
        rec_u = [float(np.asarray(law(x1[rt], x2[rt])))]
        rec_stop = False

    with np.errstate(all="ignore"):
        for k in range(n_int):
            if not np.any(active):
                break
            d1 = d_values[:, k, 0]
            d2 = d_values[:, k, 1]
            t0 = k * switch_dt

            u = np.asarray(law(x1, x2), dtype=float)
            f1, f2 = transformed_rhs(sc, x1, x2, u, d1, d2)
            mags = np.maximum(np.abs(np.asarray(f1)), np.abs(np.asarray(f2)))
            mags = mags[active]
            f0 = float(np.max(mags)) if mags.size else 0.0
            depth = _ladder_depth(f0, switch_dt)
            warm = _ladder_sizes(step, depth)
            sizes = warm + [step] * (s_per - 1)
            warm_last = len(warm) - 1

            t_local = 0.0
            for idx, dt in enumerate(sizes):
                ua = np.asarray(law(x1, x2), dtype=float)
                k1a, k1b = transformed_rhs(sc, x1, x2, ua, d1, d2)
                y1 = x1 + 0.5 * dt * k1a
                y2 = x2 + 0.5 * dt * k1b
                ub = np.asarray(law(y1, y2), dtype=float)
                k2a, k2b = transformed_rhs(sc, y1, y2, ub, d1, d2)
                y1 = x1 + 0.5 * dt * k2a
                y2 = x2 + 0.5 * dt * k2b
                uc = np.asarray(law(y1, y2), dtype=float)
                k3a, k3b = transformed_rhs(sc, y1, y2, uc, d1, d2)
                y1 = x1 + dt * k3a
                y2 = x2 + dt * k3b
                ud = np.asarray(law(y1, y2), dtype=float)
                k4a, k4b = transformed_rhs(sc, y1, y2, ud, d1, d2)
                new1 = x1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
                new2 = x2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
                t_local += dt
                t_now = t0 + t_local

                finite = np.isfinite(new1) & np.isfinite(new2)
                nrm = np.where(finite, np.hypot(new1, new2), np.inf)
                ok = finite & (nrm <= BLOWUP_BOUND)
                newly_bad = active & ~ok
                if np.any(newly_bad):
                    keep_new = newly_bad & finite
                    frozen[keep_new, 0] = new1[keep_new]
                    frozen[keep_new, 1] = new2[keep_new]
                    keep_old = newly_bad & ~finite
                    frozen[keep_old, 0] = x1[keep_old]
                    frozen[keep_old, 1] = x2[keep_old]
                    diverged |= newly_bad
                    active &= ~newly_bad
                    if rt is not None and newly_bad[rt] and not rec_stop:
                        rec_t.append(t_now)
                        rec_x.append(frozen[rt].copy())
                        rec_u.append(rec_u[-1])
                        rec_stop = True
                x1 = np.where(active, new1, 0.0)
                x2 = np.where(active, new2, 0.0)

                nrm = np.hypot(x1, x2)
                sup_norm = np.where(active, np.maximum(sup_norm, nrm), sup_norm)
                for e in range(eps_arr.size):
                    out = active & (nrm > eps_arr[e])
                    last_outside[out, e] = t_now
                if track_entry:
                    h_new = 0.5 * x1_star - x1
                    cross = active & ~entered & (h_new <= eps_hat)
                    if np.any(cross):
                        span = h_prev[cross] - h_new[cross]
                        frac = np.where(
                            span > 0.0,
                            np.clip((h_prev[cross] - eps_hat) / np.where(
                                span > 0.0, span, 1.0
                            ), 0.0, 1.0),
                            1.0,
                        )
                        entry_time[cross] = t_now - dt + dt * frac
                        entered |= cross
                    post = active & entered
                    entry_excess = np.where(
                        post,
                        np.maximum(entry_excess, h_new - eps_hat),
                        entry_excess,
                    )
                    h_prev = h_new
                if rt is not None and not rec_stop and idx >= warm_last:
                    macro = idx - warm_last + 1
                    rec_t.append(t0 + macro * step)
                    rec_x.append(np.array([x1[rt], x2[rt]]))
                    rec_u.append(float(np.asarray(law(x1[rt], x2[rt]))))

    final = np.column_stack([x1, x2])
    final[diverged] = frozen[diverged]

    recorded = None
    if rt is not None:
        recorded = Trajectory(
            times=np.asarray(rec_t),
            states=np.vstack(rec_x),
            inputs=np.asarray(rec_u),
            diverged=bool(diverged[rt]),
        )
    return _BatchMetrics(
        final_states=final,
        diverged=diverged,
        sup_norm=sup_norm,
        last_outside=last_outside,
        entry_time=entry_time if track_entry else None,
        entry_excess=entry_excess if track_entry else None,
        recorded=recorded,
    )


def _trial_streams(master_seed: int, trial: int):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial,))
    return ss.spawn(2)


def _sample_batch_inputs(
    loop: ClosedLoop, trials: int, radius: float, switch_dt: float,
    horizon: float, master_seed: int
):
    """Initial conditions uniform in the radius ball plus per-trial signals."""
    box = loop.disturbance_box()
    x0 = np.empty((trials, 2))
    values = []
    for i in range(trials):
        s_x0, s_d = _trial_streams(master_seed, i)
        rng = np.random.default_rng(s_x0)
        rad = radius * math.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * math.pi)
        x0[i] = rad * math.cos(ang), rad * math.sin(ang)
        values.append(sample_disturbance(box, switch_dt, horizon, s_d).values)
    return x0, np.stack(values)


# ---------------------------------------------------------------------------
# Stability suite.


@dataclass(frozen=True)
class UrgasConfig:
    """Batch settings for the stability statistics.

    ``eps_levels`` are the tolerance radii for the stability and
    attractivity estimates, strictly increasing. ``delta_bisect_iters``
    and ``delta_horizon`` control the stability-radius search: the
    excursion suprema settle early, so the search re-simulates over a
    shortened horizon (default: 5 time units, capped by ``horizon``).
    """

    trials: int
    init_radius: float
    horizon: float
    step: float
    switch_dt: float
    master_seed: int
    eps_levels: tuple = (0.25, 0.5, 1.0, 2.0)
    delta_bisect_iters: int = 5
    delta_horizon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError(f"need at least one trial, got {self.trials}")
        if self.init_radius < 0:
            raise ValueError("init_radius must be non-negative")
        for name in ("horizon", "step", "switch_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        s_per = round(self.switch_dt / self.step)
        if s_per < 1 or abs(s_per * self.step - self.switch_dt) > 1e-9 * self.switch_dt:
            raise ValueError(
                f"step {self.step} does not divide switch_dt {self.switch_dt}"
            )
        eps = tuple(float(e) for e in self.eps_levels)
        if not eps or any(e <= 0 for e in eps) or any(
            b <= a for a, b in zip(eps, eps[1:])
        ):
            raise ValueError("eps_levels must be positive and strictly increasing")
        object.__setattr__(self, "eps_levels", eps)
        if self.delta_bisect_iters < 0:
            raise ValueError("delta_bisect_iters must be non-negative")


@dataclass(frozen=True)
class UrgasReport:
    """Empirical stability statistics over one seeded batch.

    The per-tolerance maps are sampled estimates over finitely many
    disturbance draws, not certified quantities. ``converged_fraction``
    counts trials that neither blew up nor ended outside the smallest
    tolerance radius; any blow-up marks the suite failed.
    """

    lagrange_sup: float
    lyapunov_delta_per_eps: dict
    attractivity_tau_per_eps: dict
    entry_violations: int
    converged_fraction: float
    diverged_trials: int = 0
    failed: bool = False

    def to_json_dict(self) -> dict:
        from ._fmt import fmt_float

        return {
            "lagrange_sup": self.lagrange_sup,
            "lyapunov_delta_per_eps": {
                fmt_float(k): v for k, v in self.lyapunov_delta_per_eps.items()
            },
            "attractivity_tau_per_eps": {
                fmt_float(k): v for k, v in self.attractivity_tau_per_eps.items()
            },
            "entry_violations": self.entry_violations,
            "converged_fraction": self.converged_fraction,
            "diverged_trials": self.diverged_trials,
            "failed": self.failed,
        }


def run_urgas_suite(loop: ClosedLoop, config: UrgasConfig) -> UrgasReport:
    """Seeded Monte-Carlo estimate of the uniform stability statistics.

    One full-horizon batch from the ``init_radius`` ball yields the
    Lagrange supremum, the per-tolerance attractivity tail times (last
    time any trial sits outside the tolerance ball), and the converged
    fraction. The stability radius per tolerance is then bisected on the
    initial radius, radially rescaling the same ball draws against the
    same disturbance draws, so the estimate is monotone in the tolerance
    by construction.
    """
    cfg = config
    x0, d_values = _sample_batch_inputs(
        loop, cfg.trials, cfg.init_radius, cfg.switch_dt, cfg.horizon,
        cfg.master_seed,
    )
    main = _run_batch(
        loop, x0, d_values, cfg.switch_dt, cfg.horizon, cfg.step,
        eps_levels=cfg.eps_levels,
    )
    n_div = int(np.count_nonzero(main.diverged))
    lagrange = math.inf if n_div else float(np.max(main.sup_norm))
    tau = {
        eps: float(np.max(main.last_outside[:, e]))
        for e, eps in enumerate(cfg.eps_levels)
    }
    finals = np.linalg.norm(main.final_states, axis=1)
    converged = (~main.diverged) & (finals <= cfg.eps_levels[0])
    fraction = float(np.count_nonzero(converged)) / cfg.trials

    if cfg.delta_horizon is not None:
        delta_h = cfg.delta_horizon
    else:
        n_sw = max(1, round(min(cfg.horizon, 5.0) / cfg.switch_dt))
        delta_h = n_sw * cfg.switch_dt
    n_sub = int(round(delta_h / cfg.switch_dt))
    d_sub = d_values[:, :n_sub, :]
    unit = x0 / cfg.init_radius if cfg.init_radius > 0 else np.zeros_like(x0)

    def stays_within(radius: float, eps: float) -> bool:
        m = _run_batch(
            loop, unit * radius, d_sub, cfg.switch_dt, delta_h, cfg.step
        )
        return not np.any(m.diverged) and float(np.max(m.sup_norm)) <= eps

    deltas = {}
    prev = 0.0
    for eps in cfg.eps_levels:
        hi = min(eps, cfg.init_radius)
        lo = prev
        if hi <= lo:
            deltas[eps] = lo
            prev = lo
            continue
        if stays_within(hi, eps):
            deltas[eps] = hi
            prev = hi
            continue
        for _ in range(cfg.delta_bisect_iters):
            mid = 0.5 * (lo + hi)
            if stays_within(mid, eps):
                lo = mid
            else:
                hi = mid
        deltas[eps] = lo
        prev = lo

    return UrgasReport(
        lagrange_sup=lagrange,
        lyapunov_delta_per_eps=deltas,
        attractivity_tau_per_eps=tau,
        entry_violations=0,
        converged_fraction=fraction,
        diverged_trials=n_div,
        failed=n_div > 0,
    )


# ---------------------------------------------------------------------------
# Absorbing-band entry validation.


@dataclass(frozen=True)
class EntryReport:
    """Per-batch tally of entry-bound and invariance violations."""

    trials: int
    entry_violations: int
    reexit_violations: int
    max_entry_time: float
    max_entry_bound: float
    entered_fraction: float

    def to_json_dict(self) -> dict:
        return {
            "trials": self.trials,
            "entry_violations": self.entry_violations,
            "reexit_violations": self.reexit_violations,
            "max_entry_time": self.max_entry_time,
            "max_entry_bound": self.max_entry_bound,
            "entered_fraction": self.entered_fraction,
        }


def validate_absorbing_entry(
    closed_loop: ClosedLoop,
    constants: RclfConstants,
    trials: int,
    seed: int,
    step: float = 1e-3,
    switch_dt: float = 0.1,
    h_span: float = 5.0,
) -> EntryReport:
    """Check the worst-case band-entry time bound trial by trial.

    Draws initial states with boundary margin h uniform in (0, h_span]
    and balance coordinate uniform in the certified band, drives each
    with its own disturbance draw, and compares the interpolated entry
    time into {h <= eps_hat} against the reach-time bound; also scans for
    any post-entry excursion of h above eps_hat + 1e-6 (the band must be
    positively invariant). Requires an absorbing-band loop (the decrement
    constant comes from its psi and gain profile).
    """
    loop = closed_loop
    if loop.kind != "relaxed" or loop.psi is None or loop.l is None:
        raise ValueError("entry validation needs an absorbing-band closed loop")
    sc = loop.scenario
    x1s = constants.x1_star
    eps_hat, delta0 = relaxed_band_constants(sc, x1s, loop.psi, loop.l)

    box = loop.disturbance_box()
    x0 = np.empty((trials, 2))
    bounds = np.empty(trials)
    values = []
    horizon_need = 0.0
    for i in range(trials):
        s_x0, s_d = _trial_streams(seed, i)
        rng = np.random.default_rng(s_x0)
        h0 = h_span * (1.0 - rng.uniform())
        x1 = 0.5 * x1s - h0
        x2 = rng.uniform(constants.beta_min, constants.beta_max)
        x0[i] = x1, x2
        T, _ = reach_time_bound(h0, eps_hat, delta0, 0.0, 1.0)
        bounds[i] = T
        horizon_need = max(horizon_need, T)
    horizon = math.ceil((horizon_need + 1.0) / switch_dt) * switch_dt
    for i in range(trials):
        _, s_d = _trial_streams(seed, i)
        values.append(sample_disturbance(box, switch_dt, horizon, s_d).values)
    d_values = np.stack(values)

    m = _run_batch(
        loop, x0, d_values, switch_dt, horizon, step,
        entry=(x1s, eps_hat),
    )
    entered = np.isfinite(m.entry_time)
    bound_bad = (~entered) | (m.entry_time > bounds + 1e-6)
    bound_bad |= m.diverged
    reexit_bad = entered & (m.entry_excess > 1e-6)
    return EntryReport(
        trials=trials,
        entry_violations=int(np.count_nonzero(bound_bad)),
        reexit_violations=int(np.count_nonzero(reexit_bad)),
        max_entry_time=float(np.nanmax(m.entry_time)) if np.any(entered) else math.nan,
        max_entry_bound=float(np.max(bounds)),
        entered_fraction=float(np.count_nonzero(entered)) / trials,
    )


# ---------------------------------------------------------------------------
# Uncertainty sweep.


@dataclass(frozen=True)
class SweepReport:
    """Per-amplitude stability reports under one fixed feedback law."""

    a_values: tuple
    reports: dict
    law_identical: bool

    @property
    def all_converged(self) -> bool:
        return all(r.converged_fraction == 1.0 for r in self.reports.values())

    def to_json_dict(self) -> dict:
        from ._fmt import fmt_float

        return {
            "a_values": list(self.a_values),
            "law_identical": self.law_identical,
            "all_converged": self.all_converged,
            "reports": {
                fmt_float(a): self.reports[a].to_json_dict() for a in self.a_values
            },
        }


def uncertainty_sweep(
    template: ChemostatScenario,
    a_values: Sequence[float],
    config: UrgasConfig,
    psi: Optional[PsiSpec] = None,
    l: Optional[LSpec] = None,
    step_overrides: Optional[Mapping[float, float]] = None,
) -> SweepReport:
    """Run the stability suite across uncertainty amplitudes.

    The same psi and gain profile parameterize every loop; the law's
    output is probed at 100 seeded states per amplitude and must agree
    bitwise across all of them (it never reads the amplitude). Larger
    amplitudes may need finer integration steps; ``step_overrides`` maps
    amplitude to step without touching the law.
    """
    psi = psi if psi is not None else PsiSpec()
    l = l if l is not None else LSpec()
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.master_seed, spawn_key=(0x5EED,))
    )
    probe = rng.uniform(-3.0, 3.0, size=(100, 2))

    reports = {}
    ref = None
    identical = True
    for a in a_values:
        sc = template.with_uncertainty(a)
        loop = relaxed_loop(sc, psi, l)
        out = np.asarray(loop.law(probe[:, 0], probe[:, 1]))
        if ref is None:
            ref = out
        elif not np.array_equal(out, ref):
            identical = False
        cfg = config
        if step_overrides and a in step_overrides:
            cfg = replace(config, step=step_overrides[a])
        reports[a] = run_urgas_suite(loop, cfg)
    return SweepReport(
        a_values=tuple(float(a) for a in a_values),
        reports=reports,
        law_identical=identical,
    )


# ---------------------------------------------------------------------------
# Washout counterexample.


@dataclass(frozen=True)
class WashoutResult:
    """Both rest substrate levels and the shut-down trajectory.

    ``trajectory`` is in physical coordinates (columns S, X, inputs D),
    truncated at the washout flag when it fires.
    """

    S_1: float
    S_2: float
    trajectory: Trajectory
    washout: bool
    flag_time: Optional[float]

    def to_json_dict(self) -> dict:
        return {
            "S_1": self.S_1,
            "S_2": self.S_2,
            "washout": self.washout,
            "flag_time": self.flag_time,
            "samples": int(self.trajectory.times.size),
        }


def simulate_physical(
    scenario: ChemostatScenario,
    dilution: Callable,
    S0: float,
    X0: float,
    horizon: float,
    step: float,
    stop_below_S: Optional[float] = None,
):
    """Fixed-step closed-loop run in physical coordinates.

    ``dilution(S, X)`` gives D >= 0. Returns (trajectory, flag_time):
    states hold columns (S, X), inputs hold D at each sample; when
    ``stop_below_S`` is set, integration stops at the first sample whose
    substrate falls below it and flag_time reports that time.
    """
    if step <= 0 or horizon <= 0:
        raise ValueError("step and horizon must be positive")
    n_full = int(math.floor(horizon / step + 1e-9))
    rem = horizon - n_full * step
    sizes = [step] * n_full + ([rem] if rem > 1e-9 * step else [])

    times = [0.0]
    S_path = [float(S0)]
    X_path = [float(X0)]
    D_path = [float(dilution(S0, X0))]
    S, X = float(S0), float(X0)
    t = 0.0
    flag_time = None

    def stage(Ss, Xs):
        D = float(dilution(Ss, Xs))
        dX, dS = _physical_rhs_raw(scenario, Xs, Ss, D, 0.0, 0.0)
        return float(dS), float(dX)

    for dt in sizes:
        k1S, k1X = stage(S, X)
        k2S, k2X = stage(S + 0.5 * dt * k1S, X + 0.5 * dt * k1X)
        k3S, k3X = stage(S + 0.5 * dt * k2S, X + 0.5 * dt * k2X)
        k4S, k4X = stage(S + dt * k3S, X + dt * k3X)
        S += dt / 6.0 * (k1S + 2 * k2S + 2 * k3S + k4S)
        X += dt / 6.0 * (k1X + 2 * k2X + 2 * k3X + k4X)
        t += dt
        times.append(t)
        S_path.append(S)
        X_path.append(X)
        D_path.append(float(dilution(S, X)))
        if stop_below_S is not None and S < stop_below_S:
            flag_time = t
            break
    traj = Trajectory(
        times=np.asarray(times),
        states=np.column_stack([S_path, X_path]),
        inputs=np.asarray(D_path),
    )
    return traj, flag_time


def washout_counterexample(
    scenario: ChemostatScenario,
    horizon: float = 0.01,
    step: float = 1e-6,
) -> WashoutResult:
    """Exhibit finite-time shut-down of the growth-matching dilution law.

    With inhibition kinetics and a small negative maintenance balance, the
    rest-point equation of the closed loop under D = mu(S) X / X_s,

        mu(S) (S_i - S - K X_s) + m X_s = 0,

    gains a second root S_1 below the operating level S_2. Sign-change
    bracketing on a 10^4-point grid over (0, S_i) locates both; starting
    the plant at (S_1/2, X_s) then drives the substrate below the washout
    threshold 1e-6 S_i in finite time.

    Raises
    ------
    ValueError
        If the scenario is not in the qualitative regime (inhibition
        kinetics, m < 0, a = b = 0), or if the root count differs from 2.
    """
    sc = scenario
    if sc.growth.kind != "haldane":
        raise ValueError("counterexample needs inhibition (haldane) kinetics")
    if not sc.m < 0:
        raise ValueError(f"counterexample needs m < 0, got m = {sc.m}")
    if sc.a != 0 or sc.b != 0:
        raise ValueError("counterexample is for the nominal plant: a = b = 0")

    Xs = sc.X_s

    def rest(S):
        return growth_rate(sc.growth, S) * (sc.S_i - S - sc.K * Xs) + sc.m * Xs

    grid = np.linspace(sc.S_i * 1e-9, sc.S_i * (1.0 - 1e-9), 10_000)
    vals = rest(grid)
    roots = []
    for i in range(grid.size - 1):
        lo, hi = vals[i], vals[i + 1]
        if lo == 0.0:
            roots.append(float(grid[i]))
        elif lo * hi < 0.0:
            roots.append(float(brentq(rest, grid[i], grid[i + 1], xtol=1e-12)))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    if len(roots) != 2:
        raise ValueError(
            f"expected exactly two rest substrate levels, found {len(roots)}: "
            f"{roots}"
        )
    S1, S2 = sorted(roots)

    def dilution(S, X):
        return growth_rate(sc.growth, S) * X / Xs

    threshold = 1e-6 * sc.S_i
    traj, flag_time = simulate_physical(
        sc, dilution, S1 / 2.0, Xs, horizon, step, stop_below_S=threshold
    )
    return WashoutResult(
        S_1=S1,
        S_2=S2,
        trajectory=traj,
        washout=flag_time is not None,
        flag_time=flag_time,
    )


# ---------------------------------------------------------------------------
# Single-trajectory and auxiliary drivers.


def simulate_closed_loop(
    loop: ClosedLoop,
    x0,
    horizon: float,
    step: float,
    switch_dt: float = 0.1,
    seed: Optional[int] = None,
    d_values: Optional[np.ndarray] = None,
) -> Trajectory:
    """One closed-loop run in log coordinates, recorded at the step grid.

    The disturbance is piecewise constant per ``switch_dt`` interval:
    explicit ``d_values`` (shape (intervals, 2)) win, otherwise a seeded
    draw from the scenario's box, otherwise zero. Uses the same warmup
    ladder as the batch driver.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, 2)
    n_int = int(round(horizon / switch_dt))
    if d_values is not None:
        dv = np.asarray(d_values, dtype=float).reshape(1, -1, 2)
    elif seed is not None:
        sig = sample_disturbance(
            loop.disturbance_box(), switch_dt, horizon, seed
        )
        dv = sig.values.reshape(1, -1, 2)
    else:
        dv = np.zeros((1, max(n_int, 1), 2))
    m = _run_batch(
        loop, x0, dv, switch_dt, horizon, step, record_trial=0
    )
    return m.recorded


def simulate_backstepping_batch(
    spec: TriangularSystemSpec,
    gains: SaturatedGains,
    X0: np.ndarray,
    horizon: float,
    step: float,
    d: Optional[np.ndarray] = None,
):
    """Integrate many nested-saturation trials at once.

    The component callables of ``spec`` must broadcast over row-stacked
    states. ``d`` is a constant disturbance, either one vector shared by
    all trials or one row per trial; omitted means zero. Returns
    (final_states, sup_input) with the largest |u| seen along each trial,
    sampled at every stage evaluation.
    """
    X = np.asarray(X0, dtype=float).copy()
    N, n = X.shape
    if n != spec.n:
        raise ValueError(f"states have {n} components, system has {spec.n}")
    d = np.zeros(2) if d is None else np.asarray(d, dtype=float)

    def control(Y):
        phi = np.zeros(Y.shape[0])
        for i in range(spec.n):
            s = gains.p[i] * (Y[:, i] - phi)
            phi = -gains.a[i] * np.clip(s, -1.0, 1.0)
        return phi

    def rhs(Y):
        u = control(Y)
        out = np.empty_like(Y)
        for i in range(spec.n):
            drive = u if i == spec.n - 1 else Y[:, i + 1]
            out[:, i] = spec.fs[i](d, Y) + spec.gs[i](d, Y) * drive
        return out, u

    n_full = int(math.floor(horizon / step + 1e-9))
    rem = horizon - n_full * step
    sizes = [step] * n_full + ([rem] if rem > 1e-9 * step else [])
    sup_u = np.abs(control(X))
    for dt in sizes:
        k1, u1 = rhs(X)
        k2, u2 = rhs(X + 0.5 * dt * k1)
        k3, u3 = rhs(X + 0.5 * dt * k2)
        k4, u4 = rhs(X + dt * k3)
        X = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for u in (u1, u2, u3, u4):
            sup_u = np.maximum(sup_u, np.abs(u))
    return X, sup_u
