"""Constant synthesis and grid certification of the Lyapunov inequalities.

Everything here is grid-plus-safety-margin numerics, not formal proof: the
inequalities are low-dimensional (planar state, disturbance box corners), so
dense grids with documented windows and Lipschitz-style safety factors are
simple, fast, and auditable. Unbounded regions are checked on windows that
extend a fixed distance past the region boundaries; each report records its
window.

The disturbance enters every implemented closed loop affinely, so each
inequality is evaluated at the box corners only; corner margins bound the
whole box. That affinity is itself asserted by tests (vanishing second
differences), not assumed silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .chemostat import (
    ChemostatScenario,
    S2Certificate,
    mu_max,
    growth_rate,
    safe_exp,
    transformed_growth,
    transformed_rhs,
)
from .feedback import LSpec, PsiSpec, RclfFeedbackParams, relaxed_feedback, rclf_feedback

__all__ = [
    "RclfConstants",
    "CertificateReport",
    "AffineFunction",
    "ControlAffineSystem",
    "GrowthEnvelope",
    "synthesize_rclf_constants",
    "check_rclf_constants",
    "rclf_lyapunov_parts",
    "relaxed_growth_envelope",
    "relaxed_band_constants",
    "verify_rclf_derivative",
    "verify_relaxed_conditions",
    "verify_relaxed_clf_conditions",
    "reach_time_bound",
]

#: Strict chemostat certificates must clear this margin (absolute).
STRICT_MARGIN = -1e-6

#: Radius of the punctured neighborhood around the origin for strict checks.
ORIGIN_RADIUS = 1e-3


@dataclass(frozen=True)
class CertificateReport:
    """Worst-case margin of one inequality over one gridded region.

    ``worst_margin`` is the maximum of the inequality's left-hand side minus
    its right-hand side: negative means the inequality holds. ``passed``
    applies the check's own rule: strictly below ``threshold`` for strict
    checks, at most ``threshold`` for inequalities that may touch zero.
    ``k_w`` carries the smallest feasible growth-envelope rate when the
    check reports one; ``window`` documents the truncation of unbounded
    regions.
    """

    region: str
    grid_shape: tuple
    worst_margin: float
    witness_state: np.ndarray
    witness_d: np.ndarray
    passed: bool
    strict: bool = True
    threshold: float = 0.0
    k_w: Optional[float] = None
    window: Optional[tuple] = None

    def to_json_dict(self) -> dict:
        out = {
            "region": self.region,
            "grid": [int(n) for n in self.grid_shape],
            "worst_margin": float(self.worst_margin),
            "witness": {
                "state": [float(v) for v in np.atleast_1d(self.witness_state)],
                "d": [float(v) for v in np.atleast_1d(self.witness_d)],
            },
            "passed": bool(self.passed),
            "strict": bool(self.strict),
            "threshold": float(self.threshold),
        }
        if self.k_w is not None:
            out["k_w"] = float(self.k_w)
        if self.window is not None:
            out["window"] = [[float(a), float(b)] for (a, b) in self.window]
        return out


def _make_report(
    region: str,
    margins: np.ndarray,
    states: np.ndarray,
    corners: np.ndarray,
    corner_index: np.ndarray,
    strict: bool,
    threshold: float,
    grid_shape: tuple,
    window=None,
    k_w=None,
) -> CertificateReport:
    """Reduce per-point margins (already maximized over corners) to a report."""
    i = int(np.argmax(margins))
    worst = float(margins[i])
    if strict:
        passed = worst < threshold
    else:
        passed = worst <= threshold + 1e-12
    return CertificateReport(
        region=region,
        grid_shape=tuple(grid_shape),
        worst_margin=worst,
        witness_state=states[i].copy(),
        witness_d=corners[int(corner_index[i])].copy(),
        passed=passed,
        strict=strict,
        threshold=threshold,
        k_w=k_w,
        window=window,
    )


def _region_grid(window, shape):
    (x1lo, x1hi), (x2lo, x2hi) = window
    g1 = np.linspace(x1lo, x1hi, shape[0])
    g2 = np.linspace(x2lo, x2hi, shape[1])
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    return X1.ravel(), X2.ravel()


# ---------------------------------------------------------------------------
# Constant synthesis.


@dataclass(frozen=True)
class RclfConstants:
    """Certified constants for the pointwise-decrease construction.

    ``x1_star`` and ``p`` repeat the growth-margin certificate so the
    object is self-contained for verification; ``beta_min < 0 < beta_max``
    bracket the reachable biomass-balance band; ``eps``, ``r``, ``L`` are
    the geometric/Lipschitz constants; ``A`` and ``M`` scale the Lyapunov
    curvature; ``B = max(|beta_min|, |beta_max|)``.
    """

    x1_star: float
    p: float
    delta: float
    beta_min: float
    beta_max: float
    eps: float
    r: float
    L: float
    B: float
    M: float
    A: float

    def __post_init__(self) -> None:
        if not (0 < self.delta < self.p):
            raise ValueError("delta must lie strictly inside (0, p)")
        if not (self.beta_min < 0 < self.beta_max):
            raise ValueError("need beta_min < 0 < beta_max")
        if not self.x1_star < 0:
            raise ValueError("x1_star must be negative")
        if not (self.eps > 0 and self.r > 0 and self.L >= 0):
            raise ValueError("eps, r must be positive and L non-negative")
        if not (self.M > 0 and self.A > 0):
            raise ValueError("M and A must be positive")
        if abs(self.B - max(abs(self.beta_min), abs(self.beta_max))) > 1e-12:
            raise ValueError("B must equal max(|beta_min|, |beta_max|)")


def _beta_bounds(sc: ChemostatScenario, p: float, delta: float):
    mm = mu_max(sc.growth)
    lo_arg = (p - delta) / ((sc.K * mm - sc.m) * sc.G)
    hi_arg = (mm + sc.a * (sc.c + 1.0) * sc.S_s - sc.b + delta) / (p * sc.G)
    if lo_arg <= 0 or hi_arg <= 0:
        return None, None
    return math.log(lo_arg), math.log(hi_arg)


def synthesize_rclf_constants(
    scenario: ChemostatScenario, s2: S2Certificate
) -> RclfConstants:
    """Produce the full constant set from the growth-margin certificate.

    The balance-band offset delta is located by bisection on its
    feasibility boundary (the predicate beta_min < 0 < beta_max is
    monotone in delta) and then set to the midpoint of the feasible
    interval: taking the literal supremum would push beta_min to -inf and
    inflate the curvature constants with no benefit. eps comes from the
    closed-form minima of its two defining ratios, shrunk by 0.99; the
    grid suprema r and L carry a 1.05 factor; A and M sit 1.1 above their
    binding inequalities.

    Raises
    ------
    ValueError
        If no delta in (0, p) yields a sign-correct balance band.
    """
    sc = scenario
    p = s2.p
    x1_star = s2.x1_star

    def feasible(delta: float) -> bool:
        bmin, bmax = _beta_bounds(sc, p, delta)
        return bmin is not None and bmin < 0.0 < bmax

    hi_probe = p * (1.0 - 1e-12)
    if not feasible(hi_probe):
        raise ValueError(
            "no admissible balance-band offset: the feasibility predicate "
            "fails even at the top of (0, p)"
        )
    lo_probe = p * 1e-12
    if feasible(lo_probe):
        delta_lo = 0.0
    else:
        lo, hi = lo_probe, hi_probe
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                hi = mid
            else:
                lo = mid
        delta_lo = hi
    delta = 0.5 * (delta_lo + p)
    beta_min, beta_max = _beta_bounds(sc, p, delta)
    B = max(abs(beta_min), abs(beta_max))

    # eps: (1 - e^{-x})/x decreases, so its minimum over [x1_star, -x1_star]
    # sits at the right endpoint; (e^x - 1)/x increases, minimum at beta_min.
    eps_a = (1.0 - math.exp(x1_star)) / (-x1_star)
    eps_b = (math.exp(beta_min) - 1.0) / beta_min
    eps = 0.99 * min(eps_a, eps_b)

    xg = np.linspace(x1_star, -x1_star, 4001)
    ex = np.exp(xg)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(ex - 1.0) / ((sc.c + ex) * np.abs(xg))
    ratio[~np.isfinite(ratio)] = 0.0
    r = 1.05 * max(float(np.max(ratio)), 1.0 / (sc.c + 1.0))

    Sg = np.linspace(sc.S_i / 4000, sc.S_i * (1 - 1e-9), 4000)
    mu_s = growth_rate(sc.growth, sc.S_s)
    dev = np.abs(Sg - sc.S_s)
    keep = dev > sc.S_i * 1e-7
    lip = np.abs(growth_rate(sc.growth, Sg[keep]) - mu_s) / dev[keep]
    L = 1.05 * float(np.max(lip))

    denom_flux = sc.K * (sc.D_s + sc.b) - sc.m
    drift = L * abs(sc.K * sc.b - sc.m) / denom_flux
    a_eq = (B * sc.S_s * (drift + sc.a) + 1.0) / (
        2.0 * sc.c * p * sc.G * math.exp(beta_min) * math.exp(2.0 * x1_star)
    )
    A = 1.1 * a_eq

    m1 = 2.0 * A / (-x1_star)
    shell = math.exp(-beta_min - x1_star)
    m2 = shell / (2.0 * sc.c) + (sc.c / 2.0) * shell * (
        sc.S_s * r / (eps * p * sc.G)
    ) ** 2 * (drift + 2.0 * sc.a) ** 2
    M = 1.1 * max(m1, m2)

    constants = RclfConstants(
        x1_star=x1_star,
        p=p,
        delta=delta,
        beta_min=beta_min,
        beta_max=beta_max,
        eps=eps,
        r=r,
        L=L,
        B=B,
        M=M,
        A=A,
    )
    check_rclf_constants(scenario, constants)
    return constants


def check_rclf_constants(
    scenario: ChemostatScenario, k: RclfConstants
) -> None:
    """Re-substitute the constants into every defining inequality.

    Raises ValueError on the first violated condition; silent on success.
    """
    sc = scenario
    bmin, bmax = _beta_bounds(sc, k.p, k.delta)
    if bmin is None or abs(bmin - k.beta_min) > 1e-9 or abs(bmax - k.beta_max) > 1e-9:
        raise ValueError("stored balance band inconsistent with its definition")

    denom_flux = sc.K * (sc.D_s + sc.b) - sc.m
    drift = k.L * abs(sc.K * sc.b - sc.m) / denom_flux
    lhs_a = 2.0 * k.A * sc.c * k.p * sc.G * math.exp(k.beta_min) * math.exp(
        2.0 * k.x1_star
    )
    rhs_a = k.B * sc.S_s * (drift + sc.a) + 1.0
    if not lhs_a >= rhs_a:
        raise ValueError(f"curvature constant A too small: {lhs_a} < {rhs_a}")

    if not k.M >= 2.0 * k.A / (-k.x1_star):
        raise ValueError("M below its first lower bound 2A/(-x1_star)")
    shell = math.exp(-k.beta_min - k.x1_star)
    m2 = shell / (2.0 * sc.c) + (sc.c / 2.0) * shell * (
        sc.S_s * k.r / (k.eps * k.p * sc.G)
    ) ** 2 * (drift + 2.0 * sc.a) ** 2
    if not k.M >= m2:
        raise ValueError("M below its second lower bound")

    xg = np.linspace(k.x1_star, -k.x1_star, 2001)
    lhs = xg * (np.exp(-xg) - 1.0)
    if not np.all(lhs <= -k.eps * xg**2 + 1e-12):
        raise ValueError("eps too large for the substrate-side bound")
    bg = np.linspace(k.beta_min, k.beta_max, 2001)
    lhs2 = bg * (np.exp(bg) - 1.0)
    if not np.all(lhs2 >= k.eps * bg**2 - 1e-12):
        raise ValueError("eps too large for the balance-side bound")


# ---------------------------------------------------------------------------
# Lyapunov pieces.


def rclf_lyapunov_parts(k: RclfConstants):
    """Value and x1-derivative of the certified Lyapunov function.

    V(x1, x2) = gamma(x1) + x2^2/2 with a quadratic core M x1^2/2 and an
    exponential wing A (e^{2(x1+x1_star)} - 1 - 2(x1+x1_star)) switched on
    for x1 >= -x1_star (C^1 across the switch). Returns vectorized
    callables (value, dgamma).
    """
    M, A, x1s = k.M, k.A, k.x1_star

    def gamma(x1):
        x1 = np.asarray(x1, dtype=float)
        z = x1 + x1s
        wing = A * (safe_exp(2.0 * z) - 1.0 - 2.0 * z)
        return 0.5 * M * x1**2 + np.where(x1 >= -x1s, wing, 0.0)

    def dgamma(x1):
        x1 = np.asarray(x1, dtype=float)
        z = x1 + x1s
        wing = 2.0 * A * (safe_exp(2.0 * z) - 1.0)
        return M * x1 + np.where(x1 >= -x1s, wing, 0.0)

    def value(x1, x2):
        return gamma(x1) + 0.5 * np.asarray(x2, dtype=float) ** 2

    return value, dgamma


@dataclass(frozen=True)
class GrowthEnvelope:
    """Radially unbounded envelope used for the excursion bound.

    W(x1, x2) = x1^2/2 + min(0, x2)^2/2 + max(0, x2 - ln(c + e^{x1}))^2/2
    + 1. The logarithmic ridge follows the biomass level that the substrate
    coordinate can sustain, so W grows along every escape direction the
    closed loop can actually take.
    """

    c: float

    def value(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        ridge = np.maximum(0.0, x2 - np.log(self.c + safe_exp(x1)))
        return 0.5 * x1**2 + 0.5 * np.minimum(0.0, x2) ** 2 + 0.5 * ridge**2 + 1.0

    def grad(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        ex = safe_exp(x1)
        ridge = np.maximum(0.0, x2 - np.log(self.c + ex))
        g1 = x1 - ridge * ex / (self.c + ex)
        g2 = np.minimum(0.0, x2) + ridge
        return g1, g2


def relaxed_growth_envelope(scenario: ChemostatScenario) -> GrowthEnvelope:
    return GrowthEnvelope(c=scenario.c)


def relaxed_band_constants(
    scenario: ChemostatScenario, x1_star: float, psi: PsiSpec, l: LSpec
):
    """Entry threshold and guaranteed decrement of the absorbing boundary.

    h(x) = x1_star/2 - x1, the target band is {h <= eps_hat} with
    eps_hat = -x1_star/2, and on {h >= 0} the boundary decreases at least
    at rate delta0 = l0 (c e^{-x1_star/2} + 1) psi(x1_star/2).
    """
    eps_hat = -0.5 * x1_star
    delta0 = l.l0 * (
        scenario.c * math.exp(-0.5 * x1_star) + 1.0
    ) * float(psi(0.5 * x1_star))
    return eps_hat, delta0


# ---------------------------------------------------------------------------
# Chemostat verifiers.


def _corner_sweep(sc: ChemostatScenario, x1, x2, u, corners, margin_fn):
    """Max margin over disturbance corners, pointwise over flattened grids.

    ``margin_fn(dx1, dx2, x1, x2)`` maps closed-loop derivatives to the
    inequality's margin. Returns (margins, corner_index).
    """
    best = np.full(x1.shape, -np.inf)
    which = np.zeros(x1.shape, dtype=int)
    for ci, d in enumerate(corners):
        dx1, dx2 = transformed_rhs(sc, x1, x2, u, d[0], d[1])
        m = margin_fn(dx1, dx2, x1, x2)
        take = m > best
        best[take] = m[take]
        which[take] = ci
    return best, which


def _d_corners(a: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [a, 0.0], [0.0, a], [a, a]])


def verify_rclf_derivative(
    scenario: ChemostatScenario,
    constants: RclfConstants,
    feedback_params: RclfFeedbackParams,
    grid: tuple = (400, 400),
) -> list:
    """Grid-check pointwise Lyapunov decrease of the steering law, by case.

    The window [x1_star - 3, -x1_star + 3] x [beta_min - 3, beta_max + 3]
    is split into the four proof regions: balance coordinate above the
    band (case1), inside it (case2), below it (case3), and the substrate
    coordinate below the certified band (case4). Each region is gridded,
    the derivative of V along the closed loop is maximized over the four
    disturbance corners (the dependence is affine), and a ball of radius
    1e-3 around the origin is excluded. Pass rule: worst margin < -1e-6.
    """
    sc = scenario
    k = constants
    x1s = k.x1_star
    win_x1 = (x1s - 3.0, -x1s + 3.0)
    win_x2 = (k.beta_min - 3.0, k.beta_max + 3.0)
    corners = _d_corners(sc.a)
    _, dgamma = rclf_lyapunov_parts(k)

    def vdot_margin(dx1, dx2, x1, x2):
        return dgamma(x1) * dx1 + x2 * dx2

    regions = [
        ("case1", (x1s, win_x1[1]), (k.beta_max, win_x2[1])),
        ("case2", (x1s, win_x1[1]), (k.beta_min, k.beta_max)),
        ("case3", (x1s, win_x1[1]), (win_x2[0], k.beta_min)),
        ("case4", (win_x1[0], x1s), win_x2),
    ]
    reports = []
    for name, wx1, wx2 in regions:
        x1, x2 = _region_grid((wx1, wx2), grid)
        keep = x1**2 + x2**2 > ORIGIN_RADIUS**2
        x1, x2 = x1[keep], x2[keep]
        u = rclf_feedback(sc, feedback_params, x1, x2)
        margins, which = _corner_sweep(sc, x1, x2, u, corners, vdot_margin)
        reports.append(
            _make_report(
                name,
                margins,
                np.column_stack([x1, x2]),
                corners,
                which,
                strict=True,
                threshold=STRICT_MARGIN,
                grid_shape=grid,
                window=(wx1, wx2),
            )
        )
    return reports


def verify_relaxed_conditions(
    scenario: ChemostatScenario,
    constants: RclfConstants,
    psi: PsiSpec,
    l: LSpec,
    grid: tuple = (400, 400),
) -> list:
    """Three grid checks backing the absorbing-band argument.

    (i) ``omega_P2``: the certified Lyapunov function still decreases
    under the band law on the absorbing region (origin ball excluded);
    (ii) ``lemma25_h``: the boundary margin h decreases at rate at least
    delta0 wherever h >= 0 (boundary included); (iii) ``lemma25_W``: the
    growth envelope obeys dW/dt <= K_W W there, reporting the smallest
    feasible K_W (negative values mean W actually contracts).
    """
    sc = scenario
    k = constants
    x1s = k.x1_star
    corners = _d_corners(sc.a)
    _, dgamma = rclf_lyapunov_parts(k)
    env = relaxed_growth_envelope(sc)
    _, delta0 = relaxed_band_constants(sc, x1s, psi, l)

    reports = []

    # (i) decrease on the absorbing region, cases 1-3 share x1 >= x1_star.
    win = ((x1s, -x1s + 3.0), (k.beta_min - 3.0, k.beta_max + 3.0))
    x1, x2 = _region_grid(win, grid)
    keep = x1**2 + x2**2 > ORIGIN_RADIUS**2
    x1k, x2k = x1[keep], x2[keep]
    u = relaxed_feedback(sc, psi, l, x1k, x2k)
    margins, which = _corner_sweep(
        sc, x1k, x2k, u, corners, lambda d1, d2, a, b: dgamma(a) * d1 + b * d2
    )
    reports.append(
        _make_report(
            "omega_P2",
            margins,
            np.column_stack([x1k, x2k]),
            corners,
            which,
            strict=True,
            threshold=STRICT_MARGIN,
            grid_shape=grid,
            window=win,
        )
    )

    # (ii) boundary decrement on {h >= 0}, i.e. x1 <= x1_star/2 (inclusive).
    win_h = ((x1s - 3.0, 0.5 * x1s), (k.beta_min - 3.0, k.beta_max + 3.0))
    x1, x2 = _region_grid(win_h, grid)
    u = relaxed_feedback(sc, psi, l, x1, x2)
    margins, which = _corner_sweep(
        sc, x1, x2, u, corners, lambda d1, d2, a, b: -d1 + delta0
    )
    reports.append(
        _make_report(
            "lemma25_h",
            margins,
            np.column_stack([x1, x2]),
            corners,
            which,
            strict=True,
            threshold=STRICT_MARGIN,
            grid_shape=grid,
            window=win_h,
        )
    )

    # (iii) envelope growth rate on {h >= 0}.
    x1, x2 = _region_grid(win_h, grid)
    u = relaxed_feedback(sc, psi, l, x1, x2)
    wv = env.value(x1, x2)

    def wdot(d1, d2, a, b):
        g1, g2 = env.grad(a, b)
        return g1 * d1 + g2 * d2

    rates, which = _corner_sweep(sc, x1, x2, u, corners, wdot)
    k_w = float(np.max(rates / wv))
    k_w_used = max(0.0, k_w)
    margins = rates - k_w_used * wv
    reports.append(
        _make_report(
            "lemma25_W",
            margins,
            np.column_stack([x1, x2]),
            corners,
            which,
            strict=False,
            threshold=0.0,
            grid_shape=grid,
            window=win_h,
            k_w=k_w,
        )
    )
    return reports


# ---------------------------------------------------------------------------
# Generic relaxed-CLF checker.


@dataclass(frozen=True)
class AffineFunction:
    """w . x + offset with constant gradient (vectorized over rows)."""

    w: np.ndarray
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.w + self.offset

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.w
        return np.broadcast_to(self.w, x.shape)


@dataclass(frozen=True)
class ControlAffineSystem:
    """dx/dt = f(d, x) + g(d, x) u with scalar input.

    ``f`` and ``g`` take (d, states) with states stacked as rows and return
    (N, n) arrays. ``box`` is the disturbance box (None for undisturbed
    systems). When ``a_limit`` and ``gamma`` are both set, the input set is
    [-a_limit, inf) and the interval-valued checks of the clipped-gradient
    construction are run in addition to the pointwise ones.
    """

    f: Callable
    g: Callable
    box: object = None
    a_limit: Optional[float] = None
    gamma: Optional[Callable] = None

    def corners(self) -> np.ndarray:
        if self.box is None:
            return np.zeros((1, 0))
        return self.box.corners()


def _grad_rows(fn, x):
    g = fn.grad(x)
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = np.broadcast_to(g, x.shape)
    return g


def verify_relaxed_clf_conditions(
    system: ControlAffineSystem,
    V,
    h,
    W,
    delta_fn: Callable,
    K: float,
    eps: float,
    candidate: Callable,
    window=((-6.0, 6.0), (-6.0, 6.0)),
    grid: tuple = (400, 400),
) -> list:
    """Generic grid check of the relaxed control-Lyapunov conditions.

    With u supplied by ``candidate`` (the existence clauses are verified by
    exhibiting that law's value): boundary decrease and envelope growth on
    {h >= 0} (``R1``), Lyapunov decrease on {h <= eps} minus an origin
    ball (``R2``), and all three on the overlap band {0 <= h <= eps}
    (``R3``). If the system carries an input floor and a gamma profile,
    the interval-valued corridor checks of the clipped-gradient law are
    reported as ``ex41``. R1/R3/ex41 may touch zero (pass rule <= 0); R2
    is strict (< 0).

    ``V``, ``h``, ``W`` must expose vectorized ``__call__`` and ``grad``
    over row-stacked states; ``delta_fn`` maps h-values to decrements and
    must be positive on h >= 0 (validated, ValueError otherwise).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    (x1lo, x1hi), (x2lo, x2hi) = window
    g1 = np.linspace(x1lo, x1hi, grid[0])
    g2 = np.linspace(x2lo, x2hi, grid[1])
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    X = np.column_stack([X1.ravel(), X2.ravel()])

    hX = np.asarray(h(X), dtype=float)
    probe = np.asarray(delta_fn(np.maximum(hX, 0.0)), dtype=float)
    if np.any(probe <= 0.0):
        raise ValueError("delta_fn must be strictly positive on h >= 0")

    WX = np.asarray(W(X), dtype=float)
    gh = _grad_rows(h, X)
    gW = _grad_rows(W, X)
    gV = _grad_rows(V, X)
    uX = np.asarray(candidate(X), dtype=float)
    corners = system.corners()

    n_pts = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    off_origin = norms > ORIGIN_RADIUS
    d_decr = np.asarray(delta_fn(hX), dtype=float)

    m_R1 = np.full(n_pts, -np.inf)
    m_R2 = np.full(n_pts, -np.inf)
    m_R3 = np.full(n_pts, -np.inf)
    w_R1 = np.zeros(n_pts, dtype=int)
    w_R2 = np.zeros(n_pts, dtype=int)
    w_R3 = np.zeros(n_pts, dtype=int)
    for ci, d in enumerate(corners):
        F = np.asarray(system.f(d, X), dtype=float) + np.asarray(
            system.g(d, X), dtype=float
        ) * uX[:, None]
        mh = np.einsum("ij,ij->i", gh, F) + d_decr
        mw = np.einsum("ij,ij->i", gW, F) - K * WX
        mv = np.einsum("ij,ij->i", gV, F)
        r1 = np.maximum(mh, mw)
        r3 = np.maximum(r1, np.where(off_origin, mv, -np.inf))
        for buf, wh, m in ((m_R1, w_R1, r1), (m_R2, w_R2, mv), (m_R3, w_R3, r3)):
            take = m > buf
            buf[take] = m[take]
            wh[take] = ci

    in_h0 = hX >= 0.0
    in_band = (hX >= 0.0) & (hX <= eps)
    in_low = (hX <= eps) & off_origin

    reports = []

    def emit(region, mask, margins, which, strict):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            raise ValueError(f"region {region} contains no grid points")
        sub = margins[idx]
        i = int(np.argmax(sub))
        gi = idx[i]
        worst = float(sub[i])
        passed = worst < 0.0 if strict else worst <= 1e-12
        reports.append(
            CertificateReport(
                region=region,
                grid_shape=tuple(grid),
                worst_margin=worst,
                witness_state=X[gi].copy(),
                witness_d=corners[int(which[gi])].copy(),
                passed=passed,
                strict=strict,
                threshold=0.0,
                window=window,
            )
        )

    emit("R1", in_h0, m_R1, w_R1, strict=False)
    emit("R2", in_low, m_R2, w_R2, strict=True)
    emit("R3", in_band, m_R3, w_R3, strict=False)

    if system.a_limit is not None and system.gamma is not None:
        reports.append(
            _interval_corridor_report(
                system, V, h, W, delta_fn, K, eps, X, hX, WX, gh, gW, gV, window, grid
            )
        )
    return reports


def _interval_corridor_report(
    system, V, h, W, delta_fn, K, eps, X, hX, WX, gh, gW, gV, window, grid
) -> CertificateReport:
    """Worst margin of the interval-valued clipped-gradient conditions.

    Where the descent rate gamma grad V . g exceeds the input floor a, the
    saturated input -a must still decrease h and respect the envelope;
    in the corridor [a - eps, a] any admissible input down to -a + eps
    must do the same. Both quantified clauses are affine in u, so the
    input interval endpoints {-a, -a + eps} bound them.
    """
    a = float(system.a_limit)
    corners = system.corners()
    n_pts = X.shape[0]
    gamma = system.gamma
    gam = np.asarray(gamma(X), dtype=float) if callable(gamma) else float(gamma)

    best = np.full(n_pts, -np.inf)
    which = np.zeros(n_pts, dtype=int)
    d_decr = np.asarray(delta_fn(hX), dtype=float)
    in_h0 = hX >= 0.0
    for ci, d in enumerate(corners):
        fX = np.asarray(system.f(d, X), dtype=float)
        gX = np.asarray(system.g(d, X), dtype=float)
        sigma = gam * np.einsum("ij,ij->i", gV, gX)
        sat_zone = in_h0 & (sigma >= a)
        corridor = in_h0 & (sigma >= a - eps) & (sigma <= a)
        m = np.full(n_pts, -np.inf)
        for u_val, zone in (((-a), sat_zone), ((-a), corridor), ((-a + eps), corridor)):
            F = fX + gX * u_val
            mh = np.einsum("ij,ij->i", gh, F) + d_decr
            mw = np.einsum("ij,ij->i", gW, F) - K * WX
            cand = np.maximum(mh, mw)
            m = np.where(zone, np.maximum(m, cand), m)
        take = m > best
        best[take] = m[take]
        which[take] = ci
    idx = np.nonzero(np.isfinite(best))[0]
    if idx.size == 0:
        raise ValueError("input-corridor regions contain no grid points")
    sub = best[idx]
    i = int(np.argmax(sub))
    gi = idx[i]
    worst = float(sub[i])
    return CertificateReport(
        region="ex41",
        grid_shape=tuple(grid),
        worst_margin=worst,
        witness_state=X[gi].copy(),
        witness_d=corners[int(which[gi])].copy(),
        passed=worst <= 1e-12,
        strict=False,
        threshold=0.0,
        window=window,
    )


# ---------------------------------------------------------------------------
# Reach-time and excursion bounds.


def reach_time_bound(
    h_of_x0: float,
    eps_hat: float,
    delta0: float,
    K_W: float,
    W_of_x0: float,
    w_envelope=None,
    angles: int = 720,
    nodes: int = 33,
):
    """Worst-case band-entry time and excursion bound.

    T = max(0, h(x0) - eps_hat)/delta0: the boundary margin decreases at
    rate at least delta0 until the band is reached. The excursion bound
    inverts the envelope's level sets: with B = e^{K_W T} W(x0), the state
    cannot leave {W <= B}, and the reported radius averages the level-set
    radius r(s) = max{|x| : W(x) <= s} over s in [B, B+1] by trapezoid.

    ``w_envelope`` must expose a vectorized ``value(x1, x2)``; when None an
    isotropic |x|^2/2 + 1 envelope is used.
    """
    if delta0 <= 0:
        raise ValueError(f"delta0 must be positive, got {delta0}")
    if eps_hat <= 0:
        raise ValueError(f"eps_hat must be positive, got {eps_hat}")
    if K_W < 0:
        raise ValueError(f"K_W must be non-negative, got {K_W}")
    T = max(0.0, h_of_x0 - eps_hat) / delta0
    B = math.exp(K_W * T) * W_of_x0

    if w_envelope is None:
        w_envelope = _IsotropicEnvelope()
    theta = np.linspace(0.0, 2.0 * math.pi, angles, endpoint=False)
    cs = np.cos(theta)
    sn = np.sin(theta)

    def level_radius(s: float) -> float:
        # Bracket the boundary per ray, then bisect; W -> inf radially on
        # every ray, so a doubling search finds an upper bracket.
        lo = np.zeros(angles)
        hi = np.full(angles, 1.0)
        for _ in range(80):
            vals = w_envelope.value(hi * cs, hi * sn)
            grow = vals <= s
            if not np.any(grow):
                break
            hi[grow] *= 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            vals = w_envelope.value(mid * cs, mid * sn)
            inside = vals <= s
            lo[inside] = mid[inside]
            hi[~inside] = mid[~inside]
        return float(np.max(lo))

    svals = np.linspace(B, B + 1.0, nodes)
    rvals = np.array([level_radius(s) for s in svals])
    G_bound = float(np.trapezoid(rvals, svals))
    return T, G_bound


class _IsotropicEnvelope:
    def value(self, x1, x2):
        return 0.5 * (np.asarray(x1) ** 2 + np.asarray(x2) ** 2) + 1.0
