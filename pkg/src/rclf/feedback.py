"""Feedback-law families for the chemostat and the generic constructions.

Chemostat laws (all returning the dilution offset u with D = D_s + u):

* :func:`relaxed_feedback` — harvest-matching term plus a one-sided push
  active only below the operating substrate level; enforces an absorbing
  band rather than pointwise Lyapunov decrease.
* :func:`rclf_feedback` — harvest-matching term plus a steering term sized
  from a quadratic envelope, giving pointwise decrease of the certified
  Lyapunov function.
* :func:`classical_feedback` — growth-matching family for the nominal model
  (includes the textbook D = mu(S) X / X_s law as its default shape).

Generic constructions:

* :func:`constrained_quadratic_feedback` — clipped gradient law for
  control-affine systems with a one-sided input bound.
* :func:`saturated_backstepping` with :func:`compute_backstepping_gains` —
  bounded nested-saturation recursion for disturbed triangular systems.
* :func:`patch_feedbacks` — smooth blending of region-wise laws across an
  absorbing-boundary collar and an origin ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .chemostat import ChemostatScenario, safe_exp, transformed_growth

__all__ = [
    "PsiSpec",
    "LSpec",
    "RclfFeedbackParams",
    "TriangularSystemSpec",
    "SaturatedGains",
    "BacksteppingStageTable",
    "GainSelectionError",
    "QuadraticForm",
    "relaxed_feedback",
    "relaxed_dilution_physical",
    "rclf_feedback",
    "classical_feedback",
    "dilution_matching_phi",
    "constrained_quadratic_feedback",
    "saturated_backstepping",
    "compute_backstepping_gains",
    "backstepping_stage_bounds",
    "smooth_bump",
    "patch_feedbacks",
]


@dataclass(frozen=True)
class PsiSpec:
    """One-sided push shape psi(s) = slope * max(0, -s)."""

    slope: float = 1.0

    def __post_init__(self) -> None:
        if not self.slope > 0:
            raise ValueError(f"psi slope must be positive, got {self.slope}")

    def __call__(self, s):
        return self.slope * np.maximum(0.0, -np.asarray(s, dtype=float))


@dataclass(frozen=True)
class LSpec:
    """Constant gain profile L(x) = l0 with inf L = l0 > 0."""

    l0: float = 1.0

    def __post_init__(self) -> None:
        if not self.l0 > 0:
            raise ValueError(f"gain floor l0 must be positive, got {self.l0}")

    def __call__(self, x1, x2):
        # Constant profile: broadcasting against state arrays is automatic.
        return self.l0


@dataclass(frozen=True)
class RclfFeedbackParams:
    """Steering-term parameters: band boundary, envelope scale, and the
    quadratic weight of W(x1, x2) = W_weight * (x1^2 + x2^2)."""

    x1_star: float
    M: float
    W_weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.x1_star < 0:
            raise ValueError(f"x1_star must be negative, got {self.x1_star}")
        if not (self.M > 0 and self.W_weight > 0):
            raise ValueError("M and W_weight must be positive")


def relaxed_feedback(
    scenario: ChemostatScenario, psi: PsiSpec, l: LSpec, x1, x2
):
    """Absorbing-band dilution offset.

    u = -D_s + max(0, K mu - m) G e^{x2 - x1} + L(x) psi(x1). The first
    added term matches the harvest flux, the second pushes the substrate up
    whenever it sits below the operating level; both are non-negative, so
    the total dilution D_s + u never goes negative. Independent of the
    uncertainty magnitude. Vectorized over x1, x2.
    """
    sc = scenario
    x1a = np.asarray(x1, dtype=float)
    x2a = np.asarray(x2, dtype=float)
    mu_t = transformed_growth(sc, x1a)
    harvest = np.maximum(0.0, sc.K * mu_t - sc.m) * sc.G * safe_exp(x2a - x1a)
    u = -sc.D_s + harvest + l(x1a, x2a) * psi(x1a)
    if x1a.ndim == 0 and x2a.ndim == 0:
        return float(u)
    return u


def relaxed_dilution_physical(
    scenario: ChemostatScenario, psi: PsiSpec, l: LSpec, X, S
):
    """The same law written on physical coordinates: total dilution D.

    D = (S_s/(S_i - S_s)) max(0, K mu(S) - m) X/S + L psi(ln(c S/(S_i-S))).
    Agrees with D_s + relaxed_feedback at the transformed state.
    """
    from .chemostat import growth_rate, to_transformed

    sc = scenario
    Xa = np.asarray(X, dtype=float)
    Sa = np.asarray(S, dtype=float)
    mu = growth_rate(sc.growth, Sa)
    x1 = np.log(sc.c * Sa / (sc.S_i - Sa))
    x2 = np.log(Xa / (sc.G * (sc.S_i - Sa)))
    D = (
        sc.S_s / (sc.S_i - sc.S_s) * np.maximum(0.0, sc.K * mu - sc.m) * Xa / Sa
        + l(x1, x2) * psi(x1)
    )
    if Xa.ndim == 0 and Sa.ndim == 0:
        return float(D)
    return D


def _steering_rhs(sc: ChemostatScenario, params: RclfFeedbackParams, x1c, x2):
    """Envelope bound the steering term must dominate, at clamped x1 < 0."""
    M = params.M
    ex = np.exp(x1c)
    cpe = sc.c + ex
    W = params.W_weight * (x1c**2 + np.asarray(x2, dtype=float) ** 2)
    mu_t = transformed_growth(sc, x1c)
    harvest = (sc.K * mu_t - sc.m) * sc.G * safe_exp(x2)
    term_env = W * ex / (M * cpe)
    term_unc = sc.a * sc.c * sc.S_s * np.abs(x2) * ex / (M * cpe**2)
    term_bal = -ex * np.asarray(x2, dtype=float) * (mu_t - sc.b - harvest) / (
        M * x1c * cpe
    )
    return term_env + term_unc + term_bal


def rclf_feedback(
    scenario: ChemostatScenario, params: RclfFeedbackParams, x1, x2
):
    """Pointwise-decrease dilution offset with a ramp-gated steering term.

    The steering term q vanishes for x1 >= 0, dominates the envelope bound
    for x1 <= x1_star, and ramps linearly in between; its argument is
    clamped at x1_star so the formula stays locally Lipschitz down to the
    1/x1 singularity at the origin side. Result >= -D_s. Vectorized.
    """
    sc = scenario
    x1a = np.asarray(x1, dtype=float)
    x2a = np.asarray(x2, dtype=float)
    mu_t = transformed_growth(sc, x1a)
    harvest = np.maximum(0.0, sc.K * mu_t - sc.m) * sc.G * safe_exp(x2a - x1a)
    x1c = np.minimum(x1a, params.x1_star)
    ramp = np.clip(x1a / params.x1_star, 0.0, 1.0)
    q = ramp * np.maximum(0.0, _steering_rhs(sc, params, x1c, x2a))
    u = -sc.D_s + harvest + q
    if x1a.ndim == 0 and x2a.ndim == 0:
        return float(u)
    return u


def dilution_matching_phi(scenario: ChemostatScenario) -> Callable:
    """Shape function phi(x) = (c+1)/(c+e^x): the classical growth-matching
    choice, equal in physical coordinates to D = mu(S) X / X_s."""
    c = scenario.c

    def phi(x):
        return (c + 1.0) / (c + safe_exp(x))

    return phi


_PHI_GRID = np.linspace(-6.0, 6.0, 241)


def classical_feedback(
    scenario: ChemostatScenario,
    phi: Callable,
    q_extra: Optional[Callable],
    x1,
    x2,
):
    """Growth-matching dilution offset u = -D_s + mu(x1) e^{x2} phi(x1) + q.

    Intended for the nominal model (no uncertainty, b = m = 0). phi must
    cross 1 exactly at the operating point from above: phi(0) = 1,
    phi(x) < 1 for x > 0, phi(x) > 1 for x < 0 — checked on a fixed grid,
    violations raise ValueError. ``q_extra`` (may be None) must be
    non-negative with support in x1 < 0; that is the caller's obligation.
    """
    vals = np.asarray([float(phi(x)) for x in _PHI_GRID])
    at0 = float(phi(0.0))
    if abs(at0 - 1.0) > 1e-9:
        raise ValueError(f"phi(0) must equal 1, got {at0}")
    pos = _PHI_GRID > 0
    neg = _PHI_GRID < 0
    if np.any(vals[pos] >= 1.0):
        x_bad = float(_PHI_GRID[pos][np.argmax(vals[pos] >= 1.0)])
        raise ValueError(f"phi must be < 1 for x > 0; fails at x = {x_bad}")
    if np.any(vals[neg] <= 1.0):
        x_bad = float(_PHI_GRID[neg][np.argmax(vals[neg] <= 1.0)])
        raise ValueError(f"phi must be > 1 for x < 0; fails at x = {x_bad}")
    return _classical_u(scenario, phi, q_extra, x1, x2)


def _classical_u(scenario, phi, q_extra, x1, x2):
    """classical_feedback without the phi grid check (for simulation loops)."""
    sc = scenario
    x1a = np.asarray(x1, dtype=float)
    x2a = np.asarray(x2, dtype=float)
    mu_t = transformed_growth(sc, x1a)
    u = -sc.D_s + mu_t * safe_exp(x2a) * np.asarray(phi(x1a), dtype=float)
    if q_extra is not None:
        u = u + np.asarray(q_extra(x1a, x2a), dtype=float)
    if x1a.ndim == 0 and x2a.ndim == 0:
        return float(u)
    return u


@dataclass(frozen=True)
class QuadraticForm:
    """V(x) = 1/2 x' P x with its analytic gradient P x."""

    P: np.ndarray

    def __post_init__(self) -> None:
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", P)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return 0.5 * float(x @ self.P @ x)
        return 0.5 * np.einsum("ij,jk,ik->i", x, self.P, x)

    def grad(self, x):
        # P is symmetric, so x P works for single states and row stacks.
        return np.asarray(x, dtype=float) @ self.P


def constrained_quadratic_feedback(f, g, V, gamma, a_limit: float, x):
    """Clipped gradient law u = -min(a_limit, gamma(x) * grad V(x) . g(x)).

    The result sits in [-a_limit, inf) by construction. ``V`` must expose an
    analytic gradient via a ``grad(x)`` attribute (see
    :class:`QuadraticForm`). ``gamma`` may be a callable or a constant.
    ``f`` is accepted for signature symmetry with the verifiers; the law
    itself depends only on grad V . g.
    """
    if not a_limit > 0:
        raise ValueError(f"a_limit must be positive, got {a_limit}")
    x = np.asarray(x, dtype=float)
    gv = float(gamma(x)) if callable(gamma) else float(gamma)
    descent = gv * float(np.dot(V.grad(x), np.asarray(g(x), dtype=float)))
    return -min(a_limit, descent)


@dataclass(frozen=True)
class TriangularSystemSpec:
    """Disturbed strict-feedback (triangular) system.

    dx_i/dt = f_i(d, x) + g_i(d, x) * x_{i+1} for i < n, and
    dx_n/dt = f_n(d, x) + g_n(d, x) * u.

    The structural bounds |f_i| <= min(q, L|x|) and r <= g_i (with
    g_i <= R for i < n) are spot-checked on a random validation grid at
    construction; they are what the gain selection relies on.
    """

    n: int
    fs: Sequence[Callable]
    gs: Sequence[Callable]
    q: float
    L: float
    r: float
    R: float
    box: "np.ndarray | None" = None
    validate_points: int = 200

    def __post_init__(self) -> None:
        if self.n < 1 or len(self.fs) != self.n or len(self.gs) != self.n:
            raise ValueError("need n component functions for both f and g")
        if not (self.q >= 0 and self.L >= 0 and 0 < self.r <= self.R):
            raise ValueError("require q, L >= 0 and 0 < r <= R")
        if self.validate_points:
            self._spot_check()

    def _corners(self) -> np.ndarray:
        if self.box is None:
            return np.zeros((1, 0))
        from .dynamics import CompactBox

        if isinstance(self.box, CompactBox):
            return self.box.corners()
        b = np.atleast_2d(np.asarray(self.box, dtype=float))
        return b

    def _spot_check(self) -> None:
        rng = np.random.default_rng(0)
        states = rng.uniform(-5.0, 5.0, size=(self.validate_points, self.n))
        tol = 1e-9
        for d in self._corners():
            for x in states:
                nx = float(np.linalg.norm(x))
                for i in range(self.n):
                    fi = float(self.fs[i](d, x))
                    if abs(fi) > min(self.q, self.L * nx) + tol:
                        raise ValueError(
                            f"|f_{i + 1}| = {abs(fi):.6g} exceeds "
                            f"min(q, L|x|) = {min(self.q, self.L * nx):.6g} "
                            f"at x = {x}, d = {d}"
                        )
                    gi = float(self.gs[i](d, x))
                    if gi < self.r - tol:
                        raise ValueError(
                            f"g_{i + 1} = {gi:.6g} below r = {self.r} at x = {x}"
                        )
                    if i < self.n - 1 and gi > self.R + tol:
                        raise ValueError(
                            f"g_{i + 1} = {gi:.6g} above R = {self.R} at x = {x}"
                        )

    def rhs(self, x, d, u: float) -> np.ndarray:
        """Vector field at state x, disturbance d, input u."""
        x = np.asarray(x, dtype=float)
        out = np.empty(self.n)
        for i in range(self.n):
            drive = u if i == self.n - 1 else x[i + 1]
            out[i] = float(self.fs[i](d, x)) + float(self.gs[i](d, x)) * drive
        return out


@dataclass(frozen=True)
class SaturatedGains:
    """Per-stage saturation amplitudes a_i and slopes p_i."""

    a: tuple
    p: tuple

    def __post_init__(self) -> None:
        a = tuple(float(v) for v in self.a)
        p = tuple(float(v) for v in self.p)
        if len(a) != len(p) or not a:
            raise ValueError("need matching non-empty gain lists")
        if any(v <= 0 for v in a + p):
            raise ValueError("all gains must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return len(self.a)


def saturated_backstepping(
    spec: TriangularSystemSpec, gains: SaturatedGains, x
) -> float:
    """Nested-saturation control: u = phi_n(x).

    phi_1 = -a_1 sat(p_1 x_1), phi_{i+1} = -a_{i+1} sat(p_{i+1} (x_{i+1} -
    phi_i(x))). |u| <= a_n for every state.
    """
    if gains.n != spec.n:
        raise ValueError(f"gains have {gains.n} stages, system has {spec.n}")
    x = np.asarray(x, dtype=float)
    phi = 0.0
    for i in range(spec.n):
        s = gains.p[i] * (x[i] - phi)
        phi = -gains.a[i] * min(1.0, max(-1.0, s))
    return float(phi)


class GainSelectionError(ValueError):
    """No admissible saturation amplitude at some stage."""

    def __init__(self, stage: int, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class BacksteppingStageTable:
    """Designer-supplied constants for the gain recursion.

    ``eta`` caps each stage's saturation amplitude; ``c_tilde`` sets each
    stage's offset margin (its reciprocal lower-bounds the slope p).
    ``mu1`` is the target decrease rate of the scalar first stage; ``C1``
    and ``b1`` seed the growth/bias constants that the recursion inflates
    stage by stage.
    """

    eta: tuple
    c_tilde: tuple
    mu1: float
    C1: float
    b1: float = 0.0

    def __post_init__(self) -> None:
        eta = tuple(float(v) for v in self.eta)
        ct = tuple(float(v) for v in self.c_tilde)
        if len(eta) != len(ct) or not eta:
            raise ValueError("eta and c_tilde must have equal positive length")
        if any(v <= 0 for v in eta + ct) or self.mu1 <= 0 or self.C1 <= 0:
            raise ValueError("stage constants must be positive")
        if self.b1 < 0:
            raise ValueError("b1 must be non-negative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "c_tilde", ct)


def backstepping_stage_bounds(
    spec: TriangularSystemSpec,
    table: BacksteppingStageTable,
    gains: Optional[SaturatedGains] = None,
):
    """Admissible interval and slope lower bounds per stage.

    Yields one dict per stage with keys ``a_lo``, ``a_hi``, ``p_bound``
    (the binding lower bound on p), and — when ``gains`` given — the
    propagated constants are advanced with those gains instead of the
    midpoint/1.1 defaults, so the same code path both selects and audits.
    """
    q, L, r, R = spec.q, spec.L, spec.r, spec.R
    n = spec.n
    if len(table.eta) != n:
        raise ValueError(f"stage table has {len(table.eta)} stages, system {n}")
    mu = table.mu1
    C = table.C1
    b = table.b1
    P = np.zeros((0, 0))
    k = np.zeros(0)
    rows = []
    for i in range(n):
        ct = table.c_tilde[i]
        a_lo = ct + (q + b) / r
        a_hi = table.eta[i]
        if not a_lo < a_hi:
            raise GainSelectionError(
                i + 1,
                f"stage {i + 1}: admissible amplitude interval empty "
                f"(lower bound {a_lo:.6g} >= budget {a_hi:.6g})",
            )
        if gains is not None:
            a_i, p_i = gains.a[i], gains.p[i]
        else:
            a_i = 0.5 * (a_lo + a_hi)
            p_i = None
        if i == 0:
            p_slope = (mu + L) / (a_i * r)
        else:
            K_min = float(np.min(np.linalg.eigvalsh(P)))
            P_norm = float(np.linalg.norm(P, 2))
            nk = float(np.linalg.norm(k))
            rhs = (
                mu / 2.0
                + L
                + C * nk
                + (C * P_norm + C * nk + L + L * nk) ** 2 / (2.0 * mu * K_min)
            )
            p_slope = rhs / (ct * r + q + b)
        p_bound = max(1.0 / ct, p_slope)
        if p_i is None:
            p_i = 1.1 * p_bound
        rows.append(
            {
                "stage": i + 1,
                "a_lo": a_lo,
                "a_hi": a_hi,
                "a": a_i,
                "p_bound": p_bound,
                "p": p_i,
            }
        )
        # Propagate the certified-subsystem constants for the next stage.
        P_new = np.zeros((i + 1, i + 1))
        if i:
            P_new[:i, :i] = P + np.outer(k, k)
            P_new[:i, i] = -k
            P_new[i, :i] = -k
        P_new[i, i] = 1.0
        P = P_new
        k = -a_i * p_i * np.concatenate([-k, [1.0]])
        if i >= 1:
            mu = mu / 2.0
        C = 2.0 * (C + L) + C * (a_i + 1.0) + R * (a_i + 1.0)
        b = a_i * p_i * (q + R * a_i + R * ct + b)
    return rows


def compute_backstepping_gains(
    spec: TriangularSystemSpec, table: BacksteppingStageTable
) -> SaturatedGains:
    """Deterministic gain selection: midpoint amplitudes, 1.1x slopes.

    Each stage's amplitude is the midpoint of its admissible interval and
    its slope 1.1 times the larger of the two lower bounds (offset
    reciprocal; decrease-rate requirement). Raises
    :class:`GainSelectionError` naming the first stage whose interval is
    empty.
    """
    rows = backstepping_stage_bounds(spec, table, gains=None)
    return SaturatedGains(
        a=tuple(row["a"] for row in rows), p=tuple(row["p"] for row in rows)
    )


def _phi_tail(x: float) -> float:
    return math.exp(-1.0 / x) if x > 0 else 0.0


def smooth_bump(x: float) -> float:
    """C-infinity monotone step: 0 for x <= 0, 1 for x >= 1."""
    a = _phi_tail(x)
    b = _phi_tail(1.0 - x)
    if a == 0.0:
        return 0.0
    if b == 0.0:
        return 1.0
    return a / (a + b)


def patch_feedbacks(
    k1: Callable,
    k2: Callable,
    k_tilde: Callable,
    h: Callable,
    eps: float,
    r_radius: float,
    bump: Optional[Callable],
    x,
    k3: Optional[Callable] = None,
):
    """Blend region-wise laws into one continuous global law.

    Exclusive regions: ``k_tilde`` on the origin ball |x| < r_radius;
    ``k2`` outside the doubled ball where h < eps/5; ``k3`` on the middle
    band 2eps/5 < h < 3eps/5; ``k1`` where h > 4eps/5. Transition bands use
    convex bump blends, so the output stays in any convex input set
    containing the sub-laws' values. ``k3`` defaults to ``k1`` when not
    given (any law admissible on the overlap band works there).
    """
    if eps <= 0 or r_radius <= 0:
        raise ValueError("eps and r_radius must be positive")
    if bump is None:
        bump = smooth_bump
    if k3 is None:
        k3 = k1
    x = np.asarray(x, dtype=float)
    nx = float(np.linalg.norm(x))
    hx = float(h(x))

    def outer_law() -> float:
        if hx < eps / 5.0:
            return float(k2(x))
        if hx <= 2.0 * eps / 5.0:
            w = float(bump(5.0 * hx / eps - 1.0))
            return (1.0 - w) * float(k2(x)) + w * float(k3(x))
        if hx < 3.0 * eps / 5.0:
            return float(k3(x))
        if hx <= 4.0 * eps / 5.0:
            w = float(bump(5.0 * hx / eps - 3.0))
            return (1.0 - w) * float(k3(x)) + w * float(k1(x))
        return float(k1(x))

    if nx < r_radius:
        return float(k_tilde(x))
    if nx <= 2.0 * r_radius:
        # The construction assumes the doubled ball sits inside {h < eps/5},
        # where k2 is the active outer law; the blend follows that literally.
        w = float(bump((nx**2 - r_radius**2) / (3.0 * r_radius**2)))
        return (1.0 - w) * float(k_tilde(x)) + w * float(k2(x))
    return outer_law()
