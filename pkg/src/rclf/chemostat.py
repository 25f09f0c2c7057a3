"""Uncertain chemostat model, hypotheses, and log-coordinate transform.

The model tracks biomass X and substrate S under dilution control D with a
state-dependent growth-rate uncertainty that vanishes at the operating
substrate level S_s. All closed-loop simulation happens in log coordinates
(x1, x2), where the biological domain boundaries S in {0, S_i} and X = 0 map
to infinity and cannot be crossed by the integrator; physical trajectories
are recovered by :func:`from_transformed` for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConfigError",
    "HypothesisError",
    "GrowthModel",
    "ChemostatScenario",
    "S2Certificate",
    "growth_rate",
    "mu_max",
    "peak_substrate",
    "solve_equilibrium",
    "check_S2",
    "physical_rhs",
    "to_transformed",
    "from_transformed",
    "transformed_rhs",
    "transformed_growth",
    "uncertainty_term",
    "safe_exp",
    "scenario_from_dict",
    "load_scenario",
]

GROWTH_KINDS = ("monod", "haldane", "generalized_haldane")


class ConfigError(ValueError):
    """A scenario config failed to parse or validate."""


class HypothesisError(ValueError):
    """A standing hypothesis fails for the given scenario.

    Carries the violated inequality (as text) and a witness substrate level.
    """

    def __init__(self, inequality: str, witness: float, message: str):
        super().__init__(message)
        self.inequality = inequality
        self.witness = float(witness)


def safe_exp(z):
    """exp with the argument clipped to +-700 to avoid overflow warnings."""
    return np.exp(np.clip(z, -700.0, 700.0))


@dataclass(frozen=True)
class GrowthModel:
    """Specific growth rate mu(S).

    Parameters
    ----------
    kind:
        One of ``monod``, ``haldane``, ``generalized_haldane``.
    mu_max_scale:
        Numerator coefficient (the Monod asymptote).
    K1:
        Affine denominator coefficient (> 0).
    K2:
        Inhibition coefficient multiplying ``S**exponent`` (>= 0; ignored
        for Monod).
    exponent:
        Inhibition exponent (>= 1); fixed at 2 for plain Haldane.

    The rate is ``mu(S) = mu_max_scale * S / (K1 + S + K2 * S**exponent)``
    for S > 0 and exactly 0 for S <= 0.
    """

    kind: str
    mu_max_scale: float
    K1: float
    K2: float = 0.0
    exponent: float = 2.0

    def __post_init__(self) -> None:
        kind = str(self.kind).strip().lower()
        aliases = {"generalizedhaldane": "generalized_haldane"}
        kind = aliases.get(kind, kind)
        if kind not in GROWTH_KINDS:
            raise ConfigError(
                f"unknown growth kind {self.kind!r}; expected one of {GROWTH_KINDS}"
            )
        object.__setattr__(self, "kind", kind)
        if not self.mu_max_scale > 0:
            raise ConfigError("growth.mu_max_scale must be positive")
        if not self.K1 > 0:
            raise ConfigError("growth.K1 must be positive")
        if self.K2 < 0:
            raise ConfigError("growth.K2 must be non-negative")
        if kind == "monod":
            object.__setattr__(self, "K2", 0.0)
            object.__setattr__(self, "exponent", 2.0)
        elif kind == "haldane":
            object.__setattr__(self, "exponent", 2.0)
        elif self.exponent < 1:
            raise ConfigError("growth.exponent must be >= 1")


def growth_rate(model: GrowthModel, S):
    """Evaluate mu(S); vectorized, zero for S <= 0."""
    arr = np.asarray(S, dtype=float)
    Sp = np.maximum(arr, 0.0)
    denom = model.K1 + Sp + model.K2 * np.power(Sp, model.exponent)
    out = model.mu_max_scale * Sp / denom
    if arr.ndim == 0:
        return float(out)
    return out


def peak_substrate(model: GrowthModel) -> float:
    """Substrate level maximizing mu, or inf when mu is monotone increasing."""
    if model.K2 == 0.0:
        return math.inf
    g = model.exponent
    if g <= 1.0:
        return math.inf
    return (model.K1 / (model.K2 * (g - 1.0))) ** (1.0 / g)


def mu_max(model: GrowthModel) -> float:
    """Supremum of mu over S > 0, in closed form per kind."""
    if model.K2 == 0.0:
        return model.mu_max_scale
    g = model.exponent
    if g == 1.0:
        return model.mu_max_scale / (1.0 + model.K2)
    if g < 1.0:  # unreachable after validation, kept for safety
        return model.mu_max_scale
    s_peak = peak_substrate(model)
    # At the peak, K2 * s^g = K1 / (g - 1), so the denominator collapses.
    denom = model.K1 * g / (g - 1.0) + s_peak
    return model.mu_max_scale * s_peak / denom


@dataclass(frozen=True)
class ChemostatScenario:
    """Physical chemostat parameters plus the derived operating point.

    Attributes
    ----------
    S_i, K, b, m, D_s:
        Feed substrate, yield factor, mortality, maintenance (sign free),
        nominal dilution rate.
    a:
        Uncertainty magnitude: disturbance components range over [0, a].
    S_s, X_s:
        Operating substrate and biomass (mortality-corrected equilibrium).
    c, G:
        Log-transform constants ``c = S_i/S_s - 1`` and
        ``G = D_s / (K (D_s + b) - m)``.
    growth:
        The growth-rate model.
    """

    S_i: float
    K: float
    b: float
    m: float
    D_s: float
    a: float
    S_s: float
    X_s: float
    c: float
    G: float
    growth: GrowthModel

    def __post_init__(self) -> None:
        if not (0 < self.S_s < self.S_i):
            raise ValueError(
                f"operating substrate S_s={self.S_s} must lie in (0, S_i={self.S_i})"
            )
        if self.X_s <= 0:
            raise ValueError(f"operating biomass X_s={self.X_s} must be positive")
        if self.K <= 0 or self.D_s <= 0 or self.b < 0 or self.a < 0:
            raise ValueError("require K > 0, D_s > 0, b >= 0, a >= 0")
        if self.c <= 0 or self.G <= 0:
            raise ValueError("transform constants c, G must be positive")
        mu_err = abs(growth_rate(self.growth, self.S_s) - (self.D_s + self.b))
        if mu_err > 1e-10:
            raise ValueError(
                f"mu(S_s) must equal D_s + b; off by {mu_err:.3e}"
            )
        denom = self.K * (self.D_s + self.b) - self.m
        x_err = abs(self.X_s - self.D_s * (self.S_i - self.S_s) / denom)
        if x_err > 1e-10:
            raise ValueError(f"X_s inconsistent with the rest points: off by {x_err:.3e}")

    def with_uncertainty(self, a: float) -> "ChemostatScenario":
        return replace(self, a=float(a))


def solve_equilibrium(
    S_i: float,
    K: float,
    b: float,
    m: float,
    D_s: float,
    growth: GrowthModel,
    branch_hint: str = "descending",
) -> ChemostatScenario:
    """Locate the operating point S_s solving mu(S_s) = D_s + b on (0, S_i).

    Inhibited (Haldane-type) kinetics can admit two roots, one on each side
    of the growth peak; ``branch_hint`` in {"ascending", "descending"}
    selects which (descending by default, i.e. past the peak). The root is
    bracketed per branch and refined by Brent's method.

    Raises
    ------
    ValueError
        If ``K (D_s + b) - m <= 0``, the selected branch contains no root,
        or the resulting biomass X_s is non-positive.
    """
    from scipy.optimize import brentq

    if branch_hint not in ("ascending", "descending"):
        raise ValueError(
            f"branch_hint must be 'ascending' or 'descending', got {branch_hint!r}"
        )
    denom = K * (D_s + b) - m
    if denom <= 0:
        raise ValueError(
            f"K (D_s + b) - m = {denom} must be positive for a feasible biomass"
        )
    target = D_s + b

    def g(S: float) -> float:
        return growth_rate(growth, S) - target

    s_peak = peak_substrate(growth)
    lo = S_i * 1e-12
    hi = S_i * (1.0 - 1e-12)
    if math.isinf(s_peak) or s_peak >= hi:
        bracket = (lo, hi)  # monotone increasing on the whole interval
    elif branch_hint == "ascending":
        bracket = (lo, s_peak)
    else:
        bracket = (s_peak, hi)

    ga, gb = g(bracket[0]), g(bracket[1])
    if ga == 0.0:
        S_s = bracket[0]
    elif gb == 0.0:
        S_s = bracket[1]
    elif ga * gb > 0:
        raise ValueError(
            f"no equilibrium on the {branch_hint} branch: mu - (D_s + b) has "
            f"signs ({ga:+.3e}, {gb:+.3e}) at the bracket ends "
            f"({bracket[0]:.6g}, {bracket[1]:.6g})"
        )
    else:
        S_s = float(brentq(g, bracket[0], bracket[1], xtol=1e-14, rtol=8.9e-16))

    G = D_s / denom
    X_s = G * (S_i - S_s)
    if X_s <= 0:
        raise ValueError(f"computed biomass X_s = {X_s} is non-positive")
    c = S_i / S_s - 1.0
    return ChemostatScenario(
        S_i=float(S_i),
        K=float(K),
        b=float(b),
        m=float(m),
        D_s=float(D_s),
        a=0.0,
        S_s=S_s,
        X_s=X_s,
        c=c,
        G=G,
        growth=growth,
    )


@dataclass(frozen=True)
class S2Certificate:
    """Grid-certified growth-margin constants.

    ``p`` bounds both K mu - m >= p and mu - b >= 2p on [S_plus, S_i];
    ``x1_star`` is the (negative) log-coordinate boundary below the
    operating point down to which the stronger absorbing-band conditions
    hold, shrunk by one grid cell for continuum margin.
    """

    S_plus: float
    p: float
    x1_plus: float
    x1_star: float


def check_S2(scenario: ChemostatScenario, grid_points: int = 2000) -> S2Certificate:
    """Search the growth-margin constants on a fine substrate grid.

    Takes p as half the best achievable suffix minimum of
    ``min(K mu - m, (mu - b)/2)`` (halving absorbs grid error), with S_plus
    the smallest grid start below S_s attaining it. Then walks a grid of the
    log coordinate over [x1_plus, 0) to find the lowest band boundary
    x1_star where the uncertainty bound, K mu - m >= p, and mu - b >= 2p
    all hold from there up.

    Raises
    ------
    HypothesisError
        If no positive margin exists (naming the violated inequality and a
        witness substrate level), or no admissible band boundary exists.
    """
    sc = scenario
    S = np.linspace(sc.S_i / grid_points, sc.S_i, grid_points)
    mu = growth_rate(sc.growth, S)
    margin = np.minimum(sc.K * mu - sc.m, (mu - sc.b) / 2.0)
    suffix = np.minimum.accumulate(margin[::-1])[::-1]
    below = S < sc.S_s
    if not np.any(below):
        raise HypothesisError(
            "S_plus < S_s", sc.S_s, "no grid point below the operating substrate"
        )
    best = float(np.max(suffix[below]))
    if best <= 0:
        # Name the inequality that binds at the worst point of the best start.
        i0 = int(np.argmax(suffix[below]))
        tail = slice(i0, None)
        j = i0 + int(np.argmin(margin[tail]))
        if sc.K * mu[j] - sc.m <= (mu[j] - sc.b) / 2.0:
            ineq = "K*mu(S) - m >= p"
        else:
            ineq = "mu(S) - b >= 2*p"
        raise HypothesisError(
            ineq,
            float(S[j]),
            f"growth-margin hypothesis fails: {ineq} has no positive margin "
            f"(witness S = {S[j]:.6g}, margin {margin[j]:.3e})",
        )
    p = 0.5 * best
    i_plus = int(np.argmax((suffix >= best) & below))
    S_plus = float(S[i_plus])
    x1_plus = math.log(S_plus * sc.c / (sc.S_i - S_plus))

    xg = np.linspace(x1_plus, 0.0, grid_points, endpoint=False)
    cell = float(xg[1] - xg[0])
    ex = np.exp(xg)
    mu_t = transformed_growth(sc, xg)
    cond_unc = sc.a * sc.c * sc.S_s / (sc.c + ex) * np.maximum(0.0, 1.0 - ex) <= p
    cond_km = sc.K * mu_t - sc.m >= p
    cond_mb = mu_t - sc.b >= 2.0 * p
    good = cond_unc & cond_km & cond_mb
    suffix_ok = np.logical_and.accumulate(good[::-1])[::-1]
    if not np.any(suffix_ok):
        raise HypothesisError(
            "absorbing band",
            float(sc.S_s),
            "no admissible absorbing-band boundary below the operating point",
        )
    first = int(np.argmax(suffix_ok))
    x1_star = float(xg[first] + cell)
    if not x1_star < 0.0:
        raise HypothesisError(
            "x1_star < 0",
            float(sc.S_s),
            "absorbing-band boundary collapsed onto the operating point",
        )
    return S2Certificate(S_plus=S_plus, p=p, x1_plus=x1_plus, x1_star=x1_star)


def uncertainty_term(scenario: ChemostatScenario, S, d1, d2):
    """State-dependent growth perturbation; vanishes at S = S_s.

    For S above the operating point only the d1 branch acts (non-negative);
    below it, d2 subtracts the shortfall once more, so the sign can flip.
    """
    sc = scenario
    dev = np.asarray(S, dtype=float) - sc.S_s
    return d1 * np.abs(dev) - d2 * np.maximum(0.0, -dev)


def physical_rhs(scenario: ChemostatScenario, X, S, D, d1, d2):
    """Time derivatives (dX/dt, dS/dt) of the physical model.

    Biomass grows at the perturbed rate less dilution and mortality;
    substrate is fed at dilution D and consumed with yield K, less the
    maintenance return m X.

    Raises
    ------
    ValueError
        If X <= 0 or S outside (0, S_i) (use the transformed dynamics for
        simulation; the physical form is for point evaluation and checks).
    """
    sc = scenario
    Xa = np.asarray(X, dtype=float)
    Sa = np.asarray(S, dtype=float)
    if np.any(Xa <= 0) or np.any(Sa <= 0) or np.any(Sa >= sc.S_i):
        raise ValueError(
            f"physical state out of domain: need X > 0 and 0 < S < S_i, "
            f"got X={X}, S={S}"
        )
    return _physical_rhs_raw(sc, Xa, Sa, D, d1, d2)


def _physical_rhs_raw(scenario: ChemostatScenario, X, S, D, d1, d2):
    """Same formulas without domain validation (for RK4 stage evaluations)."""
    sc = scenario
    mu = growth_rate(sc.growth, S)
    delta = uncertainty_term(sc, S, d1, d2)
    dX = (mu + delta - D - sc.b) * X
    dS = D * (sc.S_i - S) - sc.K * mu * X + sc.m * X
    return dX, dS


def to_transformed(scenario: ChemostatScenario, X, S):
    """Log coordinates (x1, x2) of a physical state (X, S).

    x1 measures substrate relative to S_s (zero at the operating point,
    -inf at washout, +inf at the feed level); x2 measures biomass against
    the slaved profile G (S_i - S).
    """
    sc = scenario
    Xa = np.asarray(X, dtype=float)
    Sa = np.asarray(S, dtype=float)
    if np.any(Xa <= 0) or np.any(Sa <= 0) or np.any(Sa >= sc.S_i):
        raise ValueError(
            f"physical state out of domain: need X > 0 and 0 < S < S_i, "
            f"got X={X}, S={S}"
        )
    x1 = np.log(sc.c * Sa / (sc.S_i - Sa))
    x2 = np.log(Xa / (sc.G * (sc.S_i - Sa)))
    if np.asarray(X).ndim == 0 and np.asarray(S).ndim == 0:
        return float(x1), float(x2)
    return x1, x2


def from_transformed(scenario: ChemostatScenario, x1, x2):
    """Physical state (X, S) of log coordinates; inverse of to_transformed."""
    sc = scenario
    S = sc.S_i / (1.0 + sc.c * safe_exp(-np.asarray(x1, dtype=float)))
    X = sc.G * (sc.S_i - S) * safe_exp(np.asarray(x2, dtype=float))
    if np.asarray(x1).ndim == 0 and np.asarray(x2).ndim == 0:
        return float(X), float(S)
    return X, S


def transformed_growth(scenario: ChemostatScenario, x1):
    """Growth rate as a function of the log substrate coordinate."""
    S = scenario.S_i / (1.0 + scenario.c * safe_exp(-np.asarray(x1, dtype=float)))
    return growth_rate(scenario.growth, S)


def transformed_rhs(scenario: ChemostatScenario, x1, x2, u, d1, d2):
    """Time derivatives (dx1/dt, dx2/dt) in log coordinates.

    The control enters only the substrate coordinate; the biomass
    coordinate sees the perturbed growth balance. Vectorized over
    broadcastable state/input arrays.

    Raises
    ------
    ValueError
        If any control value lies below -D_s (total dilution cannot be
        negative).
    """
    sc = scenario
    x1a = np.asarray(x1, dtype=float)
    x2a = np.asarray(x2, dtype=float)
    ua = np.asarray(u, dtype=float)
    if np.any(ua < -sc.D_s - 1e-12):
        raise ValueError(
            f"control u={u} below the admissible floor -D_s = {-sc.D_s}"
        )
    ex1 = safe_exp(x1a)
    mu_t = transformed_growth(sc, x1a)
    harvest = (sc.K * mu_t - sc.m) * sc.G * safe_exp(x2a)
    dev = sc.c * sc.S_s / (sc.c + ex1)
    delta = d1 * dev * np.abs(ex1 - 1.0) - d2 * dev * np.maximum(0.0, 1.0 - ex1)
    dx1 = (sc.c * safe_exp(-x1a) + 1.0) * (sc.D_s + ua - harvest)
    dx2 = mu_t + delta - sc.b - harvest
    if x1a.ndim == 0 and x2a.ndim == 0 and np.asarray(u).ndim == 0:
        return float(dx1), float(dx2)
    return dx1, dx2


# ---------------------------------------------------------------------------
# Scenario config parsing (TOML sections [growth], [chemostat], [uncertainty]).


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"missing key '{key}' in section [{section}]")
    return table[key]


def _as_float(value, section: str, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(
            f"key '{key}' in section [{section}] must be a number, got {value!r}"
        )
    return float(value)


def scenario_from_dict(doc: dict) -> ChemostatScenario:
    """Build a validated scenario from parsed config tables.

    Expects sections [growth], [chemostat], and optionally [uncertainty].
    Raises :class:`ConfigError` naming the offending section/key.
    """
    for section in ("growth", "chemostat"):
        if section not in doc:
            raise ConfigError(f"missing section [{section}]")
    g = doc["growth"]
    growth = GrowthModel(
        kind=str(_require(g, "growth", "kind")),
        mu_max_scale=_as_float(_require(g, "growth", "mu_max_scale"), "growth", "mu_max_scale"),
        K1=_as_float(_require(g, "growth", "K1"), "growth", "K1"),
        K2=_as_float(g.get("K2", 0.0), "growth", "K2"),
        exponent=_as_float(g.get("exponent", 2.0), "growth", "exponent"),
    )
    ch = doc["chemostat"]
    branch = ch.get("branch_hint", "descending")
    scenario = solve_equilibrium(
        S_i=_as_float(_require(ch, "chemostat", "S_i"), "chemostat", "S_i"),
        K=_as_float(_require(ch, "chemostat", "K"), "chemostat", "K"),
        b=_as_float(_require(ch, "chemostat", "b"), "chemostat", "b"),
        m=_as_float(_require(ch, "chemostat", "m"), "chemostat", "m"),
        D_s=_as_float(_require(ch, "chemostat", "D_s"), "chemostat", "D_s"),
        growth=growth,
        branch_hint=str(branch),
    )
    unc = doc.get("uncertainty", {})
    a = _as_float(unc.get("a", 0.0), "uncertainty", "a")
    if a < 0:
        raise ConfigError("key 'a' in section [uncertainty] must be >= 0")
    return scenario.with_uncertainty(a)


def load_scenario(path) -> ChemostatScenario:
    """Parse a TOML scenario file into a validated ChemostatScenario."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return scenario_from_dict(doc)
