"""Disturbed ODE simulation with fixed-step RK4.

The integrator is deliberately fixed-step: disturbance signals are piecewise
constant, and Monte-Carlo stability suites need bit-reproducible trajectories,
which adaptive error control would break. The step is validated to divide the
disturbance switch spacing exactly so no step straddles a switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from ._fmt import csv_line

__all__ = [
    "BLOWUP_BOUND",
    "CompactBox",
    "DisturbanceSignal",
    "Trajectory",
    "integrate_rk4",
    "sample_disturbance",
    "constant_disturbance",
    "sat",
    "first_entry_time",
    "trajectory_to_csv",
    "write_trajectory_csv",
]

#: States with any coordinate beyond this magnitude mark the trajectory as
#: diverged. A flag rather than an exception: counterexample searches need to
#: observe escape, not abort on it.
BLOWUP_BOUND = 1.0e12

RightHandSide = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def sat(x):
    """Unit saturation: identity on [-1, 1], clamped outside.

    Accepts scalars or arrays; scalar input returns a plain float. The map is
    odd, non-decreasing, and 1-Lipschitz.
    """
    if np.isscalar(x):
        return float(min(1.0, max(-1.0, x)))
    return np.clip(np.asarray(x, dtype=float), -1.0, 1.0)


@dataclass(frozen=True)
class CompactBox:
    """Axis-aligned compact box of admissible disturbance values.

    Attributes:
        lower: per-coordinate lower bounds.
        upper: per-coordinate upper bounds, componentwise >= ``lower``.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or hi.shape != lo.shape:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(
                f"degenerate box: lower[{bad}]={lo[bad]} > upper[{bad}]={hi[bad]}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, point, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(
            np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol)
        )

    def corners(self) -> np.ndarray:
        """All 2^dim vertices, one per row (used by worst-corner sweeps)."""
        n = self.dim
        out = np.empty((2**n, n))
        for i in range(2**n):
            for j in range(n):
                out[i, j] = self.upper[j] if (i >> j) & 1 else self.lower[j]
        return out


@dataclass(frozen=True)
class DisturbanceSignal:
    """Piecewise-constant disturbance, right-continuous at switch times.

    Attributes:
        switch_times: strictly ascending, first equal to 0, last < horizon.
        values: one disturbance vector per interval, shape (m, dim).
        horizon: end of the signal's domain [0, horizon].
    """

    switch_times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        st = np.atleast_1d(np.asarray(self.switch_times, dtype=float))
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if st.ndim != 1 or st.size == 0:
            raise ValueError("switch_times must be a non-empty 1-d array")
        if st[0] != 0.0:
            raise ValueError(f"first switch time must be 0, got {st[0]}")
        if st.size > 1 and np.any(np.diff(st) <= 0):
            raise ValueError("switch_times must be strictly ascending")
        if vals.shape[0] != st.size:
            raise ValueError(
                f"{st.size} intervals but {vals.shape[0]} disturbance values"
            )
        hz = float(self.horizon)
        if not st[-1] < hz:
            raise ValueError(
                f"last switch time {st[-1]} must precede horizon {hz}"
            )
        object.__setattr__(self, "switch_times", st)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "horizon", hz)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        """Value of the interval containing ``t`` (right-continuous)."""
        idx = int(np.searchsorted(self.switch_times, t, side="right")) - 1
        if idx < 0:
            idx = 0
        return self.values[idx]


def constant_disturbance(value, horizon: float) -> DisturbanceSignal:
    """Single-interval signal holding ``value`` on [0, horizon]."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return DisturbanceSignal(np.zeros(1), v[None, :], horizon)


def sample_disturbance(
    box: CompactBox, switch_dt: float, horizon: float, seed: int
) -> DisturbanceSignal:
    """Draw a uniform piecewise-constant disturbance over ``box``.

    The signal holds an i.i.d. uniform draw on each of
    ``ceil(horizon / switch_dt)`` intervals of length ``switch_dt``.
    Deterministic for a fixed seed.
    """
    if switch_dt <= 0:
        raise ValueError(f"switch_dt must be positive, got {switch_dt}")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    # The small fuzz keeps exact multiples from rounding up an extra interval
    # (e.g. 1.1 / 0.1 = 11.000000000000002 in binary floating point).
    count = int(math.ceil(horizon / switch_dt - 1e-9))
    count = max(count, 1)
    rng = np.random.default_rng(seed)
    values = rng.uniform(box.lower, box.upper, size=(count, box.dim))
    times = np.arange(count, dtype=float) * switch_dt
    return DisturbanceSignal(times, values, horizon)


@dataclass(frozen=True)
class Trajectory:
    """A sampled solution of the disturbed ODE.

    Attributes:
        times: sample times, uniformly spaced by the integration step apart
            from a possibly shorter final interval landing on t_end.
        states: one state per sample time, shape (len(times), n).
        inputs: optional applied control per sample (filled in by closed-loop
            drivers after integration).
        diverged: set when a state coordinate passed the blow-up bound; the
            trajectory is truncated at the last recorded sample.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: Optional[np.ndarray] = None
    diverged: bool = False

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        if t.ndim != 1 or x.shape[0] != t.size:
            raise ValueError("times and states must have matching lengths")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly ascending")
        u = self.inputs
        if u is not None:
            u = np.asarray(u, dtype=float)
            if u.shape[0] != t.size:
                raise ValueError("inputs must have one entry per sample")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "inputs", u)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def with_inputs(self, inputs) -> "Trajectory":
        return replace(self, inputs=np.asarray(inputs, dtype=float))


def _validate_step_against_switches(
    step: float, d: DisturbanceSignal
) -> None:
    if d.switch_times.size < 2:
        return
    spacings = np.diff(d.switch_times)
    ratios = spacings / step
    bad = np.abs(ratios - np.round(ratios)) > 1e-9 * np.maximum(1.0, ratios)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"step {step} does not divide disturbance switch spacing "
            f"{spacings[i]} (interval {i})"
        )


def integrate_rk4(
    rhs: RightHandSide,
    x0,
    d: Optional[DisturbanceSignal],
    t_end: float,
    step: float,
) -> Trajectory:
    """Integrate ``x' = rhs(t, x, d(t))`` with classical fixed-step RK4.

    The disturbance is held constant over each step at the value of the
    interval containing the step midpoint; since the step must divide the
    switch spacing, full steps never straddle a switch. Pass ``d=None`` for
    an autonomous run (the rhs then receives an empty disturbance vector).

    Returns a :class:`Trajectory`; if any state coordinate exceeds
    ``BLOWUP_BOUND`` the trajectory is truncated there with ``diverged=True``.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    if d is not None:
        _validate_step_against_switches(step, d)
        if t_end > d.horizon * (1 + 1e-12) + 1e-12:
            raise ValueError(
                f"t_end {t_end} exceeds disturbance horizon {d.horizon}"
            )

    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    empty = np.empty(0)

    n_full = int(math.floor(t_end / step + 1e-9))
    rem = t_end - n_full * step
    if rem <= 1e-9 * step:
        rem = 0.0

    times = [0.0]
    states = [x.copy()]
    diverged = False

    def advance(t: float, h: float, x: np.ndarray) -> np.ndarray:
        dv = d.value_at(t + 0.5 * h) if d is not None else empty
        k1 = rhs(t, x, dv)
        k2 = rhs(t + 0.5 * h, x + (0.5 * h) * k1, dv)
        k3 = rhs(t + 0.5 * h, x + (0.5 * h) * k2, dv)
        k4 = rhs(t + h, x + h * k3, dv)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    steps = [(i * step, step) for i in range(n_full)]
    if rem > 0.0:
        steps.append((n_full * step, rem))

    for t, h in steps:
        x_new = advance(t, h, x)
        if not np.all(np.isfinite(x_new)):
            diverged = True
            break
        x = x_new
        times.append(t + h)
        states.append(x.copy())
        if np.max(np.abs(x)) > BLOWUP_BOUND:
            diverged = True
            break

    return Trajectory(
        np.asarray(times), np.vstack(states), inputs=None, diverged=diverged
    )


def first_entry_time(
    traj: Trajectory, indicator: Callable[[np.ndarray], float], threshold: float
) -> Optional[float]:
    """Earliest time the indicator drops to ``threshold`` along a trajectory.

    Returns the smallest stored time t with ``indicator(x(t)) <= threshold``,
    refined by linear interpolation against the preceding sample, or ``None``
    if the trajectory never satisfies the condition. Interpolation only: the
    result feeds coarse bound comparisons, not root polishing.
    """
    vals = np.array([float(indicator(s)) for s in traj.states])
    hits = np.nonzero(vals <= threshold)[0]
    if hits.size == 0:
        return None
    i = int(hits[0])
    if i == 0:
        return float(traj.times[0])
    t0, t1 = traj.times[i - 1], traj.times[i]
    v0, v1 = vals[i - 1], vals[i]
    if v1 == v0:
        return float(t1)
    frac = (threshold - v0) / (v1 - v0)
    return float(t0 + frac * (t1 - t0))


def trajectory_to_csv(traj: Trajectory) -> str:
    """Render a trajectory as CSV text: header ``t,x1,...,xn[,u]``."""
    n = traj.dim
    header = ["t"] + [f"x{i + 1}" for i in range(n)]
    if traj.inputs is not None:
        header.append("u")
    lines = [",".join(header)]
    for i in range(traj.times.size):
        row = [traj.times[i], *traj.states[i]]
        if traj.inputs is not None:
            row.append(traj.inputs[i])
        lines.append(csv_line(row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trajectory_to_csv(traj))
