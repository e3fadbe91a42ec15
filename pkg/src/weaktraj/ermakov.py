"""Classical guiding trajectories from the Ermakov system.

Each axis of the oscillator is handled by integrating the amplitude/phase
pair ``(alpha, alpha', phi)`` of

    alpha'' / alpha + V(t) = c0**2 / alpha**4,     phi' = c0 / alpha**2,

with ``c0 = 2 hbar``.  The classical path is then rebuilt in closed form,

    q(t) = alpha(t) * (c1 cos(phi(t) - phi_ref) + c2 sin(phi(t) - phi_ref)),

so one integration per axis serves every Gaussian branch that shares the
same initial width.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import AmplitudeCollapse, OutOfRange, StepFailure

AXES = ("x", "y")

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_ALPHA_FLOOR = 1e-8
# amplitude growth factor that triggers the boundedness warning
GROWTH_WARNING = 100.0


def _axis_index(axis):
    if isinstance(axis, str):
        return AXES.index(axis)
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0, 1, 'x' or 'y', got {axis!r}")
    return int(axis)


def _pair(value, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (2,))
    return tuple(float(a) for a in arr)


@dataclass(frozen=True)
class OscillatorParams:
    """Mass, hbar and the per-axis drive ``V_j(t) = v_j - kappa_j cos(2 omega_j t)``.

    Scalars passed for ``v``, ``kappa`` or ``omega`` are applied to both axes.
    An undriven axis needs ``v_j >= 0``; ``v_j = 0`` is a free particle, for
    which ``alpha0`` must be given explicitly.
    """

    mass: float = 1.0
    hbar: float = 1.0
    v: tuple = (1.0, 1.0)
    kappa: tuple = (0.0, 0.0)
    omega: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "hbar", float(self.hbar))
        for name in ("v", "kappa", "omega"):
            object.__setattr__(self, name, _pair(getattr(self, name), name))
        problems = []
        if not self.mass > 0:
            problems.append("mass must be > 0")
        if not self.hbar > 0:
            problems.append("hbar must be > 0")
        for j, axis in enumerate(AXES):
            if self.omega[j] < 0:
                problems.append(f"omega_{axis} must be >= 0")
            if self.kappa[j] == 0 and not self.v[j] >= 0:
                problems.append(f"static axis {axis} needs v_{axis} >= 0")
        if problems:
            raise ValueError("; ".join(problems))

    def V(self, axis, t):
        j = _axis_index(axis)
        return self.v[j] - self.kappa[j] * np.cos(2.0 * self.omega[j] * np.asarray(t, dtype=float))

    def static_alpha(self, axis):
        """Width parameter of the static fixed point, ``alpha**4 = 4 hbar**2 / v``."""
        j = _axis_index(axis)
        v_eff = self.v[j] - self.kappa[j] if self.omega[j] == 0 else self.v[j]
        if v_eff <= 0:
            raise ValueError(f"no static fixed point on axis {AXES[j]} (v <= 0)")
        return float(np.sqrt(2.0 * self.hbar / np.sqrt(v_eff)))

    def as_dict(self):
        return {
            "mass": self.mass,
            "hbar": self.hbar,
            "v": list(self.v),
            "kappa": list(self.kappa),
            "omega": list(self.omega),
        }


def potential(params: OscillatorParams, axis, t):
    """Squared instantaneous frequency ``V_j(t)`` on one axis."""
    return params.V(axis, t)


@dataclass(frozen=True)
class ErmakovState:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    alpha: np.ndarray
    alpha_dot: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class _AmplitudeSolution:
    ts: np.ndarray  # increasing
    ys: np.ndarray  # (3, n) rows: alpha, alpha', phi
    sol: object  # scipy OdeSolution
    t_ref: float
    memo: dict = field(default_factory=dict, compare=False, repr=False)

    def at_scalar(self, t):
        # streamline stages and density checks revisit the same times
        hit = self.memo.get(t)
        if hit is None:
            if len(self.memo) > 64:
                self.memo.clear()
            hit = self.memo[t] = self._interp(t)
        return hit

    def _interp(self, t):
        i = int(np.searchsorted(self.ts, t))
        if i < len(self.ts) and self.ts[i] == t:
            return self.ys[:, i].copy()
        return np.asarray(self.sol(t), dtype=float).reshape(3)

    @property
    def span(self):
        return self.ts[0], self.ts[-1]


@functools.lru_cache(maxsize=256)
def _integrate_amplitude(params, axis, alpha0, alpha_dot0, t0, t1, rtol, atol, floor):
    hbar = params.hbar
    four_hbar2 = 4.0 * hbar * hbar
    if alpha0 < floor:
        raise AmplitudeCollapse(f"alpha0={alpha0:g} is below the floor {floor:g} on axis {AXES[axis]}")

    def rhs(t, y):
        a, da, _ = y
        return [da, four_hbar2 / a**3 - params.V(axis, t) * a, 2.0 * hbar / (a * a)]

    def collapse(t, y):
        return y[0] - floor

    collapse.terminal = True
    collapse.direction = -1

    res = solve_ivp(
        rhs,
        (t0, t1),
        [alpha0, alpha_dot0, 0.0],
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=True,
        events=collapse,
    )
    if res.status == 1:
        raise AmplitudeCollapse(
            f"alpha fell below {floor:g} on axis {AXES[axis]} at t={res.t_events[0][0]:.6g}"
        )
    if res.status != 0:
        raise StepFailure(f"Ermakov integration failed on axis {AXES[axis]}: {res.message}")

    ts, ys = res.t, res.y
    if t1 < t0:
        ts, ys = ts[::-1], ys[:, ::-1]
    ts = ts.copy()
    ys = ys.copy()
    ts.flags.writeable = False
    ys.flags.writeable = False
    if np.max(ys[0]) > GROWTH_WARNING * alpha0:
        warnings.warn(
            f"Ermakov amplitude on axis {AXES[axis]} grew by more than {GROWTH_WARNING:g}x; "
            "the drive is probably in an unstable Mathieu region",
            RuntimeWarning,
            stacklevel=3,
        )
    return _AmplitudeSolution(ts=ts, ys=ys, sol=res.sol, t_ref=float(t0))


@dataclass(frozen=True)
class AxisTrack:
    """Dense solution of one axis: amplitude, phase and the rebuilt classical path."""

    amp: _AmplitudeSolution
    q_ref: float
    p_ref: float
    alpha_ref: float
    mass: float
    hbar: float
    c1: float = field(init=False)
    c2: float = field(init=False)

    def __post_init__(self):
        # alpha'(t_ref) = 0 is not assumed here, so c2 comes from q'(t_ref) directly
        a0 = self.amp.ys[0, self._ref_index()]
        da0 = self.amp.ys[1, self._ref_index()]
        c1 = self.q_ref / a0
        c2 = (self.p_ref / self.mass - da0 * c1) * a0 / (2.0 * self.hbar)
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)

    def _ref_index(self):
        return int(np.argmin(np.abs(self.amp.ts - self.amp.t_ref)))

    @property
    def span(self):
        return self.amp.span

    def amplitude(self, t):
        """``(alpha, alpha', phi)`` at ``t`` (array-like), stored values at nodes."""
        lo, hi = float(self.amp.ts[0]), float(self.amp.ts[-1])
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.ndim(t) == 0:
            tf = float(t)
            if tf < lo - slack or tf > hi + slack:
                raise OutOfRange(f"t={tf:.6g} outside trajectory span [{lo:.6g}, {hi:.6g}]")
            return self.amp.at_scalar(min(max(tf, lo), hi)).copy()
        t = np.asarray(t, dtype=float)
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise OutOfRange(f"t outside trajectory span [{lo:.6g}, {hi:.6g}]")
        flat = np.clip(t.ravel(), lo, hi)
        out = np.asarray(self.amp.sol(flat)).reshape(3, -1)
        ts = self.amp.ts
        idx = np.searchsorted(ts, flat)
        idx = np.clip(idx, 0, len(ts) - 1)
        exact = ts[idx] == flat
        if np.any(exact):
            out[:, exact] = self.amp.ys[:, idx[exact]]
        return out.reshape((3,) + t.shape)

    def evaluate(self, t):
        alpha, dalpha, phi = self.amplitude(t)
        c, s = np.cos(phi), np.sin(phi)
        u = self.c1 * c + self.c2 * s
        du = -self.c1 * s + self.c2 * c
        q = alpha * u
        qdot = dalpha * u + (2.0 * self.hbar / alpha) * du
        return q, self.mass * qdot, alpha, dalpha, phi


@dataclass(frozen=True)
class GuidingTrajectory:
    """Joint Ermakov solution for both axes; immutable once built.

    ``t_ref`` is the time at which ``(q_ref, p_ref)`` were imposed: the start
    for forward trajectories and the final time for backward ones.  The phase
    is zero there.
    """

    params: OscillatorParams
    axes: tuple
    t_ref: float
    q_ref: tuple
    p_ref: tuple
    alpha_ref: tuple

    @property
    def span(self):
        lo = max(ax.span[0] for ax in self.axes)
        hi = min(ax.span[1] for ax in self.axes)
        return lo, hi

    @property
    def coefficients(self):
        return tuple((ax.c1, ax.c2) for ax in self.axes)

    @property
    def times(self):
        """Union of the integrator's accepted step times (increasing)."""
        return np.union1d(self.axes[0].amp.ts, self.axes[1].amp.ts)

    def state_at(self, t):
        """Per-axis ``ErmakovState`` at ``t``; each field has shape ``t.shape + (2,)``."""
        t = np.asarray(t, dtype=float)
        parts = [ax.evaluate(t) for ax in self.axes]
        fields = [np.stack([parts[0][k], parts[1][k]], axis=-1) for k in range(5)]
        return ErmakovState(t, *fields)

    def position(self, t):
        return self.state_at(t).q

    def momentum(self, t):
        return self.state_at(t).p


def _vector(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape == ():
        arr = np.array([arr, 0.0]) if name != "alpha0" else np.array([arr, arr])
    if arr.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector")
    return arr


def _build(params, q, p, alpha, alpha_dot, t_ref, t_other, rtol, atol, floor):
    if np.any(alpha <= 0):
        raise ValueError("alpha0 must be > 0")
    if t_other == t_ref:
        raise ValueError("integration span has zero length")
    axes = []
    for j in range(2):
        amp = _integrate_amplitude(
            params, j, float(alpha[j]), float(alpha_dot[j]), float(t_ref), float(t_other),
            float(rtol), float(atol), float(floor),
        )
        axes.append(AxisTrack(amp, float(q[j]), float(p[j]), float(alpha[j]), params.mass, params.hbar))
    return GuidingTrajectory(
        params=params,
        axes=tuple(axes),
        t_ref=float(t_ref),
        q_ref=tuple(float(x) for x in q),
        p_ref=tuple(float(x) for x in p),
        alpha_ref=tuple(float(x) for x in alpha),
    )


def default_alpha0(params: OscillatorParams):
    return np.array([params.static_alpha(0), params.static_alpha(1)])


def integrate_ermakov(
    params: OscillatorParams,
    q0,
    p0,
    alpha0=None,
    t0=0.0,
    t1=2 * np.pi,
    *,
    alpha_dot0=0.0,
    rtol=DEFAULT_RTOL,
    atol=DEFAULT_ATOL,
    alpha_floor=DEFAULT_ALPHA_FLOOR,
) -> GuidingTrajectory:
    """Guiding trajectory through ``(q0, p0)`` at ``t0``, integrated to ``t1``.

    ``t1 < t0`` integrates backward.  ``alpha0`` defaults to the static fixed
    point of each axis, and ``alpha'(t0) = alpha_dot0`` (zero by default).

    Raises
    ------
    AmplitudeCollapse
        If ``alpha`` drops below ``alpha_floor``.
    StepFailure
        If the integrator gives up.
    """
    q0 = _vector(q0, "q0")
    p0 = _vector(p0, "p0")
    alpha0 = default_alpha0(params) if alpha0 is None else _vector(alpha0, "alpha0")
    alpha_dot0 = np.broadcast_to(np.asarray(alpha_dot0, dtype=float), (2,))
    return _build(params, q0, p0, alpha0, alpha_dot0, t0, t1, rtol, atol, alpha_floor)


def backward_trajectory(
    params: OscillatorParams,
    r_f,
    p_f,
    t_f,
    alpha_f,
    t_grid,
    **kwargs,
) -> GuidingTrajectory:
    """Trajectory with final conditions ``q(t_f) = r_f``, ``p(t_f) = p_f``.

    ``t_grid`` is either the earliest time needed or an array of times, whose
    minimum is used.  States are exposed on an increasing time axis.
    """
    t_start = float(np.min(np.atleast_1d(t_grid)))
    if t_start >= t_f:
        raise ValueError("backward trajectory needs times before t_f")
    return integrate_ermakov(params, r_f, p_f, alpha_f, t0=t_f, t1=t_start, **kwargs)


def state_at(traj: GuidingTrajectory, t):
    return traj.state_at(t)


def ermakov_residual(traj: GuidingTrajectory, t, h=2e-4):
    """``|alpha''/alpha + V - 4 hbar^2/alpha^4|`` per axis.

    ``alpha''`` is a fourth-order central difference of the dense ``alpha'``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = traj.span
    t = np.clip(t, lo + 2 * h, hi - 2 * h)
    out = []
    hbar = traj.params.hbar
    for j, ax in enumerate(traj.axes):
        alpha = ax.amplitude(t)[0]
        d = [ax.amplitude(t + k * h)[1] for k in (-2, -1, 1, 2)]
        ddalpha = (d[0] - 8 * d[1] + 8 * d[2] - d[3]) / (12 * h)
        out.append(np.abs(ddalpha / alpha + traj.params.V(j, t) - 4 * hbar**2 / alpha**4))
    return np.stack(out, axis=-1)
