"""Closed-form Gaussian wavepackets of the driven oscillator.

A branch is the exact solution

    psi(x, t) = (2m / (pi alpha^2))^(1/4)
                * exp(-A (x - q)^2 + i p (x - q) / hbar)
                * exp(i (p q - p_ref q_ref) / (2 hbar) - i phi / 2),

    A = m / alpha^2 - i m alpha' / (2 hbar alpha),

on each axis, with ``(q, p, alpha, alpha', phi)`` taken from a
``GuidingTrajectory``.  Every branch factor is ``exp(-a x^2 + b x + c)``, so
derivatives, overlaps and windowed moments all have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .ermakov import GuidingTrajectory, OscillatorParams, integrate_ermakov
from .errors import CausticError

DEFAULT_EPS_CAUSTIC = 1e-3
DEFAULT_DENSITY_FLOOR = 1e-12  # relative to the instantaneous peak density


@dataclass(frozen=True)
class GaussianBranch:
    label: object
    weight: complex
    traj: GuidingTrajectory
    memo: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def params(self) -> OscillatorParams:
        return self.traj.params

    def coefficients_at(self, t: float):
        """Memoised scalar-time ``(a, b, c)``, each a complex array of shape (2,)."""
        hit = self.memo.get(t)
        if hit is None:
            if len(self.memo) > 64:
                self.memo.clear()
            hit = self.memo[t] = _scalar_coefficients(self, t)
        return hit


def _scalar_coefficients(branch, t):
    params = branch.params
    m, hbar = params.mass, params.hbar
    traj = branch.traj
    a = np.empty(2, complex)
    b = np.empty(2, complex)
    c = np.empty(2, complex)
    for j, ax in enumerate(traj.axes):
        q, p, al, dal, phi = (float(v) for v in ax.evaluate(t))
        A = complex(m / al**2, -m * dal / (2 * hbar * al))
        kp = p / hbar
        a[j] = A
        b[j] = 2 * A * q + 1j * kp
        c[j] = (0.25 * math.log(2 * m / (math.pi * al**2)) - A * q * q - 1j * kp * q
                + 1j * (p * q - traj.p_ref[j] * traj.q_ref[j]) / (2 * hbar) - 0.5j * phi)
    return a, b, c


@dataclass(frozen=True)
class Superposition:
    """Weighted list of branches; weights are used as given (no renormalisation)."""

    branches: tuple

    def __post_init__(self):
        branches = tuple(self.branches)
        if not branches:
            raise ValueError("a superposition needs at least one branch")
        params = branches[0].params
        if any(b.params != params for b in branches[1:]):
            raise ValueError("all branches must share the same OscillatorParams")
        object.__setattr__(self, "branches", branches)

    @property
    def params(self) -> OscillatorParams:
        return self.branches[0].params

    @property
    def span(self):
        lo = max(b.traj.span[0] for b in self.branches)
        hi = min(b.traj.span[1] for b in self.branches)
        return lo, hi

    @property
    def labels(self):
        return [b.label for b in self.branches]

    def branch(self, label) -> GaussianBranch:
        for b in self.branches:
            if b.label == label:
                return b
        raise KeyError(label)

    def __len__(self):
        return len(self.branches)

    def peak_at(self, t: float):
        """Largest single-branch centre density ``|a_J|^2 prod_j sqrt(2m/pi)/alpha_j``."""
        memo = self.__dict__.setdefault("_peak_memo", {})
        hit = memo.get(t)
        if hit is None:
            if len(memo) > 64:
                memo.clear()
            k = math.sqrt(2 * self.params.mass / math.pi)
            best = 0.0
            for b in self.branches:
                al = [ax.amplitude(t)[0] for ax in b.traj.axes]
                best = max(best, abs(b.weight) ** 2 * k * k / (al[0] * al[1]))
            hit = memo[t] = best
        return hit

    def __iter__(self):
        return iter(self.branches)


def make_superposition(params, q0, momenta, weights=None, alpha0=None, t0=0.0, t1=2 * np.pi,
                       labels=None, **kwargs) -> Superposition:
    """Branches sharing ``q0`` and ``alpha0`` with initial momenta ``momenta``."""
    momenta = np.atleast_2d(np.asarray(momenta, dtype=float))
    n = len(momenta)
    if weights is None:
        weights = np.full(n, 1.0 / np.sqrt(n))
    weights = np.broadcast_to(np.asarray(weights), (n,))
    if labels is None:
        labels = list(range(1, n + 1))
    branches = [
        GaussianBranch(lab, w, integrate_ermakov(params, q0, p, alpha0, t0, t1, **kwargs))
        for lab, w, p in zip(labels, weights, momenta)
    ]
    return Superposition(tuple(branches))


@dataclass(frozen=True)
class ComplexField:
    """Value and analytic derivatives of psi at a set of points.

    Shapes: ``value`` S, ``gradient`` S+(2,), ``hessian`` S+(2, 2),
    ``laplacian`` S, ``third`` S+(2, 2, 2) or None.
    """

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    third: np.ndarray | None = None

    @property
    def laplacian(self):
        return self.hessian[..., 0, 0] + self.hessian[..., 1, 1]


def gaussian_coefficients(branch: GaussianBranch, t):
    """``(a, b, c)`` with branch axis factor ``exp(-a x^2 + b x + c)``; shape ``t.shape + (2,)``.

    The branch weight is not included.
    """
    if np.ndim(t) == 0:
        return branch.coefficients_at(float(t))
    st = branch.traj.state_at(t)
    params = branch.params
    m, hbar = params.mass, params.hbar
    q_ref = np.asarray(branch.traj.q_ref)
    p_ref = np.asarray(branch.traj.p_ref)
    A = m / st.alpha**2 - 1j * m * st.alpha_dot / (2 * hbar * st.alpha)
    kp = st.p / hbar
    c = (
        0.25 * np.log(2 * m / (np.pi * st.alpha**2))
        - A * st.q**2
        - 1j * kp * st.q
        + 1j * (st.p * st.q - p_ref * q_ref) / (2 * hbar)
        - 0.5j * st.phi
    )
    return A, 2 * A * st.q + 1j * kp, c


def _axis_factors(a, b, c, x, order):
    """Axis factor and its first ``order`` derivatives."""
    g = -2 * a * x + b
    f0 = np.exp(-a * x * x + b * x + c)
    out = [f0, g * f0]
    if order >= 2:
        out.append((g * g - 2 * a) * f0)
    if order >= 3:
        out.append((g**3 - 6 * a * g) * f0)
    return out


def _branch_field(branch, r, t, order):
    a, b, c = gaussian_coefficients(branch, t)
    X = _axis_factors(a[..., 0], b[..., 0], c[..., 0], r[..., 0], order)
    Y = _axis_factors(a[..., 1], b[..., 1], c[..., 1], r[..., 1], order)
    return X, Y


def evaluate(state: Superposition, r, t, order=2) -> ComplexField:
    """psi and its analytic derivatives up to ``order`` (2 or 3) at points ``r``.

    ``r`` has shape S+(2,); ``t`` is a scalar or broadcasts against S.
    """
    r = np.asarray(r, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), r.shape[:-1]) if np.ndim(t) else float(t)
    shape = r.shape[:-1]
    value = np.zeros(shape, complex)
    grad = np.zeros(shape + (2,), complex)
    hess = np.zeros(shape + (2, 2), complex)
    third = np.zeros(shape + (2, 2, 2), complex) if order >= 3 else None
    for branch in state.branches:
        X, Y = _branch_field(branch, r, t, max(order, 2))
        w = branch.weight
        value += w * X[0] * Y[0]
        grad[..., 0] += w * X[1] * Y[0]
        grad[..., 1] += w * X[0] * Y[1]
        hess[..., 0, 0] += w * X[2] * Y[0]
        hess[..., 1, 1] += w * X[0] * Y[2]
        hess[..., 0, 1] += w * X[1] * Y[1]
        if third is not None:
            third[..., 0, 0, 0] += w * X[3] * Y[0]
            third[..., 1, 1, 1] += w * X[0] * Y[3]
            xxy = w * X[2] * Y[1]
            xyy = w * X[1] * Y[2]
            for idx in ((0, 0, 1), (0, 1, 0), (1, 0, 0)):
                third[(...,) + idx] += xxy
            for idx in ((0, 1, 1), (1, 0, 1), (1, 1, 0)):
                third[(...,) + idx] += xyy
    hess[..., 1, 0] = hess[..., 0, 1]
    return ComplexField(value, grad, hess, third)


def value_and_gradient(state: Superposition, r, t: float):
    """Lean ``(psi, grad psi)`` for a scalar time; used inside streamline integration."""
    x, y = r[..., 0], r[..., 1]
    val = np.zeros(r.shape[:-1], complex)
    gx = np.zeros_like(val)
    gy = np.zeros_like(val)
    for branch in state.branches:
        a, b, c = branch.coefficients_at(t)
        f = branch.weight * np.exp(-a[0] * x * x + b[0] * x + c[0] - a[1] * y * y + b[1] * y + c[1])
        val += f
        gx += (b[0] - 2 * a[0] * x) * f
        gy += (b[1] - 2 * a[1] * y) * f
    return val, np.stack([gx, gy], axis=-1)


def branch_centers(state: Superposition, t):
    """Guiding positions ``q^J(t)``, shape ``(n_branches,) + t.shape + (2,)``."""
    return np.stack([b.traj.position(t) for b in state.branches])


def peak_density(state: Superposition, t):
    """Peak density scale for the node floor: the largest single-branch centre density.

    Interference can raise the true maximum by at most a factor equal to the
    number of branches, which is immaterial for a 1e-12 floor.
    """
    if np.ndim(t) == 0:
        return state.peak_at(float(t))
    return np.vectorize(state.peak_at, otypes=[float])(np.asarray(t, dtype=float))


def density(state: Superposition, r, t):
    return np.abs(evaluate(state, r, t).value) ** 2


def grad_log_density(state: Superposition, r, t, floor=DEFAULT_DENSITY_FLOOR):
    """``(grad rho / rho, singular)``; ``singular`` flags points below the node floor.

    Flagged points get NaN instead of raising.
    """
    field = evaluate(state, r, t)
    psi = field.value
    rho = np.abs(psi) ** 2
    singular = rho < floor * peak_density(state, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        glog = 2 * np.real(field.gradient / psi[..., None])
    glog = np.where(singular[..., None], np.nan, glog)
    return glog, singular


def overlap_integrals(bra: GaussianBranch, ket: GaussianBranch, t, center=None, width=None):
    """Per-axis ``int conj(bra) x^n f ket dx`` for n = 0, 1 (weights excluded).

    ``f`` is ``exp(-(x - center)^2 / width^2)`` when a window is given, else 1.
    Returns ``(I0, I1)``, each of shape ``broadcast(t, center).shape[:-1] + (2,)``.
    """
    a1, b1, c1 = gaussian_coefficients(bra, t)
    a2, b2, c2 = gaussian_coefficients(ket, t)
    a = np.conj(a1) + a2
    b = np.conj(b1) + b2
    c = np.conj(c1) + c2
    if center is not None:
        center = np.asarray(center, dtype=float)
        inv = 1.0 / float(width) ** 2
        a = a + inv
        b = b + 2 * inv * center
        c = c - inv * center**2
    I0 = np.sqrt(np.pi / a) * np.exp(b * b / (4 * a) + c)
    return I0, I0 * b / (2 * a)


def centroid(bra: GaussianBranch, ket: GaussianBranch, t):
    """Complex centroid ``<bra|x|ket> / <bra|ket>`` per axis (exact, overlap-free)."""
    a1, b1, _ = gaussian_coefficients(bra, t)
    a2, b2, _ = gaussian_coefficients(ket, t)
    return (np.conj(b1) + b2) / (2 * (np.conj(a1) + a2))


def inner_product(bra: Superposition, ket: Superposition, t):
    """``<bra(t)|ket(t)>`` in closed form."""
    total = 0j
    for bb in bra.branches:
        for kb in ket.branches:
            I0, _ = overlap_integrals(bb, kb, t)
            total = total + np.conj(bb.weight) * kb.weight * I0[..., 0] * I0[..., 1]
    return total


def norm(state: Superposition, t):
    """Exact squared norm including branch cross terms."""
    return float(np.real(inner_product(state, state, t)))


def propagator_1d(params: OscillatorParams, axis, x1, x0, t1, t0, traj: GuidingTrajectory,
                  eps_caustic=DEFAULT_EPS_CAUSTIC):
    """Exact 1D kernel ``K(x1, x0; t1, t0)`` from the Ermakov amplitude and phase.

    Any Ermakov solution covering ``[t0, t1]`` gives the same kernel.  The
    phase convention matches the static oscillator for ``0 < dphi < pi`` and
    steps by ``-pi/2`` per crossed caustic.

    Raises
    ------
    CausticError
        If ``phi(t1) - phi(t0)`` is within ``eps_caustic`` of a multiple of pi.
    """
    ax = traj.axes[0 if axis in (0, "x") else 1]
    (a1, da1, p1), (a0, da0, p0) = ax.amplitude(t1), ax.amplitude(t0)
    dphi = float(p1 - p0)
    k = np.floor(dphi / np.pi)
    if min(dphi - k * np.pi, (k + 1) * np.pi - dphi) < eps_caustic:
        raise CausticError(f"phase difference {dphi:.6g} is at a caustic")
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    s = np.sin(dphi)
    action = classical_action(params, axis, x1, x0, t1, t0, traj)
    pref = np.sqrt(params.mass / (np.pi * a1 * a0 * abs(s))) * np.exp(-1j * np.pi * (0.25 + 0.5 * k))
    return pref * np.exp(1j * action / params.hbar)


def classical_action(params, axis, x1, x0, t1, t0, traj):
    """The quadratic action in the exponent of ``propagator_1d``."""
    ax = traj.axes[0 if axis in (0, "x") else 1]
    (a1, da1, p1), (a0, da0, p0) = ax.amplitude(t1), ax.amplitude(t0)
    dphi = p1 - p0
    m, hbar = params.mass, params.hbar
    return (
        0.5 * m * (x1**2 * da1 / a1 - x0**2 * da0 / a0)
        + m * hbar / np.tan(dphi) * (x1**2 / a1**2 + x0**2 / a0**2)
        - 2 * m * hbar * x1 * x0 / (a1 * a0 * np.sin(dphi))
    )


def axis_wavefunction(branch: GaussianBranch, axis, x, t):
    """One axis factor of a branch (weight excluded)."""
    a, b, c = gaussian_coefficients(branch, t)
    j = 0 if axis in (0, "x") else 1
    x = np.asarray(x, dtype=float)
    return np.exp(-a[..., j] * x * x + b[..., j] * x + c[..., j])


def propagate_by_kernel(branch: GaussianBranch, axis, x, t1, t0, x0_grid, traj=None,
                        eps_caustic=DEFAULT_EPS_CAUSTIC):
    """``int K(x, x0; t1, t0) psi(x0, t0) dx0`` by trapezoidal quadrature on ``x0_grid``."""
    traj = branch.traj if traj is None else traj
    psi0 = axis_wavefunction(branch, axis, x0_grid, t0)
    K = propagator_1d(branch.params, axis, np.asarray(x)[..., None], x0_grid[None, :], t1, t0,
                      traj, eps_caustic)
    return trapezoid(K * psi0, x0_grid, axis=-1)
