"""Probability current, Bohmian velocity field and streamline integration."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .errors import SingularRegion
from .wavepacket import (
    DEFAULT_DENSITY_FLOOR,
    Superposition,
    evaluate,
    norm,
    peak_density,
    value_and_gradient,
)

TIME_REACHED = "time reached"
SINGULAR = "singular region"
STEP_FAILURE = "step failure"

DEFAULT_MAX_DISP_FACTOR = 0.01  # times alpha0
DEFAULT_CROSS_TOL = 1e-6


def _points(r):
    return np.asarray(r, dtype=float)


def current_density(state: Superposition, r, t):
    """``j = (hbar/m) Im(conj(psi) grad psi)``, shape ``r.shape``."""
    f = evaluate(state, _points(r), t)
    p = state.params
    return (p.hbar / p.mass) * np.imag(np.conj(f.value)[..., None] * f.gradient)


def _singular_mask(state, rho, t, floor):
    return rho < floor * peak_density(state, t)


def velocity_field(state: Superposition, r, t, floor=DEFAULT_DENSITY_FLOOR, return_mask=False):
    """Bohmian velocity ``Im(hbar grad psi / (m psi))``.

    With ``return_mask=False`` any point below the node floor raises
    ``SingularRegion``; otherwise those points get NaN and a boolean mask is
    returned alongside.
    """
    r = _points(r)
    if np.ndim(t) == 0:
        psi, grad = value_and_gradient(state, r, float(t))
    else:
        fld = evaluate(state, r, t)
        psi, grad = fld.value, fld.gradient
    p = state.params
    rho = np.abs(psi) ** 2
    singular = _singular_mask(state, rho, t, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (p.hbar / p.mass) * np.imag(grad / psi[..., None])
    v = np.where(singular[..., None], np.nan, v)
    if return_mask:
        return v, singular
    if np.any(singular):
        raise SingularRegion("velocity requested where the density is below the node floor")
    return v


def _rho_derivatives(f, third=False):
    """rho and its derivatives from psi derivatives (real arrays)."""
    psi, g, h = f.value, f.gradient, f.hessian
    cpsi = np.conj(psi)
    rho = np.abs(psi) ** 2
    drho = 2 * np.real(cpsi[..., None] * g)
    d2rho = 2 * np.real(cpsi[..., None, None] * h + np.conj(g)[..., :, None] * g[..., None, :])
    if not third:
        return rho, drho, d2rho
    T = f.third
    # d_k lap(rho) = sum_i 2 Re(psi* T_kii + conj(g_k) H_ii + 2 conj(g_i) H_ik)
    lap_h = h[..., 0, 0] + h[..., 1, 1]
    dlap = 2 * np.real(
        cpsi[..., None] * (T[..., :, 0, 0] + T[..., :, 1, 1])
        + np.conj(g) * lap_h[..., None]
        + 2 * np.einsum("...i,...ik->...k", np.conj(g), h)
    )
    return rho, drho, d2rho, dlap


def quantum_potential(state: Superposition, r, t, floor=DEFAULT_DENSITY_FLOOR):
    """``Q = -(hbar^2/2m) lap(sqrt rho)/sqrt rho`` from analytic derivatives.

    Raises
    ------
    SingularRegion
        If any point is below the node floor.
    """
    r = _points(r)
    f = evaluate(state, r, t)
    rho, drho, d2rho = _rho_derivatives(f)
    if np.any(_singular_mask(state, rho, t, floor)):
        raise SingularRegion("quantum potential requested at a node")
    p = state.params
    lap = d2rho[..., 0, 0] + d2rho[..., 1, 1]
    return -(p.hbar**2 / (2 * p.mass)) * (lap / (2 * rho) - np.sum(drho**2, axis=-1) / (4 * rho**2))


def quantum_potential_gradient(state: Superposition, r, t, floor=DEFAULT_DENSITY_FLOOR):
    """Analytic ``grad Q``; needs third derivatives of psi."""
    r = _points(r)
    f = evaluate(state, r, t, order=3)
    rho, drho, d2rho, dlap = _rho_derivatives(f, third=True)
    if np.any(_singular_mask(state, rho, t, floor)):
        raise SingularRegion("quantum force requested at a node")
    p = state.params
    lap = d2rho[..., 0, 0] + d2rho[..., 1, 1]
    g2 = np.sum(drho**2, axis=-1)
    mix = np.einsum("...i,...ik->...k", drho, d2rho)
    r1, r2, r3 = rho[..., None], rho[..., None] ** 2, rho[..., None] ** 3
    inner = (
        dlap / (2 * r1)
        - lap[..., None] * drho / (2 * r2)
        - mix / (2 * r2)
        + g2[..., None] * drho / (2 * r3)
    )
    return -(p.hbar**2 / (2 * p.mass)) * inner


def potential_gradient(state: Superposition, r, t):
    """``grad V`` for ``V = (m/2) sum_j V_j(t) x_j^2``."""
    r = _points(r)
    params = state.params
    t = np.asarray(t, dtype=float)
    Vt = np.stack([np.broadcast_to(params.V(j, t), r.shape[:-1]) for j in range(2)], axis=-1)
    return params.mass * Vt * r


@dataclass
class BohmianTrajectory:
    """Recorded streamline: times ``t`` (n,), positions ``r`` (n, 2), velocities ``v`` (n, 2)."""

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    x0: np.ndarray
    termination: str
    state_id: str = ""

    @property
    def completed(self):
        return self.termination == TIME_REACHED


@dataclass
class Ensemble:
    seed: int
    initial_points: np.ndarray
    trajectories: list = field(default_factory=list)

    def final_positions(self):
        ok = [tr for tr in self.trajectories if tr.completed]
        return np.array([tr.r[-1] for tr in ok]).reshape(-1, 2)

    def failure_counts(self):
        counts = {}
        for tr in self.trajectories:
            if not tr.completed:
                counts[tr.termination] = counts.get(tr.termination, 0) + 1
        return counts


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def default_max_displacement(state: Superposition):
    alphas = [min(b.traj.alpha_ref) for b in state.branches]
    return DEFAULT_MAX_DISP_FACTOR * min(alphas)


def integrate_bohmian_batch(
    state: Superposition,
    x0,
    t0,
    t1,
    t_eval=None,
    *,
    rtol=1e-10,
    atol=1e-12,
    max_displacement=None,
    floor=DEFAULT_DENSITY_FLOOR,
    max_steps=200000,
    state_id="",
):
    """Integrate ``dr/dt = v(r, t)`` for many starting points with one shared step sequence.

    Steps are controlled by the worst particle's local error and by the
    largest displacement.  A particle entering the node region is frozen and
    its trajectory ends at the last recorded sample with reason
    ``"singular region"``.  ``t1 < t0`` integrates backward.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = len(x0)
    if t_eval is None:
        t_eval = np.linspace(t0, t1, 201)
    t_eval = np.asarray(t_eval, dtype=float)
    direction = 1.0 if t1 >= t0 else -1.0
    if np.any(np.diff(t_eval) * direction <= 0) or t_eval[0] != t0 or t_eval[-1] != t1:
        raise ValueError("t_eval must run monotonically from t0 to t1")
    dmax = default_max_displacement(state) if max_displacement is None else max_displacement

    def rhs(t, y, active):
        v = np.zeros_like(y)
        if np.any(active):
            va, sing = velocity_field(state, y[active], t, floor, return_mask=True)
            va = np.where(sing[..., None], 0.0, va)
            v[active] = va
            bad = np.zeros(n, bool)
            bad[np.flatnonzero(active)[sing]] = True
            return v, bad
        return v, np.zeros(n, bool)

    active = np.ones(n, bool)
    reason = np.array([TIME_REACHED] * n, dtype=object)
    last = np.zeros(n, int)  # index of last valid sample
    R = np.full((len(t_eval), n, 2), np.nan)
    Vs = np.full((len(t_eval), n, 2), np.nan)

    y = x0.copy()
    t = float(t0)
    k1, bad = rhs(t, y, active)
    if np.any(bad):
        active &= ~bad
        reason[bad] = SINGULAR
    R[0], Vs[0] = y, np.where(active[:, None], k1, np.nan)
    speed = np.max(np.abs(k1)) if np.any(active) else 0.0
    h = min(abs(t1 - t0) / 10, dmax / speed if speed > 0 else np.inf)
    h = max(h, 1e-6 * abs(t1 - t0))
    out_i = 1
    steps = 0
    h_min = 1e-14 * max(1.0, abs(t0), abs(t1))
    while out_i < len(t_eval) and np.any(active):
        target = t_eval[out_i]
        h_try = min(h, abs(target - t))
        hit = h_try == abs(target - t)
        ks = [k1]
        bad_any = np.zeros(n, bool)
        for s in range(1, 7):
            ys = y + direction * h_try * sum(a * kk for a, kk in zip(_A[s], ks))
            ks_s, bad = rhs(t + direction * _C[s] * h_try, ys, active)
            bad_any |= bad
            ks.append(ks_s)
        if np.any(bad_any):
            if h_try > 64 * h_min and h_try > 1e-9 * abs(t1 - t0):
                h = h_try / 4
                continue
            # stage landed in a node even for a tiny step: stop those particles
            active &= ~bad_any
            reason[bad_any] = SINGULAR
            k1, _ = rhs(t, y, active)
            continue
        y_new = y + direction * h_try * sum(b * kk for b, kk in zip(_B, ks) if b != 0)
        err_vec = direction * h_try * sum(e * kk for e, kk in zip(_E, ks) if e != 0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=-1))
        err = np.max(np.where(active, err, 0.0))
        disp = np.max(np.where(active[:, None], np.abs(y_new - y), 0.0))
        steps += 1
        if steps > max_steps or h_try < h_min:
            reason[active] = STEP_FAILURE
            active[:] = False
            break
        if err > 1.0 or disp > dmax * (1 + 1e-12):
            fac = 0.9 * err ** -0.2 if err > 1.0 else 1.0
            if disp > dmax:
                fac = min(fac, 0.9 * dmax / disp)
            h = h_try * max(0.1, min(fac, 0.9))
            continue
        t = target if hit else t + direction * h_try
        y = y_new
        k1 = ks[6]  # FSAL
        fac = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
        if not hit:
            h = h_try * max(0.2, fac)
        else:
            if h_try >= h:
                h = h_try * max(0.2, fac)
            R[out_i, active] = y[active]
            Vs[out_i, active] = k1[active]
            last[active] = out_i
            out_i += 1
    trajs = []
    for i in range(n):
        stop = last[i] + 1
        trajs.append(
            BohmianTrajectory(
                t=t_eval[:stop].copy() if direction > 0 else t_eval[:stop][::-1].copy(),
                r=R[:stop, i].copy() if direction > 0 else R[:stop, i][::-1].copy(),
                v=Vs[:stop, i].copy() if direction > 0 else Vs[:stop, i][::-1].copy(),
                x0=x0[i].copy(),
                termination=reason[i],
                state_id=state_id,
            )
        )
    return trajs


def integrate_bohmian(state: Superposition, x0, t0, t1, t_eval=None, **controls) -> BohmianTrajectory:
    """Single streamline from ``x0`` at ``t0`` to ``t1``; see ``integrate_bohmian_batch``.

    Samples are always stored with increasing time, so a backward run ends
    its arrays at ``t0``.
    """
    return integrate_bohmian_batch(state, np.asarray(x0, dtype=float)[None], t0, t1, t_eval,
                                   **controls)[0]


def newton_residual(state: Superposition, traj: BohmianTrajectory):
    """``m dv/dt + grad(V + Q)`` along a recorded streamline, shape ``(n, 2)``.

    ``dv/dt`` uses second-order finite differences of the recorded velocities.
    """
    if len(traj.t) < 3:
        raise ValueError("need at least three samples")
    m = state.params.mass
    dvdt = np.gradient(traj.v, traj.t, axis=0, edge_order=2)
    force = np.stack(
        [potential_gradient(state, traj.r[i], traj.t[i])
         + quantum_potential_gradient(state, traj.r[i], traj.t[i]) for i in range(len(traj.t))]
    )
    return m * dvdt + force


def sample_density(state: Superposition, n, t, rng, batch=4096):
    """Rejection sampling of ``|psi(t)|^2`` against the branch-envelope Gaussian mixture.

    ``|sum a_J psi_J|^2 <= K sum |a_J psi_J|^2`` (Cauchy-Schwarz), so the
    mixture with weights ``|a_J|^2`` scaled by ``K`` is a valid envelope.
    """
    branches = state.branches
    K = len(branches)
    w = np.array([abs(b.weight) ** 2 for b in branches])
    probs = w / w.sum()
    m = state.params.mass
    centers = [b.traj.position(t) for b in branches]
    sigmas = [b.traj.state_at(t).alpha / (2 * np.sqrt(m)) for b in branches]
    out = []
    have = 0
    while have < n:
        comp = rng.choice(K, size=batch, p=probs)
        z = rng.standard_normal((batch, 2))
        pts = np.empty((batch, 2))
        for j in range(K):
            sel = comp == j
            pts[sel] = centers[j] + sigmas[j] * z[sel]
        env = np.zeros(batch)
        for j, b in enumerate(branches):
            d = (pts - centers[j]) / sigmas[j]
            env += w[j] * np.exp(-0.5 * np.sum(d * d, axis=1)) / (2 * np.pi * np.prod(sigmas[j]))
        rho = np.abs(evaluate(state, pts, t).value) ** 2
        accept = rng.random(batch) * K * env <= rho
        kept = pts[accept]
        out.append(kept)
        have += len(kept)
    return np.concatenate(out)[:n]


def _bin_probabilities(state, t, xe, ye, nodes=4):
    """Exact bin masses of ``rho(t)`` by tensor Gauss-Legendre per bin."""
    g, gw = np.polynomial.legendre.leggauss(nodes)

    def pts(edges):
        lo, hi = edges[:-1, None], edges[1:, None]
        return (0.5 * (hi - lo) * g + 0.5 * (hi + lo)), 0.5 * (hi - lo) * gw

    px, wx = pts(xe)
    py, wy = pts(ye)
    X = px[:, None, :, None]
    Y = py[None, :, None, :]
    r = np.stack(np.broadcast_arrays(X, Y), axis=-1)
    rho = np.abs(evaluate(state, r, t).value) ** 2
    return np.einsum("ijab,ia,jb->ij", rho, wx, wy)


@dataclass
class EquivarianceResult:
    score: float
    baseline: float
    n_samples: int
    failures: dict
    edges: tuple
    ensemble: Ensemble | None = None


def default_grid_extent(state, t, n_widths=4.0):
    m = state.params.mass
    lo, hi = np.full(2, np.inf), np.full(2, -np.inf)
    for b in state.branches:
        c = b.traj.position(t)
        s = b.traj.state_at(t).alpha / (2 * np.sqrt(m))
        lo = np.minimum(lo, c - n_widths * s)
        hi = np.maximum(hi, c + n_widths * s)
    return lo, hi


def equivariance_check(state: Superposition, N, t0, t1, seed, bins=40, extent=None, n_widths=4.0,
                       threads=1, chunk=256, keep_ensemble=False, **controls) -> EquivarianceResult:
    """Binned L1 distance between transported samples and ``rho(t1)``.

    The grid spans the branch supports at ``t1`` (``n_widths`` standard
    deviations); mass outside it counts toward the distance.  ``baseline`` is
    the expected L1 distance of ``N`` exact samples from the same bins, so
    ``score`` can be read against pure sampling noise.  Particles are
    integrated in fixed chunks, so results do not depend on ``threads``.
    """
    if N < 100:
        raise ValueError("N must be >= 100")
    rng = np.random.default_rng(seed)
    x0 = sample_density(state, N, t0, rng)
    if t1 == t0:
        ens = Ensemble(seed, x0, [BohmianTrajectory(np.array([t0]), p[None], np.full((1, 2), np.nan),
                                                    p, TIME_REACHED) for p in x0])
    else:
        parts = [x0[i:i + chunk] for i in range(0, N, chunk)]

        def run(part):
            return integrate_bohmian_batch(state, part, t0, t1, np.array([t0, t1]), **controls)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                done = list(ex.map(run, parts))
        else:
            done = [run(p) for p in parts]
        ens = Ensemble(seed, x0, [tr for d in done for tr in d])
    final = ens.final_positions()
    failures = ens.failure_counts()
    lo, hi = default_grid_extent(state, t1, n_widths) if extent is None else extent
    xe = np.linspace(lo[0], hi[0], bins + 1)
    ye = np.linspace(lo[1], hi[1], bins + 1)
    H, _, _ = np.histogram2d(final[:, 0], final[:, 1], bins=[xe, ye])
    P = _bin_probabilities(state, t1, xe, ye) / norm(state, t1)
    outside_exact = max(1.0 - P.sum(), 0.0)
    outside_emp = (N - H.sum()) / N
    score = float(np.abs(H / N - P).sum() + abs(outside_emp - outside_exact))
    return EquivarianceResult(score, sampling_noise_baseline(P, N), N, failures, (xe, ye),
                              ens if keep_ensemble else None)


def sampling_noise_baseline(P, N):
    """Expected ``sum |n_i/N - p_i|`` for exact samples.

    Each bin count is binomial, whose mean absolute deviation has de Moivre's
    closed form ``2 k q pmf(k)`` with ``k = floor(N p) + 1``.
    """
    P = np.clip(np.asarray(P, dtype=float).ravel(), 0.0, 1.0)
    k = np.floor(N * P) + 1
    mad = 2 * k * (1 - P) * binom.pmf(k, N, P)
    return float(np.sum(mad) / N)


def coincidence_distance(a: BohmianTrajectory, b: BohmianTrajectory):
    """Minimum distance between two streamlines at common sample times."""
    common, ia, ib = np.intersect1d(a.t, b.t, return_indices=True)
    if len(common) == 0:
        return np.inf
    return float(np.min(np.linalg.norm(a.r[ia] - b.r[ib], axis=-1)))
