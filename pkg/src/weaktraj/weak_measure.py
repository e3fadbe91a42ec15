"""Weak values of position and momentum, WMA sweeps and weak trajectories.

A WMA (weak measurement apparatus) at ``R0`` with window
``f(r) = exp(-|r - R0|^2 / w^2)`` probes the system at one time ``t_k``.
Pre- and postselected states are both Gaussian superpositions, so every
pair of branches ``(K, J)`` contributes a windowed overlap

    O_KJ = conj(c_K) a_J <chi_K| f |psi_J>

and a pair weak value ``w_KJ = <chi_K| r |psi_J> / <chi_K|psi_J>``.  The
registered value is the overlap-weighted mean ``sum O w / sum O``: the WMA
only sees pairs whose product has support inside its window, and each pair
contributes its exact complex centroid.  For a single dominant pair this is
the textbook ratio; the literal windowed ratio
``<chi| r f |psi> / <chi|psi>`` is recorded alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cubature

from .ermakov import backward_trajectory
from .errors import IncompatiblePostselection, SingularRegion, UnassignedRecord
from .wavepacket import (
    DEFAULT_DENSITY_FLOOR,
    GaussianBranch,
    Superposition,
    centroid,
    evaluate,
    gaussian_coefficients,
    inner_product,
    overlap_integrals,
    peak_density,
)

COMPAT_THRESHOLD = 1e-8
# secondary pair share above which a record is treated as a branch crossing
CROSSING_SHARE = 1e-8


@dataclass(frozen=True)
class WMA:
    id: int
    R0: tuple
    width: float
    t_k: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("WMA window width must be > 0")
        object.__setattr__(self, "R0", tuple(float(x) for x in self.R0))
        object.__setattr__(self, "t_k", float(self.t_k))


# postselection kinds


@dataclass(frozen=True)
class GaussianPacket:
    """Gaussian ``exp(-|r - r_f|^2 / delta_f^2 + i p_f (r - r_f) / hbar)`` at ``t_f``.

    ``delta_f=None`` uses the preselected branches' width at ``t = 0``.
    """

    r_f: tuple
    p_f: tuple
    t_f: float
    delta_f: float | None = None

    def __post_init__(self):
        if self.delta_f is not None and not self.delta_f > 0:
            raise ValueError("delta_f must be > 0")


@dataclass(frozen=True)
class BranchMatched:
    """Postselect on the preselected branch ``J`` itself."""

    J: object


@dataclass(frozen=True)
class MultiBranch:
    """Sum of Gaussian packets at a common ``r_f`` with momenta ``p_f[K]`` and weights ``c[K]``."""

    c: tuple
    p_f: tuple
    r_f: tuple
    t_f: float
    delta_f: float | None = None

    def __post_init__(self):
        if len(self.c) != len(self.p_f) or len(self.c) == 0:
            raise ValueError("MultiBranch needs one coefficient per momentum")
        if not np.any(np.abs(np.asarray(self.c, dtype=complex)) > 0):
            raise ValueError("MultiBranch coefficients are all zero")
        if self.delta_f is not None and not self.delta_f > 0:
            raise ValueError("delta_f must be > 0")


@dataclass(frozen=True)
class PositionPoint:
    """Position eigenstate ``|r_f>`` at time ``t``."""

    r_f: tuple
    t: float


def _packet_branch(pre, label, weight, r_f, p_f, t_f, delta_f, t_start):
    params = pre.params
    if delta_f is None:
        alpha_f = np.array(pre.branches[0].traj.alpha_ref)
    else:
        alpha_f = np.full(2, float(delta_f) * np.sqrt(params.mass))
    traj = backward_trajectory(params, np.asarray(r_f, float), np.asarray(p_f, float), float(t_f),
                               alpha_f, t_start)
    return GaussianBranch(label, weight, traj)


def postselected_state(pre: Superposition, post, t_start=None) -> Superposition:
    """Backward-evolved postselected state as a ``Superposition``.

    ``t_start`` is the earliest time that will be queried (defaults to the
    start of the preselected span).
    """
    lo = pre.span[0] if t_start is None else float(t_start)
    if isinstance(post, Superposition):
        return post
    if isinstance(post, BranchMatched):
        b = pre.branch(post.J)
        return Superposition((GaussianBranch(b.label, 1.0, b.traj),))
    if isinstance(post, GaussianPacket):
        return Superposition((_packet_branch(pre, "f", 1.0, post.r_f, post.p_f, post.t_f,
                                             post.delta_f, lo),))
    if isinstance(post, MultiBranch):
        c = np.asarray(post.c, dtype=complex)
        c = c / np.linalg.norm(c)
        return Superposition(tuple(
            _packet_branch(pre, f"f{k + 1}", c[k], post.r_f, p, post.t_f, post.delta_f, lo)
            for k, p in enumerate(post.p_f)
        ))
    raise TypeError(f"unsupported postselection {type(post).__name__}")


@dataclass
class WeakValueRecord:
    wma_id: int
    t_k: float
    R0: tuple
    value: np.ndarray  # complex (2,); NaN when vanishing
    normalization: complex  # <chi(t_k)|psi(t_k)>
    window_overlap: complex  # sum of O_KJ
    branch: object = None
    method: str = "analytic"
    vanishing: bool = False
    crossing: bool = False
    literal: np.ndarray | None = None  # <chi| r f |psi> / <chi|psi>
    error: str = ""
    width: float = np.nan

    @property
    def numerator(self):
        return self.value * self.window_overlap

    @property
    def usable(self):
        return not (self.vanishing or self.crossing or self.error)


def _pair_terms(pre, chi, t, R0, width):
    """Windowed overlaps ``O`` (P, ...), pair centroids ``W`` (P, ..., 2), labels and
    the literal numerator, for all ``(K, J)`` pairs."""
    O, W, labels, num = [], [], [], 0
    for kb in chi.branches:
        for jb in pre.branches:
            I0, I1 = overlap_integrals(kb, jb, t, R0, width)
            amp = np.conj(kb.weight) * jb.weight
            O.append(amp * I0[..., 0] * I0[..., 1])
            W.append(np.broadcast_to(centroid(kb, jb, t), I0.shape))
            labels.append(jb.label)
            num = num + amp * np.stack([I1[..., 0] * I0[..., 1], I0[..., 0] * I1[..., 1]], axis=-1)
    return np.array(O), np.array(W), labels, num


def _records_from_terms(wmas, t, O, W, labels, num, norm, threshold):
    absO = np.abs(O)
    total_abs = absO.sum(axis=0)
    S = O.sum(axis=0)
    value = np.einsum("p...,p...k->...k", O, W)
    out = []
    for i, wma in enumerate(wmas):
        rec = WeakValueRecord(wma.id, t, wma.R0, np.full(2, np.nan + 0j), norm, complex(S[i]),
                              width=wma.width)
        rec.literal = num[i] / norm if abs(norm) > 0 else np.full(2, np.nan + 0j)
        if total_abs[i] < threshold:
            rec.vanishing = True
        elif abs(S[i]) < threshold:
            rec.vanishing = True
            rec.error = "IncompatiblePostselection: windowed overlap cancels"
        else:
            rec.value = value[i] / S[i]
            k = int(np.argmax(absO[:, i]))
            rec.branch = labels[k]
            rec.crossing = bool(total_abs[i] - absO[k, i] > CROSSING_SHARE * total_abs[i])
        out.append(rec)
    return out


def weak_position_value(pre: Superposition, post, wma: WMA, method="analytic",
                        threshold=COMPAT_THRESHOLD, chi: Superposition | None = None) -> WeakValueRecord:
    """Weak value of position registered by one WMA.

    ``method="quadrature"`` evaluates every overlap by adaptive 2D cubature
    instead of Gaussian-moment algebra.

    Raises
    ------
    IncompatiblePostselection
        If the windowed overlaps of individual branch pairs are appreciable
        but cancel in the sum, so the ratio is ill-conditioned.
    """
    if isinstance(post, PositionPoint):
        value = kernel_weak_value(pre, post.r_f, post.t, wma.t_k, "position")
        return WeakValueRecord(wma.id, wma.t_k, wma.R0, value, np.nan, np.nan, method=method)
    chi = postselected_state(pre, post, wma.t_k) if chi is None else chi
    t = wma.t_k
    norm = complex(inner_product(chi, pre, t))
    R0 = np.asarray(wma.R0)[None]
    if method == "analytic":
        O, W, labels, num = _pair_terms(pre, chi, t, R0, wma.width)
    elif method == "quadrature":
        O, W, labels, num = _pair_terms_quadrature(pre, chi, t, np.asarray(wma.R0), wma.width)
        norm = _quad_inner(chi, pre, t)
        O, W, num = O[:, None], W[:, None], num[None]
    else:
        raise ValueError(f"unknown method {method!r}")
    rec = _records_from_terms([wma], t, O, W, labels, num, norm, threshold)[0]
    rec.method = method
    if rec.error:
        raise IncompatiblePostselection(rec.error)
    return rec


# quadrature route


def _pair_product(kb, jb, t):
    """``conj(chi_K) psi_J`` as per-axis Gaussian coefficients (weights excluded)."""
    a1, b1, c1 = gaussian_coefficients(kb, t)
    a2, b2, c2 = gaussian_coefficients(jb, t)
    return np.conj(a1) + a2, np.conj(b1) + b2, np.conj(c1) + c2


def _cubature(fun, lo, hi, scale, rtol=1e-10):
    # scale bounds every integrand column, so components that vanish by
    # symmetry do not drive the subdivision into roundoff
    res = cubature(fun, lo, hi, rtol=rtol, atol=1e-13 * scale, max_subdivisions=20000)
    return res.estimate


def _modulus_gaussian(a, b, c, center=None, width=None):
    """Per-axis real Gaussian ``|exp(-a x^2 + b x + c)|`` (window folded in) as ``(ar, br, cr)``."""
    ar, br, cr = np.real(a), np.real(b), np.real(c)
    if center is not None:
        inv = 1.0 / width**2
        ar = ar + inv
        br = br + 2 * inv * center
        cr = cr - inv * center**2
    return ar, br, cr


def _pair_quad(kb, jb, t, R0=None, width=None, n_sigma=12.0):
    """2D cubature of ``conj(chi_K) psi_J`` times ``(1, x, y)`` (optionally windowed)."""
    kbw = np.conj(kb.weight) * jb.weight
    single_k, single_j = Superposition((kb,)), Superposition((jb,))

    def integrand(x):
        # evaluate() already carries the branch weights
        prod = np.conj(evaluate(single_k, x, t).value) * evaluate(single_j, x, t).value
        if R0 is not None:
            prod = prod * np.exp(-np.sum((x - R0) ** 2, axis=-1) / width**2)
        cols = [prod, prod * x[:, 0], prod * x[:, 1]]
        return np.stack([v for c in cols for v in (c.real, c.imag)], axis=-1)

    ar, br, cr = _modulus_gaussian(*_pair_product(kb, jb, t), R0, width)
    center = br / (2 * ar)
    half = n_sigma / np.sqrt(2 * ar)
    lo, hi = center - half, center + half
    mass = abs(kbw) * np.prod(np.sqrt(np.pi / ar) * np.exp(br * br / (4 * ar) + cr))
    scale = mass * (1.0 + np.max(np.abs(np.concatenate([lo, hi]))))
    est = _cubature(integrand, lo, hi, scale)
    z = est[0::2] + 1j * est[1::2]
    return z[0], z[1:]


def _pair_terms_quadrature(pre, chi, t, R0, width):
    O, W, labels, num = [], [], [], np.zeros(2, complex)
    for kb in chi.branches:
        for jb in pre.branches:
            o, m = _pair_quad(kb, jb, t, R0, width)
            z0, z1 = _pair_quad(kb, jb, t)
            O.append(o)
            # pairs with no overlap carry no weight; avoid 0/0
            W.append(z1 / z0 if abs(z0) > 0 else np.zeros(2, complex))
            labels.append(jb.label)
            num = num + m
    return np.array(O), np.array(W), labels, num


def _quad_inner(chi, pre, t):
    total = 0j
    for kb in chi.branches:
        for jb in pre.branches:
            total += _pair_quad(kb, jb, t)[0]
    return total


# sweeps


def wma_lattice(xs, ys, times, width, start_id=0):
    """WMAs on the tensor lattice ``xs x ys`` repeated for every time in ``times``.

    Ids run time-major, then x, then y.
    """
    out = []
    i = start_id
    for t in times:
        for x in xs:
            for y in ys:
                out.append(WMA(i, (x, y), width, t))
                i += 1
    return out


def run_wma_grid(pre: Superposition, post, wmas: Sequence[WMA], threshold=COMPAT_THRESHOLD):
    """One record per WMA, in input order.  Errors are stored per record."""
    if not wmas:
        return []
    t_min = min(w.t_k for w in wmas)
    chi = postselected_state(pre, post, t_min)
    by_time: dict = {}
    for i, w in enumerate(wmas):
        by_time.setdefault((w.t_k, w.width), []).append(i)
    records = [None] * len(wmas)
    for (t, width), idx in by_time.items():
        group = [wmas[i] for i in idx]
        try:
            R0 = np.array([w.R0 for w in group])
            norm = complex(inner_product(chi, pre, t))
            O, W, labels, num = _pair_terms(pre, chi, t, R0, width)
            recs = _records_from_terms(group, t, O, W, labels, num, norm, threshold)
        except Exception as exc:  # per-record failure, the sweep continues
            recs = [WeakValueRecord(w.id, t, w.R0, np.full(2, np.nan + 0j), np.nan, np.nan,
                                    vanishing=True, error=f"{type(exc).__name__}: {exc}")
                    for w in group]
        for i, r in zip(idx, recs):
            records[i] = r
    return records


@dataclass
class WeakTrajectory:
    """Time-ordered real parts of weak values attributed to one branch."""

    branch: object
    t: np.ndarray
    points: np.ndarray  # (n, 2)
    wma_ids: list = field(default_factory=list)

    def mean_path(self):
        """Average of the points at each distinct time."""
        ts = np.unique(self.t)
        return ts, np.array([self.points[self.t == t].mean(axis=0) for t in ts])


def assemble_weak_trajectories(records, pre: Superposition, threshold=COMPAT_THRESHOLD,
                               width=None, tolerance=3.0, on_unassigned="raise"):
    """Group usable records into weak trajectories by nearest guiding trajectory.

    A record is kept when its windowed overlap and its numerator exceed
    ``threshold`` and it is not flagged as a crossing.  It joins the branch
    whose ``q^J(t_k)`` is nearest to ``Re value``; the match must lie within
    ``tolerance * width``.

    Raises
    ------
    UnassignedRecord
        With ``on_unassigned="raise"``, if a usable record matches no branch.
        ``"collect"`` instead returns those records as a trajectory with
        ``branch=None``.
    """
    usable = [
        r for r in records
        if r.usable and abs(r.window_overlap) >= threshold
        and np.all(np.isfinite(r.value)) and np.linalg.norm(r.numerator) >= threshold
    ]
    if not usable:
        return []
    groups: dict = {}
    stray = []
    for r in sorted(usable, key=lambda r: (r.t_k, r.wma_id)):
        pts = np.array([b.traj.position(r.t_k) for b in pre.branches])
        d = np.linalg.norm(pts - np.real(r.value), axis=-1)
        k = int(np.argmin(d))
        scale = r.width if width is None else width
        if np.isfinite(scale) and d[k] > tolerance * scale:
            stray.append(r)
            continue
        groups.setdefault(pre.branches[k].label, []).append(r)
    if stray and on_unassigned == "raise":
        ids = [r.wma_id for r in stray]
        raise UnassignedRecord(f"{len(stray)} records match no guiding trajectory: {ids[:10]}")
    out = []
    for b in pre.branches:
        recs = groups.get(b.label)
        if recs:
            out.append(WeakTrajectory(b.label, np.array([r.t_k for r in recs]),
                                      np.real(np.array([r.value for r in recs])),
                                      [r.wma_id for r in recs]))
    if stray:
        out.append(WeakTrajectory(None, np.array([r.t_k for r in stray]),
                                  np.real(np.array([r.value for r in stray])),
                                  [r.wma_id for r in stray]))
    return out


# momentum


def weak_momentum_value(state: Superposition, r_f, t, floor=DEFAULT_DENSITY_FLOOR):
    """``-i hbar grad psi / psi`` at ``r_f`` (position postselection at ``t``).

    Raises
    ------
    SingularRegion
        If the density at ``r_f`` is below the node floor.
    """
    r_f = np.asarray(r_f, dtype=float)
    f = evaluate(state, r_f, t)
    rho = np.abs(f.value) ** 2
    if np.any(rho < floor * peak_density(state, t)):
        raise SingularRegion("momentum weak value requested at a node")
    return -1j * state.params.hbar * f.gradient / f.value[..., None]


def _kernel_coefficients(params, traj, axis, x1, t1, t0):
    """Kernel ``K(x1, x0; t1, t0)`` as ``exp(-a x0^2 + b x0 + c)`` up to an x-independent factor."""
    ax = traj.axes[axis]
    (a1, da1, p1), (a0, da0, p0) = ax.amplitude(t1), ax.amplitude(t0)
    d = p1 - p0
    if abs(np.sin(d)) < 1e-14:
        raise ValueError("kernel requested at an exact caustic")
    m, hbar = params.mass, params.hbar
    cot = np.cos(d) / np.sin(d)
    a = -1j / hbar * (-0.5 * m * da0 / a0 + m * hbar * cot / a0**2)
    b = -1j / hbar * 2 * m * hbar * x1 / (a1 * a0 * np.sin(d))
    c = 1j / hbar * (0.5 * m * x1**2 * da1 / a1 + m * hbar * cot * x1**2 / a1**2)
    return a, b, c


def kernel_weak_value(state: Superposition, r_f, t_post, t, observable="position"):
    """Weak value of position or momentum at ``t`` for postselection ``|r_f>`` at ``t_post``.

    ``<r_f| U(t_post, t) A |psi(t)> / <r_f|psi(t_post)>`` with the exact
    kernel, evaluated as Gaussian integrals (no window; the position
    eigenstate is the narrow-window limit).  ``t_post == t`` reduces to
    ``r_f`` for position and ``-i hbar grad psi / psi`` for momentum.
    """
    r_f = np.asarray(r_f, dtype=float)
    if t_post == t:
        if observable == "position":
            return r_f.astype(complex)
        return weak_momentum_value(state, r_f, t)
    params = state.params
    traj = state.branches[0].traj
    lo, hi = min(t, t_post), max(t, t_post)
    for b in state.branches:
        if b.traj.span[0] <= lo and b.traj.span[1] >= hi:
            traj = b.traj
            break
    kern = [_kernel_coefficients(params, traj, j, r_f[..., j], t_post, t) for j in range(2)]
    logs, moments = [], []
    for b in state.branches:
        aJ, bJ, cJ = gaussian_coefficients(b, t)
        I0, mom = [], []
        for j in range(2):
            ka, kb, kc = kern[j]
            A = ka + aJ[j]
            B = kb + bJ[j]
            log_i0 = 0.5 * np.log(np.pi / A) + B * B / (4 * A) + kc + cJ[j]
            I0.append(log_i0)
            x_mean = B / (2 * A)
            if observable == "position":
                mom.append(x_mean)
            elif observable == "momentum":
                mom.append(-1j * params.hbar * (bJ[j] - 2 * aJ[j] * x_mean))
            else:
                raise ValueError(f"unknown observable {observable!r}")
        logs.append(np.log(complex(b.weight)) + I0[0] + I0[1])
        moments.append(np.stack(mom, axis=-1))
    logs = np.array(logs)
    ref = np.max(np.real(logs), axis=0)
    wts = np.exp(logs - ref)
    return np.einsum("p...,p...k->...k", wts, np.array(moments)) / wts.sum(axis=0)[..., None]


def weak_momentum_two_point(state: Superposition, r_f, t, eps):
    """``m (r_f - <r(t - eps)>_W) / eps`` with postselection ``|r_f>`` at ``t``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    r_f = np.asarray(r_f, dtype=float)
    weak_r = kernel_weak_value(state, r_f, t, t - eps, "position")
    return state.params.mass * (r_f - weak_r) / eps


@dataclass
class IdentityResult:
    direct: np.ndarray
    weak: np.ndarray
    residual: float


def _support_grid(state, times, n=301, n_widths=9.0):
    m = state.params.mass
    lo, hi = np.full(2, np.inf), np.full(2, -np.inf)
    for t in times:
        for b in state.branches:
            c = b.traj.position(t)
            s = b.traj.state_at(t).alpha / (2 * np.sqrt(m))
            lo = np.minimum(lo, c - n_widths * s)
            hi = np.maximum(hi, c + n_widths * s)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return xs, ys, np.stack([X, Y], axis=-1)


def _integrate_grid(values, xs, ys):
    from scipy.integrate import trapezoid

    return trapezoid(trapezoid(values, ys, axis=1), xs, axis=0)


def expectation_identity_check(state: Superposition, observable="momentum", t=0.0, t_post=None,
                               n=301):
    """Compare ``<psi|A|psi>`` with ``int rho(r_f, t_post) Re<A(t)>_W(r_f) dr_f``.

    Position postselections at ``t_post`` (default ``t``) form a complete
    set, so the two agree exactly; both sides are computed by quadrature on
    a uniform grid covering the supports.  For ``observable="position"`` with
    ``t_post == t`` the identity is trivial, so pass a later ``t_post``.
    """
    t_post = t if t_post is None else t_post
    xs, ys, R = _support_grid(state, {t, t_post}, n)
    f = evaluate(state, R, t)
    if observable == "position":
        dens = np.conj(f.value)[..., None] * R * f.value[..., None]
    elif observable == "momentum":
        dens = np.conj(f.value)[..., None] * (-1j * state.params.hbar) * f.gradient
    else:
        raise ValueError(f"unknown observable {observable!r}")
    direct = np.real(_integrate_grid(dens, xs, ys))
    rho_post = np.abs(evaluate(state, R, t_post).value) ** 2
    keep = rho_post > 1e-300
    W = np.zeros(R.shape)
    if observable == "momentum" and t_post == t:
        with np.errstate(divide="ignore", invalid="ignore"):
            W = np.real(-1j * state.params.hbar * f.gradient / f.value[..., None])
        W = np.where(keep[..., None], W, 0.0)
    else:
        W[keep] = np.real(kernel_weak_value(state, R[keep], t_post, t, observable))
    weak = np.real(_integrate_grid(rho_post[..., None] * W, xs, ys))
    return IdentityResult(direct, weak, float(np.max(np.abs(direct - weak))))
