"""Recurrence spectrum of a small region and classical returns of guiding trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .wavepacket import Superposition, evaluate, norm

DEFAULT_PROMINENCE = 0.05  # fraction of max P
DEFAULT_RADIUS_FACTOR = 0.25  # times alpha0


@dataclass
class RecurrenceSpectrum:
    center: np.ndarray
    radius: float
    t: np.ndarray
    P: np.ndarray
    peaks: list  # (t_rec, height)

    @property
    def peak_times(self):
        return np.array([p[0] for p in self.peaks])


def disc_nodes(center, radius, n_r=24, n_theta=48):
    """Polar quadrature on a disc: Gauss-Legendre in r, trapezoid in theta."""
    g, gw = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * radius * (g + 1)
    wr = 0.5 * radius * gw * r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = np.asarray(center, float) + np.stack(
        [r[:, None] * np.cos(th), r[:, None] * np.sin(th)], axis=-1
    )
    weights = wr[:, None] * np.full(n_theta, 2 * np.pi / n_theta)
    return pts, weights


def default_radius(state: Superposition):
    return DEFAULT_RADIUS_FACTOR * min(min(b.traj.alpha_ref) for b in state.branches)


def region_probability(state: Superposition, center, radius, t, n_r=24, n_theta=48):
    """Probability of finding the particle in the disc, relative to the exact total norm."""
    pts, w = disc_nodes(center, radius, n_r, n_theta)
    return float(np.sum(w * np.abs(evaluate(state, pts, t).value) ** 2)) / norm(state, state.span[0])


def recurrence_spectrum(state: Superposition, t_grid, center=(0.0, 0.0), radius=None,
                        prominence=DEFAULT_PROMINENCE, n_r=24, n_theta=48) -> RecurrenceSpectrum:
    """Probability mass ``P(t)`` inside a disc and its peaks.

    ``P`` is divided by the exact norm, so unnormalised weights still give
    a probability.  Peaks are interior local maxima whose prominence exceeds
    ``prominence * max(P)``.
    """
    radius = default_radius(state) if radius is None else float(radius)
    if not radius > 0:
        raise ValueError("region radius must be > 0")
    t_grid = np.asarray(t_grid, dtype=float)
    pts, w = disc_nodes(center, radius, n_r, n_theta)
    total = norm(state, state.span[0])  # conserved; a fixed time keeps chunked runs identical
    P = np.array([np.sum(w * np.abs(evaluate(state, pts, t).value) ** 2) for t in t_grid]) / total
    return recurrence_spectrum_from_series(t_grid, P, center, radius, prominence)


def recurrence_spectrum_from_series(t_grid, P, center, radius, prominence=DEFAULT_PROMINENCE):
    """Peak detection on an already sampled ``P(t)``."""
    t_grid = np.asarray(t_grid, dtype=float)
    P = np.asarray(P, dtype=float)
    top = P.max() if len(P) else 0.0
    idx, _ = find_peaks(P, prominence=prominence * top if top > 0 else np.inf)
    peaks = [(float(t_grid[i]), float(P[i])) for i in idx]
    return RecurrenceSpectrum(np.asarray(center, float), float(radius), t_grid, P, peaks)


def _labelled(trajs):
    if isinstance(trajs, Superposition):
        return [(b.label, b.traj) for b in trajs.branches]
    if isinstance(trajs, dict):
        return list(trajs.items())
    return list(enumerate(trajs, start=1))


def classical_crossings(trajs, center=(0.0, 0.0), t_span=None, radius=None, n_samples=4000):
    """Times at which guiding trajectories pass within ``radius`` of ``center``.

    Interior local minima of ``|q^J(t) - center|`` are located on a dense
    sample grid and refined by bounded scalar minimisation.  ``radius``
    defaults to a quarter of the smallest initial width.  Returns
    ``[(t, J), ...]`` sorted by time.
    """
    items = _labelled(trajs)
    if not items:
        return []
    center = np.asarray(center, float)
    if radius is None:
        radius = DEFAULT_RADIUS_FACTOR * min(min(tr.alpha_ref) for _, tr in items)
    out = []
    for label, tr in items:
        lo, hi = tr.span if t_span is None else t_span
        ts = np.linspace(lo, hi, n_samples)

        def dist(t):
            return float(np.linalg.norm(tr.position(t) - center))

        d = np.linalg.norm(tr.position(ts) - center, axis=-1)
        for i in range(1, len(ts) - 1):
            if d[i] <= d[i - 1] and d[i] < d[i + 1]:
                res = minimize_scalar(dist, bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                                      options={"xatol": 1e-12})
                if res.fun < radius:
                    out.append((float(res.x), label))
    return sorted(out, key=lambda x: (x[0], str(x[1])))


def match_peaks(peak_times, crossing_times, tol):
    """Pair peaks with crossing events that lie within ``tol``.

    Crossings closer than ``tol`` to each other (several branches returning
    together) count as one event.  Returns ``(unmatched_peaks,
    unmatched_events)``; both empty means a bijection.
    """
    events = []
    for t in sorted(crossing_times):
        if events and t - events[-1][-1] <= tol:
            events[-1].append(t)
        else:
            events.append([t])
    centers = [0.5 * (e[0] + e[-1]) for e in events]
    peaks = sorted(peak_times)
    used = set()
    lonely = []
    for p in peaks:
        cand = [i for i, c in enumerate(centers) if i not in used and abs(p - c) <= tol]
        if cand:
            used.add(min(cand, key=lambda i: abs(p - centers[i])))
        else:
            lonely.append(p)
    missing = [centers[i] for i in range(len(centers)) if i not in used]
    return lonely, missing
