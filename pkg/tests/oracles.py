"""Independent reference computations used only by the tests.

Nothing here calls the Ermakov machinery: the classical path comes from a
Taylor-series integration of ``q'' + V(t) q = 0`` in extended precision and
the wavefunction from a split-step Fourier solution of the TDSE on a grid.
The residual helpers take the package's states as input and differentiate
them in time by finite differences.
"""

import mpmath
import numpy as np
from scipy.integrate import solve_ivp


def direct_path_mp(v, kappa, omega, q0, p0, times, mass=1.0, dps=25):
    """``q(t)`` for ``q'' + (v - kappa cos 2 omega t) q = 0`` via mpmath's Taylor ODE solver."""
    mpmath.mp.dps = dps
    try:
        f = mpmath.odefun(
            lambda t, y: [y[1], -(v - kappa * mpmath.cos(2 * omega * t)) * y[0]],
            0, [mpmath.mpf(q0), mpmath.mpf(p0) / mass],
        )
        return np.array([float(f(mpmath.mpf(float(t)))[0]) for t in times])
    finally:
        mpmath.mp.dps = 15


def direct_path_lsoda(v, kappa, omega, q0, p0, times, mass=1.0):
    """Cheaper second oracle for the same path (LSODA, tight tolerances)."""
    sol = solve_ivp(
        lambda t, y: [y[1], -(v - kappa * np.cos(2 * omega * t)) * y[0]],
        (0.0, float(np.max(times))), [q0, p0 / mass], method="LSODA",
        rtol=1e-12, atol=1e-14, dense_output=True,
    )
    return sol.sol(np.asarray(times))[0]


def split_step_2d(psi0, L, n, potential, t1, dt, mass=1.0, hbar=1.0):
    """Strang split-step Fourier propagation on ``[-L, L)^2`` with ``n^2`` points.

    ``potential(X, Y, t)`` returns the potential energy on the grid.
    Returns ``(x, psi(t1))``.
    """
    x = np.linspace(-L, L, n, endpoint=False)
    X, Y = np.meshgrid(x, x, indexing="ij")
    k = 2 * np.pi * np.fft.fftfreq(n, d=x[1] - x[0])
    KX, KY = np.meshgrid(k, k, indexing="ij")
    kin = np.exp(-1j * hbar * (KX**2 + KY**2) * dt / (2 * mass))
    psi = psi0(X, Y).astype(complex)
    steps = int(round(t1 / dt))
    t = 0.0
    for _ in range(steps):
        psi *= np.exp(-0.5j * potential(X, Y, t) * dt / hbar)
        psi = np.fft.ifft2(kin * np.fft.fft2(psi))
        psi *= np.exp(-0.5j * potential(X, Y, t + dt) * dt / hbar)
        t += dt
    return x, psi


def central_gradient(f, r, h=1e-5):
    """Central-difference gradient of a scalar function of a 2-vector."""
    r = np.asarray(r, float)
    out = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        out.append((f(r + e) - f(r - e)) / (2 * h))
    return np.array(out)


def central_laplacian(f, r, h=1e-4):
    r = np.asarray(r, float)
    total = -4 * f(r)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        total = total + f(r + e) + f(r - e)
    return total / h**2


def textbook_action(omega, mass, x1, x0, dt):
    """Classical action of the static harmonic oscillator."""
    return mass * omega / 2 * ((x1**2 + x0**2) / np.tan(omega * dt) - 2 * x1 * x0 / np.sin(omega * dt))


def tdse_residual(state, r, t, h=1e-5):
    """``|i hbar d_t psi - H psi|`` and ``|H psi|`` with d_t by central differences."""
    from weaktraj import evaluate

    p = state.params
    f = evaluate(state, r, t)
    dpsi = (evaluate(state, r, t + h).value - evaluate(state, r, t - h).value) / (2 * h)
    pot = 0.5 * p.mass * (p.V(0, t) * r[..., 0] ** 2 + p.V(1, t) * r[..., 1] ** 2)
    H = -p.hbar**2 / (2 * p.mass) * f.laplacian + pot * f.value
    return np.abs(1j * p.hbar * dpsi - H), np.abs(H)


def continuity_residual(state, r, t, h=1e-5):
    """``|d_t rho + div j|`` and the size of its two terms, d_t by central differences."""
    from weaktraj import density, evaluate

    f = evaluate(state, r, t)
    drho = (density(state, r, t + h) - density(state, r, t - h)) / (2 * h)
    p = state.params
    div_j = (p.hbar / p.mass) * np.imag(np.conj(f.value) * f.laplacian)
    return np.abs(drho + div_j), np.abs(drho) + np.abs(div_j)
