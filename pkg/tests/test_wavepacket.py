import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from conftest import MATHIEU, STATIC
from oracles import (
    central_gradient,
    central_laplacian,
    split_step_2d,
    tdse_residual,
    textbook_action,
)
from weaktraj import (
    Superposition,
    density,
    evaluate,
    grad_log_density,
    make_superposition,
    propagator_1d,
)
from weaktraj.errors import CausticError, OutOfRange
from weaktraj.wavepacket import (
    axis_wavefunction,
    classical_action,
    inner_product,
    norm,
    propagate_by_kernel,
    value_and_gradient,
)


def grid(L=9.0, n=361):
    x = np.linspace(-L, L, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return x, np.stack([X, Y], axis=-1)


def test_center_density_static():
    s = make_superposition(STATIC, [0, 0], [[0, 0]], weights=[1.0], alpha0=np.sqrt(2), t1=3)
    for t in (0.0, 1.0, 2.5):
        assert density(s, s.branches[0].traj.position(t), t) == pytest.approx(1 / np.pi, rel=1e-12)


@pytest.mark.parametrize("t", [0.0, 1.0, 2.0])
def test_unit_norm_on_grid(static_branch, mathieu_single, t):
    x, R = grid()
    for s in (static_branch, mathieu_single):
        rho = density(s, R, t)
        assert trapezoid(trapezoid(rho, x), x) == pytest.approx(1.0, abs=1e-6)
        assert norm(s, t) == pytest.approx(1.0, abs=1e-12)


def test_against_split_step_tdse(static_branch):
    def psi0(X, Y):
        return evaluate(static_branch, np.stack([X, Y], -1), 0.0).value

    x, psi = split_step_2d(psi0, 10.0, 128, lambda X, Y, t: 0.5 * (X**2 + Y**2), 1.0, 1e-3)
    X, Y = np.meshgrid(x, x, indexing="ij")
    exact = evaluate(static_branch, np.stack([X, Y], -1), 1.0).value
    assert np.max(np.abs(psi - exact)) <= 1e-5


def test_mathieu_against_split_step_tdse(mathieu_single):
    def psi0(X, Y):
        return evaluate(mathieu_single, np.stack([X, Y], -1), 0.0).value

    def pot(X, Y, t):
        return 0.5 * MATHIEU.V(0, t) * (X**2 + Y**2)

    x, psi = split_step_2d(psi0, 10.0, 128, pot, 1.0, 1e-3)
    X, Y = np.meshgrid(x, x, indexing="ij")
    exact = evaluate(mathieu_single, np.stack([X, Y], -1), 1.0).value
    assert np.max(np.abs(psi - exact)) <= 1e-5


@pytest.mark.parametrize("which", ["static_branch", "mathieu_single", "mathieu_three"])
def test_tdse_residual(which, request):
    s = request.getfixturevalue(which)
    rng = np.random.default_rng(3)
    t = rng.uniform(0.1, 3.5, 300)
    r = np.array([s.branches[0].traj.position(tt) for tt in t]) + rng.normal(0, 1.0, (300, 2))
    res, H = np.array([tdse_residual(s, ri, ti) for ri, ti in zip(r, t)]).T
    assert np.max(res) <= 1e-5 * np.max(H)


def test_derivatives_match_finite_differences(mathieu_three):
    rng = np.random.default_rng(7)
    for _ in range(40):
        t = rng.uniform(0.2, 3.5)
        r = rng.normal(0, 1.5, 2)
        f = evaluate(mathieu_three, r, t, order=3)

        def val(x):
            return evaluate(mathieu_three, x, t).value

        g = central_gradient(val, r, 1e-5)
        assert np.max(np.abs(g - f.gradient)) <= 1e-6 * max(1e-3, np.max(np.abs(f.gradient)))
        lap = central_laplacian(val, r, 1e-4)
        assert abs(lap - f.laplacian) <= 1e-6 * max(1.0, abs(f.laplacian)) + 1e-6
        for j in range(2):
            hj = central_gradient(lambda x: evaluate(mathieu_three, x, t).gradient[j], r, 1e-5)
            assert np.max(np.abs(hj - f.hessian[j])) <= 1e-6 * max(1.0, np.max(np.abs(f.hessian)))
            tj = central_gradient(lambda x: evaluate(mathieu_three, x, t).hessian[j, j], r, 1e-5)
            assert np.max(np.abs(tj - f.third[j, j])) <= 1e-5 * max(1.0, np.max(np.abs(f.third)))


def test_value_and_gradient_matches_evaluate(mathieu_three):
    r = np.random.default_rng(0).normal(0, 1, (20, 2))
    v, g = value_and_gradient(mathieu_three, r, 1.3)
    f = evaluate(mathieu_three, r, 1.3)
    assert np.allclose(v, f.value, rtol=1e-13, atol=1e-300)
    assert np.allclose(g, f.gradient, rtol=1e-13, atol=1e-300)


def test_linearity(mathieu_three):
    r = np.random.default_rng(1).normal(0, 1, (30, 2))
    total = evaluate(mathieu_three, r, 2.2).value
    parts = sum(b.weight * evaluate(Superposition((b.__class__(b.label, 1.0, b.traj),)), r, 2.2).value
                for b in mathieu_three.branches)
    assert np.array_equal(total, parts) or np.allclose(total, parts, rtol=1e-15, atol=1e-300)


def test_peak_tracks_guiding_trajectory(mathieu_single):
    x = np.linspace(-5, 5, 1001)
    for t in (0.5, 1.7, 3.1):
        q = mathieu_single.branches[0].traj.position(t)
        rho_x = density(mathieu_single, np.stack([x, np.full_like(x, q[1])], -1), t)
        assert abs(x[np.argmax(rho_x)] - q[0]) <= x[1] - x[0]


def test_grad_log_density(static_branch):
    t = 0.9
    q = static_branch.branches[0].traj.position(t)
    g, sing = grad_log_density(static_branch, q, t)
    assert np.allclose(g, 0, atol=1e-12) and not sing
    g, _ = grad_log_density(static_branch, q + [1.0, 0.0], t)
    assert g[0] == pytest.approx(-2.0, rel=1e-12)
    fd = central_gradient(lambda r: np.log(density(static_branch, r, t)), q + [1.0, 0.0], 1e-5)
    assert np.allclose(g, fd, atol=1e-8)


def test_node_is_flagged():
    s = make_superposition(STATIC, [0, 0], [[1.0, 0.0], [-1.0, 0.0]], weights=[1.0, -1.0],
                           alpha0=np.sqrt(2), t1=2)
    # the antisymmetric pair vanishes identically on the y axis
    _, sing = grad_log_density(s, [0.0, 0.3], 0.7)
    assert sing


def test_out_of_range(static_branch):
    with pytest.raises(OutOfRange):
        evaluate(static_branch, [0, 0], 100.0)


def test_inner_product_matches_quadrature(mathieu_three):
    x, R = grid(10, 401)
    for t in (0.0, 1.5):
        rho = density(mathieu_three, R, t)
        assert trapezoid(trapezoid(rho, x), x) == pytest.approx(norm(mathieu_three, t), abs=1e-9)
    single = Superposition((mathieu_three.branches[0],))
    ip = inner_product(single, mathieu_three, 1.0)
    a = evaluate(single, R, 1.0).value
    b = evaluate(mathieu_three, R, 1.0).value
    assert abs(trapezoid(trapezoid(np.conj(a) * b, x), x) - ip) <= 1e-9


def test_static_action_is_textbook(static_branch):
    traj = static_branch.branches[0].traj
    x1, x0 = np.meshgrid(np.linspace(-2, 2, 7), np.linspace(-2, 2, 7))
    for t1 in (0.4, 1.3, 2.9):
        ours = classical_action(STATIC, 0, x1, x0, t1, 0.0, traj)
        assert np.allclose(ours, textbook_action(1.0, 1.0, x1, x0, t1), rtol=1e-12, atol=1e-12)


def test_propagator_reproduction_static(static_branch):
    x = np.linspace(-5, 5, 41)
    x0 = np.linspace(-14, 14, 8001)
    b = static_branch.branches[0]
    for axis in (0, 1):
        got = propagate_by_kernel(b, axis, x, 0.7, 0.0, x0)
        assert np.max(np.abs(got - axis_wavefunction(b, axis, x, 0.7))) <= 1e-6


def test_propagator_reproduction_mathieu():
    s = make_superposition(MATHIEU, [0.4, 0], [[1.0, 0.0]], weights=[1.0], t1=1.0)
    b = s.branches[0]
    x = np.linspace(-5, 5, 41)
    x0 = np.linspace(-14, 14, 8001)
    got = propagate_by_kernel(b, 0, x, 0.5, 0.0, x0)
    assert np.max(np.abs(got - axis_wavefunction(b, 0, x, 0.5))) <= 1e-5


def test_kernel_independent_of_ermakov_solution():
    a = make_superposition(MATHIEU, 0, [[0, 0]], weights=[1.0], alpha0=1.0, t1=2)
    b = make_superposition(MATHIEU, 1, [[2, 0]], weights=[1.0], alpha0=1.7, t1=2)
    ka = propagator_1d(MATHIEU, 0, 0.3, -0.8, 1.2, 0.1, a.branches[0].traj)
    kb = propagator_1d(MATHIEU, 0, 0.3, -0.8, 1.2, 0.1, b.branches[0].traj)
    assert ka == pytest.approx(kb, rel=1e-9)


def test_propagator_beyond_first_caustic(static_branch):
    # one caustic crossed: the Maslov step keeps the reproduction property
    b = static_branch.branches[0]
    x = np.linspace(-4, 4, 17)
    x0 = np.linspace(-14, 14, 8001)
    got = propagate_by_kernel(b, 0, x, 4.0, 0.0, x0)
    assert np.max(np.abs(got - axis_wavefunction(b, 0, x, 4.0))) <= 1e-6


def test_caustic_raises(static_branch):
    traj = static_branch.branches[0].traj
    with pytest.raises(CausticError):
        propagator_1d(STATIC, 0, 0.1, 0.2, np.pi, 0.0, traj)
    with pytest.raises(CausticError):
        propagator_1d(STATIC, 0, 0.1, 0.2, np.pi + 5e-4, 0.0, traj)


@given(theta=st.floats(0, 2 * np.pi), t=st.floats(0.0, 3.0))
def test_property_global_phase_leaves_density(theta, t):
    base = make_superposition(MATHIEU, [0.1, 0], [[1.0, 0.0], [0.0, 1.0]], t1=3.0)
    rot = Superposition(tuple(b.__class__(b.label, b.weight * np.exp(1j * theta), b.traj)
                              for b in base.branches))
    r = np.array([[0.3, -0.4], [1.0, 0.2]])
    assert np.allclose(density(base, r, t), density(rot, r, t), rtol=1e-12)
