import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import MATHIEU, STATIC
from weaktraj import Superposition, make_superposition
from weaktraj.errors import IncompatiblePostselection, SingularRegion, UnassignedRecord
from weaktraj.flow import velocity_field
from weaktraj.wavepacket import GaussianBranch, evaluate
from weaktraj.weak_measure import (
    WMA,
    BranchMatched,
    GaussianPacket,
    MultiBranch,
    PositionPoint,
    assemble_weak_trajectories,
    expectation_identity_check,
    kernel_weak_value,
    postselected_state,
    run_wma_grid,
    weak_momentum_two_point,
    weak_momentum_value,
    weak_position_value,
    wma_lattice,
)


@pytest.fixture(scope="module")
def pair():
    """Two branches whose overlap drops below the crossing share for 0.8 <= t <= 2.2."""
    return make_superposition(MATHIEU, [0, 0], [[2.0, 6.0], [2.0, -6.0]], alpha0=0.8, t1=3.0)


def rotate(state, theta):
    return Superposition(tuple(GaussianBranch(b.label, b.weight * np.exp(1j * theta), b.traj)
                               for b in state.branches))


def test_wma_validation():
    with pytest.raises(ValueError):
        WMA(0, (0, 0), 0.0, 1.0)
    with pytest.raises(ValueError):
        GaussianPacket((0, 0), (0, 0), 1.0, delta_f=-1.0)
    with pytest.raises(ValueError):
        MultiBranch((0, 0), ((1, 0), (0, 1)), (0, 0), 1.0)


def test_self_postselection_reads_wma_location():
    s = make_superposition(STATIC, [0.4, -0.3], [[0.0, 0.0]], weights=[1.0], alpha0=1.0, t1=2)
    rec = weak_position_value(s, s, WMA(0, (0.4, -0.3), 0.25, 0.0))
    assert np.allclose(rec.value.real, [0.4, -0.3], atol=1e-12)
    assert not rec.vanishing and rec.branch == 1


def test_branch_matched_on_trajectory(pair):
    for J in (1, 2):
        for t in (0.8, 1.5, 2.2):
            q = pair.branch(J).traj.position(t)
            rec = weak_position_value(pair, BranchMatched(J), WMA(0, q, 0.25, t))
            assert rec.usable and rec.branch == J
            assert np.max(np.abs(rec.value.real - q)) <= 1e-6
            assert abs(rec.normalization) == pytest.approx(abs(pair.branch(J).weight), abs=1e-4)


def test_disjoint_supports_vanish():
    a = make_superposition(STATIC, [-6, 0], [[0, 0]], weights=[1.0], alpha0=1.0, t1=1)
    b = make_superposition(STATIC, [6, 0], [[0, 0]], weights=[1.0], alpha0=1.0, t1=1)
    rec = weak_position_value(a, b, WMA(0, (0, 0), 0.5, 0.0))
    assert rec.vanishing and np.all(np.isnan(rec.value))


def test_window_far_from_overlap_vanishes(pair):
    rec = weak_position_value(pair, BranchMatched(1), WMA(0, (-8.0, 8.0), 0.25, 1.0))
    assert rec.vanishing and not rec.error


def test_cancellation_raises():
    # chi = psi_1 - psi_2 against psi_1 + psi_2 with identical branches cancels everywhere
    s = make_superposition(STATIC, [0, 0], [[1.0, 0.0]], weights=[1.0], alpha0=1.0, t1=1)
    b = s.branches[0]
    pre = Superposition((GaussianBranch(1, 1.0, b.traj), GaussianBranch(2, 1.0, b.traj)))
    chi = Superposition((GaussianBranch("f", 1.0, b.traj), GaussianBranch("g", -1.0, b.traj)))
    with pytest.raises(IncompatiblePostselection):
        weak_position_value(pre, chi, WMA(0, (0, 0), 0.5, 0.5))
    recs = run_wma_grid(pre, chi, [WMA(0, (0, 0), 0.5, 0.5)])
    assert recs[0].vanishing and "IncompatiblePostselection" in recs[0].error


def test_analytic_matches_quadrature(fig4_state):
    post = MultiBranch((1, 1, 1), tuple(tuple(b.traj.momentum(3.0)) for b in fig4_state.branches),
                       (0.0, 0.0), 3.0)
    chi = postselected_state(fig4_state, post, 0.5)
    for J, t in ((1, 1.0), (3, 2.0)):
        q = fig4_state.branch(J).traj.position(t) + [0.05, -0.03]
        wma = WMA(0, q, 0.35, t)
        a = weak_position_value(fig4_state, post, wma, chi=chi)
        b = weak_position_value(fig4_state, post, wma, "quadrature", chi=chi)
        assert np.max(np.abs(a.value - b.value)) <= 1e-6 * np.max(np.abs(a.value))
        assert abs(a.normalization - b.normalization) <= 1e-8
        assert np.allclose(a.literal, b.literal, rtol=1e-6, atol=1e-9)


def test_global_phase_invariance(pair):
    post = GaussianPacket((1.0, 0.5), (0.5, 1.0), 2.0, delta_f=0.9)
    chi = postselected_state(pair, post, 0.5)
    wma = WMA(0, (0.8, 0.6), 0.4, 1.0)
    base = weak_position_value(pair, post, wma, chi=chi).value
    for th, ph in ((0.3, -1.1), (2.0, 4.0)):
        got = weak_position_value(rotate(pair, th), post, wma, chi=rotate(chi, ph)).value
        assert np.allclose(got, base, rtol=1e-12)


@given(theta=st.floats(0, 2 * np.pi))
def test_property_phase_invariance_momentum(theta):
    s = make_superposition(MATHIEU, [0, 0], [[1.0, 1.0], [1.0, -1.0]], alpha0=1.0, t1=2.0)
    r = np.array([0.3, 0.2])
    assert np.allclose(weak_momentum_value(rotate(s, theta), r, 1.0), weak_momentum_value(s, r, 1.0),
                       rtol=1e-12)


def test_multibranch_coefficients_normalised(fig4_state):
    post = MultiBranch((2, 2, 2), ((1, 0), (0, 1), (1, 1)), (0, 0), 3.0)
    chi = postselected_state(fig4_state, post, 0.0)
    assert np.allclose([abs(b.weight) for b in chi.branches], 1 / np.sqrt(3))


def test_backward_postselection_boundary_values(fig4_state):
    post = GaussianPacket((0.5, -0.5), (2.0, 1.0), 2.5, delta_f=1.1)
    chi = postselected_state(fig4_state, post, 0.0)
    tr = chi.branches[0].traj
    assert np.array_equal(tr.position(2.5), [0.5, -0.5])
    assert np.array_equal(tr.momentum(2.5), [2.0, 1.0])
    assert np.allclose(tr.state_at(2.5).alpha, 1.1)


def test_single_branch_gives_one_trajectory(pair):
    times = np.linspace(0.8, 2.2, 7)
    wmas = wma_lattice(np.linspace(-4, 4, 41), np.linspace(-8, 8, 41), times, 0.25)
    recs = run_wma_grid(pair, BranchMatched(2), wmas)
    trajs = assemble_weak_trajectories(recs, pair)
    assert [w.branch for w in trajs] == [2]
    wt = trajs[0]
    assert np.all(np.diff(wt.t) >= 0)
    q = np.array([pair.branch(2).traj.position(t) for t in wt.t])
    assert np.max(np.abs(wt.points - q)) <= 1e-6
    assert set(np.unique(wt.t)) == set(times)


def test_assembly_empty_and_unassigned(pair):
    assert assemble_weak_trajectories([], pair) == []
    rec = weak_position_value(pair, BranchMatched(1), WMA(0, pair.branch(1).traj.position(1.0),
                                                         0.25, 1.0))
    rec.value = rec.value + 5.0
    with pytest.raises(UnassignedRecord):
        assemble_weak_trajectories([rec], pair)
    out = assemble_weak_trajectories([rec], pair, on_unassigned="collect")
    assert len(out) == 1 and out[0].branch is None


def test_run_grid_order_and_determinism(pair):
    wmas = wma_lattice([0.0, 1.0], [0.5], [1.0, 0.5], 0.3)
    assert [w.id for w in wmas] == [0, 1, 2, 3]
    a = run_wma_grid(pair, BranchMatched(1), wmas)
    b = run_wma_grid(pair, BranchMatched(1), list(wmas))
    assert [r.wma_id for r in a] == [0, 1, 2, 3]
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.value, rb.value, equal_nan=True)


def test_grid_matches_single_records(pair):
    wmas = wma_lattice(np.linspace(0, 2, 5), np.linspace(0, 2, 5), [1.0], 0.3)
    grid = run_wma_grid(pair, BranchMatched(1), wmas)
    for w, r in zip(wmas, grid):
        one = weak_position_value(pair, BranchMatched(1), w)
        assert np.array_equal(one.value, r.value, equal_nan=True) or np.allclose(one.value, r.value)
        assert one.vanishing == r.vanishing and one.crossing == r.crossing


# momentum


def test_momentum_at_center_is_classical(mathieu_single):
    for t in (0.5, 2.0):
        tr = mathieu_single.branches[0].traj
        w = weak_momentum_value(mathieu_single, tr.position(t), t)
        assert np.allclose(w, tr.momentum(t), atol=1e-12)


def test_momentum_imaginary_part(static_branch):
    t = 1.1
    r = static_branch.branches[0].traj.position(t) + [1.0, 0.0]
    w = weak_momentum_value(static_branch, r, t)
    assert w[0].imag == pytest.approx(1.0, rel=1e-12)
    h = 1e-5
    lr = [np.log(np.abs(evaluate(static_branch, r + d, t).value) ** 2) for d in ([h, 0], [-h, 0])]
    assert w[0].imag == pytest.approx(-0.5 * (lr[0] - lr[1]) / (2 * h), rel=1e-8)


def test_momentum_real_part_is_m_v(pair):
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = rng.uniform(0.1, 2.9)
        r = rng.normal(0, 0.7, 2) + [2 * np.sin(t), 0]
        w = weak_momentum_value(pair, r, t)
        assert np.allclose(w.real, pair.params.mass * velocity_field(pair, r, t), rtol=1e-8, atol=1e-8)


def test_momentum_at_node_raises():
    s = make_superposition(STATIC, [0, 0], [[1, 0], [-1, 0]], weights=[1.0, -1.0], alpha0=np.sqrt(2),
                           t1=1)
    with pytest.raises(SingularRegion):
        weak_momentum_value(s, [0.0, 0.1], 0.5)


def test_kernel_weak_value_limits(pair):
    r = np.array([0.7, 0.4])
    assert np.array_equal(kernel_weak_value(pair, r, 1.0, 1.0), r.astype(complex))
    assert np.allclose(kernel_weak_value(pair, r, 1.0, 1.0 - 1e-7, "momentum"),
                       weak_momentum_value(pair, r, 1.0), rtol=1e-5)


def test_position_point_postselection(pair):
    rec = weak_position_value(pair, PositionPoint((0.7, 0.4), 1.2), WMA(0, (0, 0), 0.3, 1.0))
    assert np.allclose(rec.value, kernel_weak_value(pair, [0.7, 0.4], 1.2, 1.0))


def test_two_point_static_center(static_branch):
    t = 1.0
    r = static_branch.branches[0].traj.position(t)
    errs = [abs(weak_momentum_two_point(static_branch, r, t, e)[0].real - np.cos(t))
            for e in (0.1, 0.01, 0.001)]
    assert errs[2] < errs[1] < errs[0] and errs[2] <= 1e-3


def test_two_point_converges(pair):
    r = np.array([1.2, 0.6])
    t = 1.0
    exact = weak_momentum_value(pair, r, t)
    eps = np.array([0.04, 0.02, 0.01, 0.005])
    err = np.array([np.max(np.abs(weak_momentum_two_point(pair, r, t, e) - exact)) for e in eps])
    order = np.log2(err[:-1] / err[1:])
    assert np.all(order >= 0.9)
    small = weak_momentum_two_point(pair, r, t, 1e-3)
    assert np.max(np.abs(small - exact)) <= 1e-2 * np.max(np.abs(exact))
    with pytest.raises(ValueError):
        weak_momentum_two_point(pair, r, t, 0.0)


# identity


def test_identity_momentum_static(static_branch):
    res = expectation_identity_check(static_branch, "momentum", t=1.3)
    assert np.allclose(res.direct, [np.cos(1.3), 0], atol=1e-6)
    assert res.residual <= 1e-6


def test_identity_position_symmetric_pair():
    s = make_superposition(STATIC, [0, 0], [[1.0, 0.5], [-1.0, -0.5]], t1=2)
    res = expectation_identity_check(s, "position", t=0.0, t_post=0.8)
    assert np.allclose(res.direct, 0, atol=1e-12) and np.allclose(res.weak, 0, atol=1e-9)


def test_identity_two_branch_interference(fig1_state):
    t = 1.522
    for obs, tp in (("momentum", t), ("position", t + 0.4)):
        assert expectation_identity_check(fig1_state, obs, t=t, t_post=tp).residual <= 1e-5
