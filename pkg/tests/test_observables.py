import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import STATIC
from weaktraj import OscillatorParams, make_superposition
from weaktraj.observables import (
    classical_crossings,
    disc_nodes,
    match_peaks,
    recurrence_spectrum,
    region_probability,
)


def test_disc_quadrature_area():
    _, w = disc_nodes((1.0, -2.0), 0.3)
    assert w.sum() == pytest.approx(np.pi * 0.09, rel=1e-13)


def test_static_peaks_at_multiples_of_pi(static_branch):
    t = np.linspace(0, 2 * np.pi + 1, 721)
    spectrum = recurrence_spectrum(static_branch, t, (0, 0), 0.2)
    dt = t[1] - t[0]
    assert len(spectrum.peaks) == 2
    assert np.allclose(spectrum.peak_times, [np.pi, 2 * np.pi], atol=dt)
    assert np.all(spectrum.P >= 0) and np.all(spectrum.P <= 1 + 1e-6)


def test_far_branch_gives_no_probability():
    s = make_superposition(STATIC, [0, 0], [[8.0, 0.0]], weights=[1.0], alpha0=np.sqrt(2), t1=2)
    assert region_probability(s, (0, 0), 0.35, np.pi / 2) <= 1e-6


def test_large_region_holds_all_probability(static_branch):
    assert region_probability(static_branch, (0, 0), 12.0, 1.0, n_r=80, n_theta=96) == pytest.approx(
        1.0, abs=1e-6)


def test_crossings_of_sine(static_branch):
    got = classical_crossings(static_branch, (0, 0), (0.5, 2 * np.pi + 1))
    assert [lab for _, lab in got] == [1, 1]
    assert np.allclose([t for t, _ in got], [np.pi, 2 * np.pi], atol=1e-8)


def test_period_four_pi_branch_returns_at_two_pi():
    p = OscillatorParams(v=(1.0, 0.25))
    s = make_superposition(p, [0, 0], [[1.0, 1.0]], weights=[1.0], alpha0=1.0, t1=4 * np.pi + 0.5)
    traj = s.branches[0].traj
    got = classical_crossings([traj], (0, 0), (0.1, 4 * np.pi + 0.4), radius=0.05)
    assert np.allclose([t for t, _ in got], [2 * np.pi, 4 * np.pi], atol=1e-8)


def test_empty_list():
    assert classical_crossings([], (0, 0), (0, 1), radius=0.1) == []


def test_match_peaks_bijection_and_merging():
    assert match_peaks([1.0, 3.0], [1.01, 2.99, 3.0], tol=0.05) == ([], [])
    lonely, missing = match_peaks([1.0, 2.0], [1.0, 4.0], tol=0.05)
    assert lonely == [2.0] and missing == [4.0]


@given(t=st.floats(0.0, 6.0), radius=st.floats(0.05, 3.0))
def test_property_probability_bounded(t, radius):
    s = make_superposition(OscillatorParams(v=1.0, kappa=0.2, omega=0.7), [0, 0],
                           [[2.0, 0.0], [-1.0, 1.7]], alpha0=1.0, t1=6.0)
    P = region_probability(s, (0.3, -0.2), radius, t)
    assert 0.0 <= P <= 1.0 + 1e-6
