import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isostables.fields import inverse_map
from isostables.flow import KoopmanSpectrum
from isostables.models import hopf_amplitude
from isostables.reduction import (
    FastTimescaleWarning, FieldBundle, InputSignal, ReducedState, ReductionError,
    classic_pulse_map, compare_full, compute_prc, finite_responses, full_pulses, pulse_map,
    simulate_classic_phase, simulate_reduced, wrap,
)

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def bundle(hopf_fields):
    F = hopf_fields
    im = inverse_map(F["phase"], F["amplitude"], np.linspace(0, TWO_PI, 128, endpoint=False),
                     np.linspace(-1.5, 0.3, 91))
    return FieldBundle(F["phase"], F["amplitude"], {0: F["prf1"], 1: F["prf2"]},
                       {0: F["irf1"], 1: F["irf2"]}, im)


def _exact(X):
    X = np.atleast_2d(X)
    return np.mod(np.arctan2(X[:, 1], X[:, 0]), TWO_PI), hopf_amplitude(np.hypot(X[:, 0], X[:, 1]))


@given(st.floats(-100.0, 100.0))
def test_wrap(a):
    w = float(wrap(a))
    assert -math.pi < w <= math.pi
    assert abs(math.remainder(w - a, TWO_PI)) < 1e-9


def test_reduced_state_wraps():
    assert ReducedState(-0.5, 0.1).theta == pytest.approx(TWO_PI - 0.5)


def test_input_validation():
    with pytest.raises(ValueError):
        InputSignal("noise")
    with pytest.raises(ValueError):
        InputSignal.pulses(1.0, 0.0, [1.0, 0.0])


def test_unforced_reduced_flow_is_exact(bundle, hopf_spectrum):
    zero = InputSignal("continuous", lambda x, t: np.zeros(2))
    x0 = np.array([0.0, 1.4])
    red = simulate_reduced(bundle, hopf_spectrum, x0, zero, 5.0, 0.05)
    th0, r0 = bundle.theta(x0), bundle.r(x0)
    assert np.abs(wrap(red.theta - (th0 + hopf_spectrum.omega * red.t))).max() < 1e-12
    assert np.abs(red.r - r0 * np.exp(hopf_spectrum.sigma * red.t)).max() < 1e-15


def test_forced_radial_hopf_matches_full_model(hopf, bundle, hopf_spectrum):
    inp = InputSignal.sinusoid(0.3, 1.3, 2, component=0)
    x0 = np.array([0.0, 1.4])
    red = simulate_reduced(bundle, hopf_spectrum, x0, inp, 6.0, 0.01)
    cmp = compare_full(hopf, bundle, red, x0, inp)
    assert cmp.metrics["max_phase_error"] < 2e-2
    assert cmp.metrics["trajectory_rms"] < 2e-2
    th, r = _exact(cmp.full.x)
    assert np.abs(wrap(red.theta[: len(th)] - th)).max() < 2e-2


def test_missing_response_field(bundle, hopf_spectrum):
    partial = FieldBundle(bundle.phase, bundle.amplitude, {0: bundle.prf[0]}, {0: bundle.irf[0]},
                          bundle.inverse)
    inp = InputSignal.sinusoid(0.3, 1.3, 2, component=1)
    with pytest.raises(ReductionError, match="x2"):
        simulate_reduced(partial, hopf_spectrum, [0.0, 1.4], inp, 1.0, 0.1)
    with pytest.raises(ValueError, match="continuous"):
        simulate_reduced(bundle, hopf_spectrum, [0.0, 1.4], InputSignal.pulses(1, 1, [1, 0]), 1, 0.1)


def test_infinitesimal_consistency(bundle):
    d = np.array([1.0, 0.0])
    for th, r in [(0.7, 0.1), (2.0, -0.2), (4.5, 0.0)]:
        x = bundle.inverse(th, r)
        zt, zr = bundle.responses(x)
        e1, e2 = 1e-2, 1e-3
        D1 = np.array(finite_responses(bundle, th, r, e1, d)) / e1
        D2 = np.array(finite_responses(bundle, th, r, e2, d)) / e2
        rich = (D2 * e1 - D1 * e2) / (e1 - e2)
        assert abs(rich[0] - zt[0]) < 5e-2 * max(abs(zt[0]), 0.1)
        assert abs(rich[1] - zr[0]) < 5e-2 * max(abs(zr[0]), 0.1)


def test_pulse_map_without_kicks(bundle, hopf_spectrum):
    th, r = pulse_map(bundle, hopf_spectrum, (0.3, 0.2), 0.0, 0.7, [1.0, 0.0], 5)
    n = np.arange(6)
    assert np.allclose(th, 0.3 + n * hopf_spectrum.omega * 0.7, atol=1e-14)
    assert np.allclose(r, 0.2 * np.exp(hopf_spectrum.sigma * 0.7 * n), atol=1e-15)


def test_pulse_map_tracks_radial_hopf(hopf, bundle, hopf_spectrum):
    d = [0.3, 0.0]
    x0 = np.array([1.0, 0.0])
    X = full_pulses(hopf, x0, 1.0, 1.0, d, 8)
    th_full, r_full = _exact(X)
    th, r = pulse_map(bundle, hopf_spectrum, (0.0, 0.0), 1.0, 1.0, d, 8)
    assert np.abs(wrap(th - th_full)).max() < 1e-2
    assert np.abs(r - r_full).max() < 1e-2


def test_pulse_map_error_outside_fields(bundle, hopf_spectrum):
    with pytest.raises(ReductionError, match="pulse 1"):
        pulse_map(bundle, hopf_spectrum, (0.0, 0.0), 5.0, 1.0, [1.0, 0.0], 3)


def test_fast_timescale_warning():
    sp = KoopmanSpectrum(1.0, (-0.5, -1.0))
    with pytest.warns(FastTimescaleWarning):
        pulse_map(None, sp, (0.0, 0.0), 0.0, 0.5, [1.0], 2)


def test_radial_hopf_prc(hopf, hopf_orbit, hopf_spectrum):
    prc = compute_prc(hopf, hopf_orbit, hopf_spectrum, components=(0, 1))
    th = np.linspace(0, TWO_PI, 17)
    z = prc(th)
    assert np.abs(z[0] + np.sin(th)).max() < 1e-6
    assert np.abs(z[1] - np.cos(th)).max() < 1e-6
    kicked = classic_pulse_map(prc, hopf_spectrum, 0.0, 0.0, 0.4, [1.0, 0.0], 4)
    assert np.allclose(kicked, 0.8 * np.arange(5))


def test_classic_phase_without_input(hopf_orbit, hopf_spectrum, hopf, tmp_path):
    prc = compute_prc(hopf, hopf_orbit, hopf_spectrum)
    zero = InputSignal("continuous", lambda x, t: np.zeros(2))
    res = simulate_classic_phase(prc, hopf_spectrum, 0.5, zero, 2.0, 0.1)
    assert np.allclose(res.theta, np.mod(0.5 + 2.0 * res.t, TWO_PI), atol=1e-12)
    assert np.allclose(res.r, 0.0)
    res.to_csv(tmp_path / "c.csv", full=res)
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "t,theta,r,x1,x2,theta_full,r_full,x1_full,x2_full"
