import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isostables.averages import (
    RHO, AverageRequest, DegenerateObservable, HorizonBlowup, OutsideBasin, VariationalBlowup,
    evaluate_batch, fourier_average, fourier_gradient_average, fourier_request,
    laplace_average, laplace_gradient_average, laplace_request, phase_reference, phase_values,
    prf_values, tune_horizon, window_horizons,
)
from isostables.flow import IntegratorOptions, integrate, integrate_prolonged
from isostables.models import Model, PolynomialField, builtin_model, hopf_amplitude, polynomial_model

TIGHT = IntegratorOptions("DOP853", rtol=1e-11, atol=1e-13)


def test_request_validation():
    with pytest.raises(ValueError, match="unknown average kind"):
        AverageRequest("mean", 1j, (1.0,))
    with pytest.raises(ValueError, match="increasing"):
        AverageRequest("fourier", 1j, (2.0, 1.0))
    with pytest.raises(ValueError, match="sample_dt"):
        AverageRequest("fourier", 1j, (1.0,), sample_dt=2.0)
    with pytest.raises(ValueError, match="Re\\(lambda\\) < 0"):
        AverageRequest("laplace", 0.5, (1.0,), observable=RHO)
    with pytest.raises(ValueError, match="rho_minus_one"):
        AverageRequest("laplace", -0.5, (1.0,), observable=0)
    with pytest.raises(ValueError, match="purely imaginary"):
        AverageRequest("fourier", -0.1 + 1j, (1.0,))
    with pytest.raises(ValueError, match="direction"):
        AverageRequest("fourier_gradient", 1j, (1.0,))


@given(st.floats(5.0, 50.0), st.floats(0.5, 4.0), st.integers(1, 80))
def test_window_horizons(T, period, count):
    if T - period <= 0:
        return
    hz = window_horizons(T, period, count)
    assert len(hz) == count and hz[-1] == T
    assert np.allclose(np.diff(hz), period / count)


@given(st.floats(0.0, 3.0), st.floats(4.0, 10.0), st.floats(0.01, 0.5),
       st.sampled_from(["fourier", "laplace"]))
def test_quadrature_weights_sum_to_one(t_skip, T, dt, kind):
    if kind == "fourier":
        req = AverageRequest("fourier", 1j, (T, T + 1.0), dt, t_skip=t_skip)
    else:
        req = AverageRequest("laplace", -1.0, (T, T + 1.0), dt, observable=RHO)
    assert sum(req.weights().values()) == pytest.approx(1.0, abs=1e-12)


def _laplace(spectrum, T=8.0):
    return laplace_request(spectrum, T)


@pytest.mark.parametrize("r0,expected,tol", [(math.sqrt(2), 0.25, 1e-4), (0.5, -1.5, 1e-3),
                                              (1.0, 0.0, 1e-6), (1.7, None, 1e-4)])
def test_laplace_radial_hopf(hopf, hopf_chart, hopf_spectrum, r0, expected, tol):
    value = laplace_average(hopf, hopf_chart, _laplace(hopf_spectrum), [0.0, r0])
    if expected is None:
        expected = float(hopf_amplitude(r0))
    assert abs(value.imag) == 0
    assert value.real == pytest.approx(expected, abs=tol)


def test_radial_hopf_isochrons_are_rays(hopf, hopf_orbit, hopf_spectrum):
    fr = fourier_request(hopf_spectrum)
    ref = phase_reference(hopf, fr, hopf_orbit)
    th0 = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    for r0 in (0.4, 1.0, 1.8):
        X = np.stack([r0 * np.cos(th0), r0 * np.sin(th0)])
        phi = evaluate_batch(hopf, None, [fr], X).values[0]
        theta = phase_values(phi, ref)
        assert np.abs(np.mod(theta - th0 + 1, 2 * np.pi) - 1).max() < 1e-6


def test_gauge_point_has_zero_phase(vdp, vdp_orbit, vdp_spectrum):
    fr = fourier_request(vdp_spectrum)
    ref = phase_reference(vdp, fr, vdp_orbit)
    phi = fourier_average(vdp, None, fr, vdp_orbit.evaluate(0.0))
    assert abs(phase_values(np.array([phi]), ref)[0]) < 1e-12


def test_phase_advances_along_trajectory(vdp, vdp_spectrum):
    fr = fourier_request(vdp_spectrum)
    x0 = np.array([0.5, -1.5])
    for t in (0.7, 3.0, 9.5):
        xt = integrate(vdp, x0, t, TIGHT).final
        a = fourier_average(vdp, None, fr, x0)
        b = fourier_average(vdp, None, fr, xt)
        d = np.angle(b) - np.angle(a) - vdp_spectrum.omega * t
        assert abs(math.remainder(d, 2 * math.pi)) < 1e-4
        assert abs(abs(b) - abs(a)) < 1e-3 * abs(a)


@given(st.floats(0.5, 2.8), st.floats(0.0, 2 * math.pi), st.floats(0.1, 6.0))
def test_laplace_eigenfunction_identity(vdp, vdp_chart, vdp_spectrum, rho, vt, t):
    lr = laplace_request(vdp_spectrum, 20.0)
    x = vdp_chart.g(vt, rho)
    xt = integrate(vdp, x, t, TIGHT).final
    a = laplace_average(vdp, vdp_chart, lr, x).real
    if abs(a) < 1e-3:
        return
    b = laplace_average(vdp, vdp_chart, lr, xt).real
    assert abs(b - math.exp(vdp_spectrum.sigma * t) * a) < 1e-2 * abs(a)


@given(st.floats(0.5, 2.0), st.floats(0.0, 2 * math.pi), st.floats(0.2, 3.0),
       st.floats(0.0, 2 * math.pi))
def test_variational_eigenfunction_identity(vdp, vdp_chart, vdp_spectrum, rho, vt, t, ang):
    lr = laplace_request(vdp_spectrum, 20.0)
    x = vdp_chart.g(vt, rho)
    dx = np.array([math.cos(ang), math.sin(ang)])
    traj = integrate_prolonged(vdp, x, t, TIGHT)
    a = laplace_gradient_average(vdp, vdp_chart, lr, x, dx).real
    if abs(a) < 1e-2:
        return
    b = laplace_gradient_average(vdp, vdp_chart, lr, traj.final, traj.monodromy @ dx).real
    assert abs(b - math.exp(vdp_spectrum.sigma * t) * a) < 2e-2 * abs(a)


def test_amplitude_sign_convention(vdp, vdp_chart, vdp_spectrum):
    lr = laplace_request(vdp_spectrum, 20.0)
    th = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    outside = evaluate_batch(vdp, vdp_chart, [lr], vdp_chart.g(th, 1.3)).values[0].real
    inside = evaluate_batch(vdp, vdp_chart, [lr], vdp_chart.g(th, 0.7)).values[0].real
    assert np.all(outside > 0) and np.all(inside < 0)


def test_radial_hopf_response_functions_on_cycle(hopf, hopf_chart, hopf_spectrum):
    fr = fourier_request(hopf_spectrum)
    lr = _laplace(hopf_spectrum)
    for th in (0.0, 1.1, 4.0):
        x = np.array([math.cos(th), math.sin(th)])
        radial, tangential = x, np.array([-math.sin(th), math.cos(th)])
        phi = fourier_average(hopf, None, fr, x)
        prf_t = prf_values(fourier_gradient_average(hopf, fr, x, tangential), phi)
        prf_r = prf_values(fourier_gradient_average(hopf, fr, x, radial), phi)
        assert prf_t == pytest.approx(1.0, abs=1e-6) and prf_r == pytest.approx(0.0, abs=1e-6)
        irf_r = laplace_gradient_average(hopf, hopf_chart, lr, x, radial).real
        irf_t = laplace_gradient_average(hopf, hopf_chart, lr, x, tangential).real
        assert irf_r == pytest.approx(1.0, abs=1e-6) and irf_t == pytest.approx(0.0, abs=1e-6)


def _escaping_model():
    return polynomial_model(PolynomialField(2, {(2, 0): [1.0, 0.0]}), "escape")


def test_outside_basin():
    req = AverageRequest("fourier", 1j, (5.0,), 0.1)
    with pytest.raises(OutsideBasin, match="outside basin"):
        fourier_average(_escaping_model(), None, req, [2.0, 0.0],
                        IntegratorOptions("rk4", dt=0.01))
    res = evaluate_batch(_escaping_model(), None, [req], np.array([[2.0, -0.5], [0.0, 0.0]]),
                         IntegratorOptions("rk4", dt=0.01))
    assert list(res.status) == [1, 0]


def test_horizon_blowup(hopf, hopf_chart):
    req = AverageRequest("laplace", -4.0, window_horizons(8.0, math.pi, 16), 0.1, observable=RHO)
    with pytest.raises(HorizonBlowup, match="shrink"):
        laplace_average(hopf, hopf_chart, req, [0.0, 1.5])


def test_variational_blowup():
    lin = polynomial_model(PolynomialField(2, {(1, 0): [30.0, 0.0], (0, 1): [0.0, -1.0]}), "lin")
    req = AverageRequest("fourier_gradient", 1j, (2.0,), 0.1, direction=(1.0, 0.0))
    with pytest.raises(VariationalBlowup):
        fourier_gradient_average(lin, req, [0.0, 0.0], opts=IntegratorOptions("rk4", dt=0.01))


def test_degenerate_observable_warns():
    def rhs(x):
        r2 = x[0] ** 2 + x[1] ** 2
        return np.stack([x[0] * (1 - r2) - 2 * x[1], x[1] * (1 - r2) + 2 * x[0], -x[2]])
    m = Model("hopf_plus_decay", 3, rhs)
    req = AverageRequest("fourier", 2j, (2 * math.pi,), 0.01, observable=2, t_skip=math.pi)
    with pytest.warns(DegenerateObservable):
        fourier_average(m, None, req, [1.0, 0.0, 0.0])


def test_laplace_needs_chart(vdp, vdp_spectrum):
    with pytest.raises(ValueError, match="requires a chart"):
        evaluate_batch(vdp, None, [laplace_request(vdp_spectrum, 20.0)], np.zeros((2, 1)) + 1)


def test_tune_horizon_radial_hopf(hopf, hopf_chart, hopf_spectrum):
    # each candidate averages horizons over the period before it, so the
    # e^{-2 kappa T} remainder is reached one period later
    x0 = [0.0, 1.6]
    P = hopf_spectrum.period
    cands = 4 + P + np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    chosen, series = tune_horizon(hopf, hopf_chart, hopf_spectrum, x0, cands)
    exact = float(hopf_amplitude(1.6))
    assert np.all(np.abs(series[:, 1] - exact) < 1e-3 * abs(exact))
    assert chosen == cands[-1]


def test_tune_horizon_vdp(vdp, vdp_chart, vdp_spectrum):
    chosen, series = tune_horizon(vdp, vdp_chart, vdp_spectrum, [2.5, 0.0],
                                  np.arange(8, 37, 2))
    T, v = series[:, 0], series[:, 1]
    k = int(np.where(T == 20)[0][0])
    assert abs(v[k] - v[k - 1]) < 1e-3 * abs(v[k])
    assert 20 <= chosen <= 30


def test_tune_horizon_without_plateau(hopf, hopf_chart, hopf_spectrum):
    with pytest.raises(ValueError, match="no plateau"):
        tune_horizon(hopf, hopf_chart, hopf_spectrum, [0.0, 1.6], [3.2, 3.4])
