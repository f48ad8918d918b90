"""Shared fixtures: orbits, spectra and charts are expensive, so they are
built once per session."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isostables.chart import build_chart
from isostables.cycle import continuation_solve, harmonic_balance, seed_orbit, FourierOrbit
from isostables.fields import Box, SweepSettings, sweep
from isostables.flow import floquet_spectrum
from isostables.models import builtin_model

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _report(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


@pytest.fixture(scope="session")
def vdp():
    return builtin_model("vdp")


@pytest.fixture(scope="session")
def vdp_orbit(vdp):
    return continuation_solve(vdp.poly, [5, 10, 20, 40], seed_orbit(vdp, [1.0, 0.0]), tol=1e-13)


@pytest.fixture(scope="session")
def vdp_spectrum(vdp, vdp_orbit):
    return floquet_spectrum(vdp, vdp_orbit)


@pytest.fixture(scope="session")
def vdp_chart_orbit(vdp, vdp_orbit):
    return continuation_solve(vdp.poly, [80], vdp_orbit, tol=1e-13)


@pytest.fixture(scope="session")
def vdp_chart(vdp_chart_orbit):
    return build_chart(vdp_chart_orbit)


@pytest.fixture(scope="session")
def hopf():
    return builtin_model("radial_hopf")


@pytest.fixture(scope="session")
def hopf_orbit(hopf):
    init = FourierOrbit(np.array([[0, 0], [0.45, -0.55j], [0, 0], [0, 0]]), 1.9)
    return harmonic_balance(hopf.poly, 3, init, tol=1e-14)


@pytest.fixture(scope="session")
def hopf_spectrum(hopf, hopf_orbit):
    return floquet_spectrum(hopf, hopf_orbit)


@pytest.fixture(scope="session")
def hopf_chart(hopf_orbit):
    return build_chart(hopf_orbit)


@pytest.fixture(scope="session")
def hopf_fields(hopf, hopf_orbit, hopf_spectrum, hopf_chart):
    """60 x 60 sweep of radial_hopf over [-2, 2]^2."""
    box = Box.aligned([(-2.0, 2.0, 60), (-2.0, 2.0, 60)])
    return sweep(hopf, hopf_chart, hopf_orbit, hopf_spectrum, box,
                 ["phase", "amplitude", "prf1", "prf2", "irf1", "irf2"],
                 SweepSettings(laplace_T=8.0))


@pytest.fixture(scope="session")
def hh():
    return builtin_model("hodgkin_huxley")


@pytest.fixture(scope="session")
def hh_timed(hh):
    """Orbit at N = 150 from integration and its spectrum, with wall time."""
    import time
    from isostables.cycle import orbit_from_integration
    t0 = time.perf_counter()
    orbit = orbit_from_integration(hh, [0.0, 0.05, 0.6, 0.32], 150)
    spectrum = floquet_spectrum(hh, orbit)
    return {"orbit": orbit, "spectrum": spectrum, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def hh_orbit(hh_timed):
    return hh_timed["orbit"]


@pytest.fixture(scope="session")
def vdp3d():
    return builtin_model("vdp3d")


@pytest.fixture(scope="session")
def vdp3d_orbit(vdp3d):
    from isostables.cycle import solve_cycle
    return solve_cycle(vdp3d, 20, x0=[1.0, 0.5, 0.5], tol=1e-12)
