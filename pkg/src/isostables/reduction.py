"""Reduced phase-amplitude dynamics under inputs, classic phase reduction and
the pulse-train maps, with comparisons against the full model."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import averages as av
from .cycle import FourierOrbit
from .fields import GridField, InverseMap
from .flow import SPECTRUM_PROFILE, SWEEP_PROFILE, IntegratorOptions, KoopmanSpectrum
from .models import Model

Array = np.ndarray
TWO_PI = 2 * math.pi


def wrap(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    return -np.mod(-a + math.pi, TWO_PI) + math.pi


class ReductionError(RuntimeError):
    pass


class FastTimescaleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ReducedState:
    theta: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))


@dataclass
class InputSignal:
    """Continuous input ``G(x, t)`` or a pulse train of amplitude ``eps``
    every ``period`` time units along ``direction``."""

    kind: str
    func: Callable | None = None
    eps: float = 0.0
    period: float = 1.0
    direction: Array | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "pulse_train"):
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.kind == "pulse_train" and self.period <= 0:
            raise ValueError("pulse period must be positive")
        if self.direction is not None:
            self.direction = np.asarray(self.direction, dtype=float)

    @classmethod
    def sinusoid(cls, amplitude: float, freq: float, dim: int, component: int = 0):
        """``u(t) = amplitude sin(freq t)`` on one state component."""
        def G(x, t):
            out = np.zeros(dim)
            out[component] = amplitude * math.sin(freq * t)
            return out
        return cls("continuous", G)

    @classmethod
    def pulses(cls, eps: float, period: float, direction):
        return cls("pulse_train", eps=eps, period=period, direction=direction)


@dataclass
class FieldBundle:
    """Everything the reduced simulators interpolate."""

    phase: GridField
    amplitude: GridField
    prf: dict = field(default_factory=dict)      # component -> GridField
    irf: dict = field(default_factory=dict)
    inverse: InverseMap | None = None

    def theta(self, x) -> float:
        return float(self.phase.interpolate(x))

    def r(self, x) -> float:
        return float(self.amplitude.interpolate(x).real)

    def responses(self, x):
        """``(Z_theta, Z_r)`` as dicts component -> value at state ``x``."""
        zt = {j: float(f.interpolate(x)) for j, f in self.prf.items()}
        zr = {j: float(f.interpolate(x)) for j, f in self.irf.items()}
        return zt, zr


def _dot(z: dict, g: Array, what: str) -> float:
    s = 0.0
    for j, gj in enumerate(g):
        if gj == 0:
            continue
        if j not in z:
            raise ReductionError(f"input acts on x{j + 1} but no {what} field for it")
        s += z[j] * gj
    return s


@dataclass
class ReducedSeries:
    t: Array
    theta: Array
    r: Array
    x: Array        # (len(t), n)

    def to_csv(self, path, full: "ReducedSeries | None" = None) -> None:
        n = self.x.shape[1]
        cols = ["t", "theta", "r"] + [f"x{i + 1}" for i in range(n)]
        data = [self.t, self.theta, self.r] + [self.x[:, i] for i in range(n)]
        if full is not None:
            cols += ["theta_full", "r_full"] + [f"x{i + 1}_full" for i in range(n)]
            data += [full.theta, full.r] + [full.x[:, i] for i in range(n)]
        np.savetxt(path, np.column_stack(data), delimiter=",", header=",".join(cols),
                   comments="", fmt="%.17g")


def simulate_reduced(bundle: FieldBundle, spectrum: KoopmanSpectrum, x0, inp: InputSignal,
                     t_end: float, dt: float) -> ReducedSeries:
    """Integrate ``theta' = omega + Z_theta . G``, ``r' = sigma r + Z_r . G``.

    The RK4 stages act on ``theta - omega t`` and ``r exp(-sigma t)`` so that
    the unforced flow is reproduced exactly.
    """
    if inp.kind != "continuous":
        raise ValueError("simulate_reduced needs a continuous input")
    if bundle.inverse is None:
        raise ReductionError("field bundle has no inverse map")
    omega, sigma = spectrum.omega, spectrum.sigma
    x0 = np.asarray(x0, dtype=float)
    th0, r0 = bundle.theta(x0), bundle.r(x0)
    steps = int(math.ceil(t_end / dt - 1e-9))
    h = t_end / steps

    def rhs(t, y):
        th = y[0] + omega * t
        r = y[1] * math.exp(sigma * t)
        x = bundle.inverse(th, r)
        g = np.asarray(inp.func(x, t), dtype=float)
        if not np.any(g):
            return np.zeros(2)
        zt, zr = bundle.responses(x)
        return np.array([_dot(zt, g, "PRF"), math.exp(-sigma * t) * _dot(zr, g, "IRF")])

    ts = np.linspace(0.0, steps * h, steps + 1)
    Y = np.empty((steps + 1, 2))
    y = np.array([th0, r0])
    Y[0] = y
    for k in range(steps):
        t = ts[k]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[k + 1] = y
    theta = np.mod(Y[:, 0] + omega * ts, TWO_PI)
    r = Y[:, 1] * np.exp(sigma * ts)
    X = np.array([bundle.inverse(a, b) for a, b in zip(theta, r)])
    return ReducedSeries(ts, theta, r, X)


# --- classic phase reduction -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseResponseCurve:
    """Periodic spline of the PRF on the cycle, one per input component."""

    orbit: FourierOrbit
    splines: dict

    def __call__(self, theta) -> dict:
        th = np.mod(theta, TWO_PI)
        return {j: s(th) for j, s in self.splines.items()}


def compute_prc(model: Model, orbit: FourierOrbit, spectrum: KoopmanSpectrum, components=(0,),
                samples: int = 128, opts: IntegratorOptions = SWEEP_PROFILE) -> PhaseResponseCurve:
    """PRF evaluated at cycle points ``x_gamma(vartheta)``; there ``theta = vartheta``."""
    th = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    X = orbit.evaluate(th)
    fr = av.fourier_request(spectrum)
    reqs = [fr]
    for j in components:
        e = np.zeros(model.dim)
        e[j] = 1.0
        reqs.append(av.AverageRequest("fourier_gradient", fr.lam, fr.horizons, fr.sample_dt,
                                      tuple(e), fr.observable, fr.t_skip))
    res = av.evaluate_batch(model, None, reqs, X, opts)
    splines = {}
    for k, j in enumerate(components):
        z = av.prf_values(res.values[k + 1], res.values[0])
        zz = np.append(z, z[0])
        splines[j] = CubicSpline(np.append(th, TWO_PI), zz, bc_type="periodic")
    return PhaseResponseCurve(orbit, splines)


def simulate_classic_phase(prc: PhaseResponseCurve, spectrum: KoopmanSpectrum, theta0: float,
                           inp: InputSignal, t_end: float, dt: float) -> ReducedSeries:
    """Integrate ``theta' = omega + Z_theta(theta, 0) . G(x_gamma(theta), t)`` with RK4."""
    omega = spectrum.omega
    steps = int(math.ceil(t_end / dt - 1e-9))
    h = t_end / steps

    def rhs(t, y):
        x = prc.orbit.evaluate(y + omega * t)
        g = np.asarray(inp.func(x, t), dtype=float)
        if not np.any(g):
            return 0.0
        return _dot({j: float(v) for j, v in prc(y + omega * t).items()}, g, "PRC")

    ts = np.linspace(0.0, steps * h, steps + 1)
    y = float(theta0)
    Y = np.empty(steps + 1)
    Y[0] = y
    for k in range(steps):
        t = ts[k]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[k + 1] = y
    theta = np.mod(Y + omega * ts, TWO_PI)
    X = prc.orbit.evaluate(theta).T
    return ReducedSeries(ts, theta, np.zeros_like(ts), X)


# --- pulse maps -------------------------------------------------------------------


def _check_timescale(spectrum, Dt):
    if len(spectrum.floquet) > 1:
        tau = -1.0 / np.real(spectrum.floquet[1])
        if Dt < tau:
            warnings.warn(f"pulse period {Dt:g} is shorter than the fast timescale "
                          f"-1/Re(Lambda_2) = {tau:.3g}; the 2-D map may be inaccurate",
                          FastTimescaleWarning)


def finite_responses(bundle: FieldBundle, theta: float, r: float, eps: float, direction):
    """``(Delta_theta, Delta_r)`` of a kick ``eps * direction`` at ``x(theta, r)``."""
    x = bundle.inverse(theta, r)
    xk = x + eps * np.asarray(direction, dtype=float)
    dth = float(wrap(bundle.theta(xk) - bundle.theta(x)))
    dr = bundle.r(xk) - bundle.r(x)
    return dth, dr


def pulse_map(bundle: FieldBundle, spectrum: KoopmanSpectrum, start, eps: float, Dt: float,
              direction, n_pulses: int):
    """Iterate the drift-then-kick phase-amplitude map; returns arrays
    ``theta[0..n]``, ``r[0..n]`` (``theta`` unwrapped)."""
    _check_timescale(spectrum, Dt)
    omega = spectrum.omega
    decay = math.exp(spectrum.sigma * Dt)
    th = np.empty(n_pulses + 1)
    r = np.empty(n_pulses + 1)
    th[0], r[0] = float(start[0]), float(start[1])
    for n in range(n_pulses):
        a = th[n] + omega * Dt
        b = r[n] * decay
        if eps == 0:
            th[n + 1], r[n + 1] = a, b
            continue
        try:
            dth, dr = finite_responses(bundle, a, b, eps, direction)
        except Exception as exc:
            raise ReductionError(f"pulse {n + 1}: kicked state outside tabulated fields ({exc})") from exc
        th[n + 1] = a + dth
        r[n + 1] = b + dr
    return th, r


def classic_pulse_map(prc: PhaseResponseCurve, spectrum: KoopmanSpectrum, theta0: float,
                      eps: float, Dt: float, direction, n_pulses: int) -> Array:
    """``theta[n+1] = theta[n] + omega Dt + eps Z_theta(theta[n] + omega Dt, 0) . d``."""
    d = np.asarray(direction, dtype=float)
    th = np.empty(n_pulses + 1)
    th[0] = theta0
    for n in range(n_pulses):
        a = th[n] + spectrum.omega * Dt
        z = prc(a)
        th[n + 1] = a + eps * sum(float(z[j]) * d[j] for j in z if d[j] != 0)
    return th


# --- comparisons ------------------------------------------------------------------


@dataclass
class Comparison:
    phase_error: Array
    amplitude_error: Array
    state_error: Array | None
    metrics: dict
    full: ReducedSeries | None = None


def full_forced(model: Model, x0, inp: InputSignal, times,
                opts: IntegratorOptions = SPECTRUM_PROFILE) -> Array:
    """States of the forced full model at ``times``, shape (len(times), n)."""
    times = np.asarray(times, dtype=float)
    sol = solve_ivp(lambda t, y: model.eval(y) + np.asarray(inp.func(y, t)),
                    (times[0], times[-1]), np.asarray(x0, float), method=opts.method,
                    rtol=opts.rtol, atol=opts.atol, t_eval=times)
    if sol.status != 0:
        raise ReductionError(f"full model integration failed: {sol.message}")
    return sol.y.T


def full_pulses(model: Model, x0, eps: float, Dt: float, direction, n_pulses: int,
                opts: IntegratorOptions = SPECTRUM_PROFILE) -> Array:
    """States right after each pulse (row 0 is ``x0``)."""
    d = np.asarray(direction, dtype=float)
    x = np.asarray(x0, dtype=float)
    out = [x.copy()]
    for _ in range(n_pulses):
        sol = solve_ivp(lambda t, y: model.eval(y), (0.0, Dt), x, method=opts.method,
                        rtol=opts.rtol, atol=opts.atol)
        x = sol.y[:, -1] + eps * d
        out.append(x.copy())
    return np.array(out)


def project(bundle: FieldBundle, X) -> tuple:
    """Phase and amplitude of states ``X`` (m, n) through the fields; NaN
    where not interpolable."""
    X = np.asarray(X, dtype=float)
    th = bundle.phase.interpolate_many(X.T)
    r = np.real(bundle.amplitude.interpolate_many(X.T))
    return th, r


def compare_full(model: Model, bundle: FieldBundle, reduced: ReducedSeries, x0,
                 inp: InputSignal, opts: IntegratorOptions = SPECTRUM_PROFILE,
                 full_states=None) -> Comparison:
    """Error series of a reduced run against the forced full model."""
    X = full_forced(model, x0, inp, reduced.t, opts) if full_states is None else np.asarray(full_states)
    th, r = project(bundle, X)
    valid = np.isfinite(th) & np.isfinite(r)
    if not valid.all():
        k = int(np.argmin(valid))
        warnings.warn(f"full trajectory leaves the field box at t={reduced.t[k]:.4g}; "
                      "comparison truncated")
        valid[k:] = False
    dth = wrap(reduced.theta - th)[valid]
    dr = (reduced.r - r)[valid]
    dx = None
    if reduced.x is not None and reduced.x.shape == X.shape:
        dx = np.linalg.norm(reduced.x - X, axis=1)[valid]
    metrics = {
        "max_phase_error": float(np.max(np.abs(dth))) if dth.size else float("nan"),
        "final_phase_error": float(abs(dth[-1])) if dth.size else float("nan"),
        "rms_amplitude_error": float(np.sqrt(np.mean(dr ** 2))) if dr.size else float("nan"),
    }
    if dx is not None:
        metrics["trajectory_rms"] = float(np.sqrt(np.mean(dx ** 2)))
    full = ReducedSeries(reduced.t[valid], th[valid], r[valid], X[valid])
    return Comparison(dth, dr, dx, metrics, full)
