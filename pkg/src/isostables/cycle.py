"""Truncated Fourier parametrization of a limit cycle.

``x_gamma(theta) = sum_{|k| <= N} c_k exp(i k theta)`` with ``theta = omega t``.
Coefficients are found by harmonic balance for polynomial fields, or by
integrating onto the cycle and taking a DFT of one period otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .flow import SPECTRUM_PROFILE, IntegratorOptions
from .models import Model, PolynomialField

Array = np.ndarray


class HarmonicBalanceError(RuntimeError):
    def __init__(self, message, residual=float("nan"), stage=None):
        super().__init__(message)
        self.residual = residual
        self.stage = stage


class FixedPointSolution(HarmonicBalanceError):
    """Harmonic balance collapsed onto an equilibrium (all c_k = 0, k != 0)."""


class PeriodDetectionError(RuntimeError):
    pass


def trig_eval(cpos: Array, theta, deriv: int = 0) -> Array:
    """Evaluate the real trigonometric series with non-negative coefficients
    ``cpos[k]`` (k = 0..N, conjugate symmetry implied) at ``theta``.

    ``cpos`` has shape ``(N + 1, m)``; returns ``(m,)`` for scalar ``theta``
    or ``(m, len(theta))``.
    """
    theta = np.asarray(theta, dtype=float)
    N = cpos.shape[0] - 1
    k = np.arange(N + 1)
    c = cpos * ((1j * k) ** deriv)[:, None]
    z = np.exp(1j * theta)
    acc = np.zeros(c.shape[1:] + theta.shape, dtype=complex)
    for kk in range(N, 0, -1):
        acc = (acc + c[kk].reshape(c.shape[1:] + (1,) * theta.ndim)) * z
    base = c[0].real.reshape(c.shape[1:] + (1,) * theta.ndim)
    out = 2 * acc.real + (base if deriv == 0 else 0.0)
    return out


@dataclass(frozen=True)
class FourierOrbit:
    """Fourier coefficients ``c_0..c_N`` (rows of ``coeffs``, shape (N+1, n))
    of a real periodic orbit; ``c_{-k} = conj(c_k)``."""

    coeffs: Array
    omega: float
    gauge: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        c[0] = c[0].real
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    def c(self, k: int) -> Array:
        if abs(k) > self.N:
            return np.zeros(self.dim, dtype=complex)
        return self.coeffs[k] if k >= 0 else np.conj(self.coeffs[-k])

    def full_coeffs(self) -> Array:
        """Coefficients for k = -N..N, shape (2N+1, n)."""
        return np.concatenate([np.conj(self.coeffs[:0:-1]), self.coeffs])

    def evaluate(self, theta, deriv: int = 0) -> Array:
        return trig_eval(self.coeffs, theta, deriv)

    def padded(self, N: int) -> "FourierOrbit":
        c = np.zeros((N + 1, self.dim), dtype=complex)
        m = min(N, self.N)
        c[:m + 1] = self.coeffs[:m + 1]
        return FourierOrbit(c, self.omega, self.gauge)

    def shifted(self, delta: float) -> "FourierOrbit":
        """Orbit reparametrized as ``theta -> theta + delta``."""
        k = np.arange(self.N + 1)
        return FourierOrbit(self.coeffs * np.exp(1j * k * delta)[:, None],
                            self.omega, self.gauge)

    def regauged(self, C: float | None = None) -> "FourierOrbit":
        C = self.gauge if C is None else C
        delta = C - np.angle(self.coeffs[1, 0]) if self.N >= 1 else 0.0
        out = self.shifted(delta)
        return FourierOrbit(out.coeffs, self.omega, C)

    def samples(self, M: int) -> Array:
        """Orbit at ``M`` uniform phases, shape (M, n)."""
        full = np.zeros((M, self.dim), dtype=complex)
        N = self.N
        if M <= 2 * N:
            raise ValueError("need M > 2N samples")
        full[:N + 1] = self.coeffs
        full[M - N:] = np.conj(self.coeffs[:0:-1])
        return np.fft.ifft(full, axis=0).real * M

    # -- text round-trip ---------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "# fourier-orbit v1",
            f"dim {self.dim}",
            f"N {self.N}",
            f"omega {float(self.omega)!r}",
            f"gauge {float(self.gauge)!r}",
            "k " + " ".join(f"re{j + 1} im{j + 1}" for j in range(self.dim)),
        ]
        for k, row in enumerate(self.coeffs):
            vals = " ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row)
            lines.append(f"{k} {vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FourierOrbit":
        meta, rows = {}, []
        for line in text.splitlines():
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] in ("dim", "N", "omega", "gauge"):
                meta[parts[0]] = parts[1]
            elif parts[0] == "k":
                continue
            else:
                rows.append([float(p) for p in parts[1:]])
        dim, N = int(meta["dim"]), int(meta["N"])
        arr = np.array(rows, dtype=float).reshape(N + 1, dim, 2)
        return cls(arr[..., 0] + 1j * arr[..., 1], float(meta["omega"]),
                   float(meta["gauge"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "FourierOrbit":
        return cls.from_text(Path(path).read_text())


# --- harmonic balance ------------------------------------------------------


def collocation_points(poly: PolynomialField, N: int) -> int:
    return 2 * max(poly.degree, 1) * N + 1


def field_coefficients(poly: PolynomialField, orbit: FourierOrbit,
                       M: int | None = None) -> Array:
    """Fourier coefficients k = 0..N of ``F(x_gamma(theta))`` by collocation."""
    N = orbit.N
    M = M or collocation_points(poly, N)
    xs = orbit.samples(M)                    # (M, n)
    Fx = poly(xs.T).T                        # (M, n)
    return np.fft.fft(Fx, axis=0)[:N + 1] / M


def hb_residual(poly: PolynomialField, orbit: FourierOrbit, M: int | None = None) -> Array:
    """``i omega k c_k - [F(x_gamma)]_k`` for k = 0..N, shape (N+1, n)."""
    k = np.arange(orbit.N + 1)[:, None]
    return 1j * orbit.omega * k * orbit.coeffs - field_coefficients(poly, orbit, M)


def hb_residual_nested(poly: PolynomialField, orbit: FourierOrbit) -> Array:
    """Same residual by the explicit convolution over index tuples.

    Cost grows like (2N+1)^degree; intended for small N only.
    """
    N, n = orbit.N, orbit.dim
    c = orbit.full_coeffs()  # index j + N
    Fk = np.zeros((N + 1, n), dtype=complex)
    for idx, coeff in poly.terms.items():
        order = sum(idx)
        if order == 0:
            Fk[0] += coeff
            continue
        comps = [i for i, ki in enumerate(idx) for _ in range(ki)]
        S = np.zeros(N + 1, dtype=complex)
        for js in itertools.product(range(-N, N + 1), repeat=order):
            s = sum(js)
            if 0 <= s <= N:
                p = 1.0 + 0j
                for comp, j in zip(comps, js):
                    p *= c[j + N, comp]
                S[s] += p
        Fk += S[:, None] * coeff[None, :]
    k = np.arange(N + 1)[:, None]
    return 1j * orbit.omega * k * orbit.coeffs - Fk


def _pack(orbit: FourierOrbit) -> Array:
    c = orbit.coeffs
    return np.concatenate([c[0].real, c[1:].real.ravel(), c[1:].imag.ravel(),
                           [orbit.omega]])


def _unpack(u: Array, N: int, n: int, gauge: float) -> FourierOrbit:
    c = np.zeros((N + 1, n), dtype=complex)
    c[0] = u[:n]
    re = u[n:n + N * n].reshape(N, n)
    im = u[n + N * n:n + 2 * N * n].reshape(N, n)
    c[1:] = re + 1j * im
    return FourierOrbit(c, u[-1], gauge)


def _equations(poly, u, N, n, gauge, M):
    orbit = _unpack(u, N, n, gauge)
    R = hb_residual(poly, orbit, M)
    g = np.imag(orbit.coeffs[1, 0] * np.exp(-1j * gauge))
    return np.concatenate([R[0].real, R[1:].real.ravel(), R[1:].imag.ravel(), [g]])


def harmonic_balance(poly: PolynomialField, N: int, init: FourierOrbit,
                     tol: float = 1e-10, max_iters: int = 50,
                     gauge: float | None = None) -> FourierOrbit:
    """Solve the harmonic-balance equations for ``(c_0..c_N, omega)``.

    Damped Newton iteration on the real unknowns ``(c_0, Re c_k, Im c_k, omega)``
    with a finite-difference Jacobian; the phase gauge
    ``Im(c_1^(1) exp(-iC)) = 0`` closes the system.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n = poly.dim
    C = init.gauge if gauge is None else gauge
    orbit0 = init.padded(N)
    if abs(orbit0.coeffs[1, 0]) > 0:
        orbit0 = orbit0.regauged(C)
    M = collocation_points(poly, N)
    u = _pack(orbit0)
    r = _equations(poly, u, N, n, C, M)
    res = np.max(np.abs(r))
    for it in range(max_iters):
        if res <= tol:
            break
        J = np.empty((r.size, u.size))
        for j in range(u.size):
            h = 1e-7 * max(1.0, abs(u[j]))
            up = u.copy()
            up[j] += h
            J[:, j] = (_equations(poly, up, N, n, C, M) - r) / h
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while True:
            u_new = u + lam * step
            r_new = _equations(poly, u_new, N, n, C, M)
            res_new = np.max(np.abs(r_new))
            if res_new < res or lam < 1e-4:
                break
            lam *= 0.5
        u, r, res = u_new, r_new, res_new
    orbit = _unpack(u, N, n, C)
    # pick the branch with angle C rather than C + pi
    if np.real(orbit.coeffs[1, 0] * np.exp(-1j * C)) < 0:
        orbit = FourierOrbit(orbit.shifted(math.pi).coeffs, orbit.omega, C)
    residual = float(np.max(np.abs(hb_residual(poly, orbit, M))))
    if np.max(np.abs(orbit.coeffs[1:])) < 1e-8:
        fx = np.max(np.abs(poly(orbit.coeffs[0].real)))
        raise FixedPointSolution(
            "harmonic balance converged to a fixed-point solution "
            f"(|F(c_0)| = {fx:.3g}); this particular solution is disregarded",
            residual)
    if residual > tol:
        raise HarmonicBalanceError(
            f"harmonic balance did not converge in {max_iters} iterations "
            f"(residual {residual:.3e} > tol {tol:.1e})", residual)
    if orbit.omega <= 0:
        raise HarmonicBalanceError("converged to non-positive frequency", residual)
    return orbit


def continuation_solve(poly: PolynomialField, schedule, init: FourierOrbit,
                       tol: float = 1e-10, max_iters: int = 50) -> FourierOrbit:
    """Solve at increasing truncations, seeding each stage with the previous
    solution padded by zero coefficients."""
    schedule = [int(N) for N in schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be a non-empty increasing sequence")
    orbit = init
    for stage, N in enumerate(schedule):
        try:
            orbit = harmonic_balance(poly, N, orbit, tol=tol, max_iters=max_iters)
        except HarmonicBalanceError as exc:
            exc.stage = stage
            exc.args = (f"stage {stage} (N={N}): {exc.args[0]}",)
            raise
    return orbit


# --- orbit from integration ----------------------------------------------------


def _period_returns(model, x_s, n_returns, max_time, opts):
    normal = model.eval(x_s)
    speed = np.linalg.norm(normal)
    if not speed > 1e-12:
        raise PeriodDetectionError(
            f"trajectory settled on an equilibrium near {x_s} (|F| = {speed:.2e}); "
            "no cycle to detect")
    normal = normal / speed

    def section(t, y):
        return float(np.dot(y - x_s, normal))
    section.direction = 1.0

    sol = solve_ivp(lambda t, y: model.eval(y), (0.0, max_time), x_s,
                    method=opts.method, rtol=opts.rtol, atol=opts.atol,
                    events=section)
    times = [t for t in sol.t_events[0] if t > 1e-9]
    states = [y for t, y in zip(sol.t_events[0], sol.y_events[0]) if t > 1e-9]
    if len(times) < n_returns:
        raise PeriodDetectionError(
            f"only {len(times)} returns to the Poincare section within "
            f"t={max_time:g}")
    return np.array(times[:n_returns]), states[:n_returns]


def orbit_from_integration(model: Model, x0, N: int,
                           opts: IntegratorOptions = SPECTRUM_PROFILE,
                           t_skip: float | None = None,
                           lambda_estimate: float | None = None,
                           max_time: float | None = None,
                           samples: int | None = None,
                           gauge: float = 0.0,
                           jitter_tol: float = 1e-5) -> FourierOrbit:
    """Fourier coefficients of the cycle reached from ``x0``.

    The trajectory is integrated past its transient (``t_skip``, or
    ``20 / |lambda_estimate|``), the period is read off successive returns to
    the Poincare section through the current state with normal ``F(x)``, and
    one period resampled uniformly is transformed by DFT.
    """
    x0 = np.asarray(x0, dtype=float)
    if t_skip is None:
        t_skip = 20.0 / abs(lambda_estimate) if lambda_estimate else 150.0
    sol = solve_ivp(lambda t, y: model.eval(y), (0.0, t_skip), x0,
                    method=opts.method, rtol=opts.rtol, atol=opts.atol)
    x_s = sol.y[:, -1]
    if max_time is None:
        max_time = max(10 * t_skip, 500.0)
    rets, states = _period_returns(model, x_s, 4, max_time, opts)
    periods = np.diff(np.concatenate([[0.0], rets]))
    if len(periods) < 3:
        raise PeriodDetectionError("not enough returns to estimate the period")
    last = periods[-3:]
    jitter = (last.max() - last.min()) / last.mean()
    if jitter > jitter_tol:
        raise PeriodDetectionError(
            f"transient not decayed: relative period jitter {jitter:.2e} "
            f"> {jitter_tol:.0e}; increase t_skip")
    period = float(last[-1])
    M = samples or max(4 * N + 4, 1024)
    t_eval = np.arange(M) * (period / M)
    start = states[-2]
    seg = solve_ivp(lambda t, y: model.eval(y), (0.0, period), start,
                    method=opts.method, rtol=opts.rtol, atol=opts.atol,
                    t_eval=t_eval, dense_output=False)
    xs = seg.y.T
    coeffs = np.fft.fft(xs, axis=0)[:N + 1] / M
    orbit = FourierOrbit(coeffs, 2 * math.pi / period, gauge)
    return orbit.regauged(gauge)


def seed_orbit(model: Model, x0, N0: int = 3, **kwargs) -> FourierOrbit:
    """Crude low-order orbit to initialize harmonic balance."""
    opts = kwargs.pop("opts", IntegratorOptions("DOP853", rtol=1e-8, atol=1e-10))
    kwargs.setdefault("t_skip", 60.0)
    kwargs.setdefault("jitter_tol", 1e-3)
    return orbit_from_integration(model, x0, N0, opts=opts, **kwargs)


def planar_floquet(poly: PolynomialField, orbit: FourierOrbit) -> float:
    """Mean of ``div F`` over the cycle: the nontrivial Floquet exponent of a
    planar cycle."""
    if poly.dim != 2:
        raise ValueError("planar_floquet requires a two-dimensional field")
    M = collocation_points(poly, orbit.N)
    xs = orbit.samples(M)
    return float(np.mean(poly.divergence(xs.T)))


def solve_cycle(model: Model, N: int, x0=None, schedule=None, gauge: float = 0.0,
                tol: float = 1e-10) -> FourierOrbit:
    """Convenience: seed by integration, then harmonic balance (polynomial
    models) over ``schedule`` ending at ``N``."""
    if model.poly is None:
        raise ValueError(f"model {model.name!r} has no polynomial form")
    x0 = np.full(model.dim, 0.5) if x0 is None else x0
    seed = seed_orbit(model, x0, min(3, N), gauge=gauge)
    if schedule is None:
        schedule = sorted({min(N, s) for s in (5, 10, 20, 40, 80, 160) if s < N} | {N})
    return continuation_solve(model.poly, schedule, seed, tol=tol)
