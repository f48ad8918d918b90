"""Trajectories of the base and prolonged (variational) systems, monodromy
matrices and Floquet exponents.

Two integration paths are provided:

* an adaptive path (``scipy.integrate.solve_ivp``) for single trajectories
  where accuracy matters most (spectra, orbits, reference solutions);
* a vectorized fixed-step Runge-Kutta path (:func:`propagate`) that advances
  a whole batch of initial conditions at once.  It is what grid sweeps use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.integrate._ivp import dop853_coefficients as _dop853

from .models import Model

Array = np.ndarray


class EscapedBasin(RuntimeError):
    """A trajectory left the ball of radius ``escape_radius``."""

    def __init__(self, t: float, radius: float):
        super().__init__(f"escaped basin at t={t:.6g} (|x| > {radius:g})")
        self.time = t
        self.radius = radius


class SpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorOptions:
    """Integrator profile.

    ``method`` is one of the adaptive schemes ``"RK45"`` / ``"DOP853"`` (tolerances
    ``rtol``/``atol``) or the fixed-step schemes ``"rk4"`` / ``"rk8"`` (step ``dt``).
    """

    method: str = "RK45"
    rtol: float = 1e-9
    atol: float = 1e-11
    dt: float = 1e-2
    escape_radius: float = 1e6

    @property
    def adaptive(self) -> bool:
        return self.method in ("RK45", "DOP853", "Radau", "LSODA")


SPECTRUM_PROFILE = IntegratorOptions("DOP853", rtol=1e-12, atol=1e-14)
SWEEP_PROFILE = IntegratorOptions("rk8", dt=0.02)


@dataclass(frozen=True)
class Trajectory:
    times: Array
    states: Array  # shape (len(times), n)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def final(self) -> Array:
        return self.states[-1]

    def to_csv(self, path: str | Path) -> None:
        n = self.states.shape[1]
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(n)])
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.17g")


@dataclass(frozen=True)
class ProlongedTrajectory(Trajectory):
    fundamental: Array = field(default=None)  # shape (len(times), n, n)

    @property
    def monodromy(self) -> Array:
        return self.fundamental[-1]


def _escape_event(radius):
    def event(t, y):
        return radius - np.max(np.abs(y))
    event.terminal = True
    return event


def _solve(fun, y0, t_end, opts, t_eval, dim):
    """Run solve_ivp, raising :class:`EscapedBasin` on divergence."""
    radius = opts.escape_radius
    event = _escape_event(radius) if dim is None else _state_escape_event(radius, dim)
    sol = solve_ivp(fun, (0.0, t_end), y0, method=opts.method, rtol=opts.rtol,
                    atol=opts.atol, t_eval=t_eval, events=event)
    if sol.status == 1:
        raise EscapedBasin(float(sol.t_events[0][0]), radius)
    if sol.status != 0:
        raise RuntimeError(f"integration failed: {sol.message}")
    return sol


def _state_escape_event(radius, dim):
    def event(t, y):
        return radius - np.max(np.abs(y[:dim]))
    event.terminal = True
    return event


def integrate(model: Model, x0, t_end: float,
              opts: IntegratorOptions = IntegratorOptions(),
              t_eval: Sequence[float] | None = None) -> Trajectory:
    """Integrate ``dx/dt = F(x)`` from ``x0`` over ``[0, t_end]``."""
    x0 = np.asarray(x0, dtype=float)
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
    if not opts.adaptive:
        times = t_eval if t_eval is not None else np.array([0.0, t_end])
        xs, _, alive = propagate(model, x0[:, None], times, opts)
        if not alive[0]:
            raise EscapedBasin(float("nan"), opts.escape_radius)
        return Trajectory(times, xs[:, :, 0])
    sol = _solve(lambda t, y: model.eval(y), x0, t_end, opts, t_eval, None)
    return Trajectory(sol.t, sol.y.T)


def integrate_prolonged(model: Model, x0, t_end: float,
                        opts: IntegratorOptions = IntegratorOptions(),
                        t_eval: Sequence[float] | None = None) -> ProlongedTrajectory:
    """Integrate the state jointly with the fundamental matrix ``M(t)``,
    ``dM/dt = DF(x(t)) M``, ``M(0) = I``."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if t_end <= 0:
        raise ValueError("t_end must be positive")

    def fun(t, y):
        x = y[:n]
        M = y[n:].reshape(n, n)
        return np.concatenate([model.eval(x), (model.jacobian(x) @ M).ravel()])

    y0 = np.concatenate([x0, np.eye(n).ravel()])
    sol = _solve(fun, y0, t_end, opts, t_eval, n)
    states = sol.y[:n].T
    fund = sol.y[n:].T.reshape(-1, n, n)
    return ProlongedTrajectory(sol.t, states, fund)


# --- vectorized fixed-step engine --------------------------------------------

_RK4 = (
    np.array([[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]], float),
    np.array([1, 2, 2, 1], float) / 6,
)
_RK8 = (_dop853.A[:_dop853.N_STAGES, :_dop853.N_STAGES], _dop853.B)
TABLEAUS = {"rk4": _RK4, "rk8": _RK8}


def _rk_step(fun, y, h, tableau):
    A, b = tableau
    ks = []
    for s in range(len(b)):
        ys = y
        for j in range(s):
            if A[s, j]:
                ys = ys + (h * A[s, j]) * ks[j]
        ks.append(fun(ys))
    out = y
    for s, bs in enumerate(b):
        if bs:
            out = out + (h * bs) * ks[s]
    return out


def propagate(model: Model, x0: Array, times: Sequence[float],
              opts: IntegratorOptions = SWEEP_PROFILE,
              tangents: Array | None = None,
              callback: Callable | None = None,
              return_reason: bool = False):
    """Advance a batch of states (and optional tangent vectors) to ``times``.

    Parameters
    ----------
    x0 : array, shape (n, B)
    times : increasing output times; integration starts at 0.  Each interval
        between outputs is split into equal sub-steps no longer than ``opts.dt``.
    tangents : optional array, shape (n, D, B), advanced with the variational
        equation ``d(dx)/dt = DF(x) dx``.
    callback : optional ``callback(k, t, x, v, alive)`` invoked at every output
        time instead of storing the states.

    Returns
    -------
    xs : array (len(times), n, B) or None when a callback is given
    vs : array (len(times), n, D, B) or None
    alive : bool array (B,), False where the trajectory escaped or blew up.
    reason : int array (B,), only with ``return_reason``: 0 alive, 1 escaped
        the ball of radius ``escape_radius``, 2 non-finite or tangent overflow.
    """
    tableau = TABLEAUS[opts.method]
    x = np.array(x0, dtype=float)
    n, B = x.shape
    v = None if tangents is None else np.array(tangents, dtype=float)
    alive = np.ones(B, dtype=bool)
    reason = np.zeros(B, dtype=np.int8)
    radius = opts.escape_radius

    if v is None:
        def fun(y):
            return model.eval(y)
        y = x
    else:
        D = v.shape[1]

        def fun(y):
            xs = y[:n]
            vs = y[n:].reshape(n, D, -1)
            jac = model.jacobian(xs)
            dv = np.einsum("ijb,jdb->idb", jac, vs)
            return np.concatenate([model.eval(xs), dv.reshape(n * D, -1)])
        y = np.concatenate([x, v.reshape(n * D, B)])

    times = np.asarray(times, dtype=float)
    store = callback is None
    xs = np.empty((len(times), n, B)) if store else None
    vs = np.empty((len(times), n, v.shape[1], B)) if (store and v is not None) else None
    t = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k, t_out in enumerate(times):
            span = t_out - t
            if span < -1e-12:
                raise ValueError("output times must be non-decreasing and >= 0")
            steps = int(math.ceil(span / opts.dt - 1e-9)) if span > 0 else 0
            if steps:
                h = span / steps
                for _ in range(steps):
                    y = _rk_step(fun, y, h, tableau)
                    escaped = np.max(np.abs(y[:n]), axis=0) > radius
                    bad = ~np.all(np.isfinite(y), axis=0)
                    if v is not None:
                        bad |= np.max(np.abs(y[n:]), axis=0) > 1e12
                    bad &= ~escaped
                    if escaped.any() or bad.any():
                        reason[escaped & alive] = 1
                        reason[bad & alive] = 2
                        bad |= escaped
                        alive &= ~bad
                        # park dead trajectories at a harmless state
                        y[:, bad] = 0.0
                        y[:n, bad] = 1.0
            t = t_out
            xk = y[:n]
            vk = None if v is None else y[n:].reshape(n, v.shape[1], B)
            if store:
                xs[k] = xk
                if v is not None:
                    vs[k] = vk
            else:
                callback(k, t_out, xk, vk, alive)
    if return_reason:
        return xs, vs, alive, reason
    return xs, vs, alive


# --- Floquet spectrum ---------------------------------------------------------


@dataclass(frozen=True)
class KoopmanSpectrum:
    """Principal Koopman eigenvalues of a stable limit cycle: ``i omega`` and the
    Floquet exponents, sorted by descending real part."""

    omega: float
    floquet: tuple[complex, ...]
    multipliers: tuple[complex, ...] = ()

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def lambda1(self) -> complex:
        return self.floquet[0]

    @property
    def sigma(self) -> float:
        return float(np.real(self.floquet[0]))

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "period": self.period,
            "floquet": [[float(np.real(z)), float(np.imag(z))] for z in self.floquet],
        }

    @classmethod
    def from_dict(cls, data) -> "KoopmanSpectrum":
        return cls(float(data["omega"]),
                   tuple(complex(a, b) for a, b in data["floquet"]))


def segment_fundamentals(model: Model, x0, period: float, segments: int,
                         opts: IntegratorOptions = SPECTRUM_PROFILE):
    """Fundamental matrices of ``segments`` consecutive pieces of one period.

    The state is chained from one segment to the next; each piece starts from
    the identity so that strongly contracting directions keep full relative
    precision.
    """
    x = np.asarray(x0, dtype=float)
    h = period / segments
    mats = []
    for _ in range(segments):
        traj = integrate_prolonged(model, x, h, opts)
        mats.append(traj.monodromy)
        x = traj.final
    return mats, x


def _qr_pos(a):
    q, r = np.linalg.qr(a)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, r * s[:, None]


def product_eigenvalues(mats: Sequence[Array], sweeps: int = 40):
    """Eigenvalues of ``mats[-1] @ ... @ mats[0]`` without forming the product.

    Orthogonal iteration through the cyclic sequence (periodic QR) yields the
    triangular factors ``R_i``; real eigenvalues are products of their
    diagonals (accumulated in logs) and complex pairs come from the trailing
    2x2 blocks.  Returns ``(log_moduli, args)`` so that tiny multipliers keep
    full relative accuracy.
    """
    n = mats[0].shape[0]
    Q = np.eye(n)
    for _ in range(sweeps):
        Q0 = Q
        Rs = []
        for M in mats:
            Q, R = _qr_pos(M @ Q)
            Rs.append(R)
    W = Q0.T @ Q  # basis change accumulated over one cycle

    logdiag = np.sum([np.log(np.diag(R)) for R in Rs], axis=0)
    blocks = []
    j = 0
    while j < n:
        if j + 1 < n:
            blk = _block_product(Rs, W, j)
            ev = np.linalg.eigvals(blk[0])
            if abs(ev[0].imag) > 1e-12 * max(abs(ev[0]), 1e-300):
                blocks.append(("pair", j, ev, blk[1]))
                j += 2
                continue
        blocks.append(("real", j, None, None))
        j += 1

    logmod, args = [], []
    for kind, j, ev, scale in blocks:
        if kind == "real":
            logmod.append(logdiag[j])
            args.append(0.0 if W[j, j] > 0 else math.pi)
        else:
            for z in sorted(ev, key=lambda z: -z.imag):
                logmod.append(math.log(abs(z)) + scale)
                args.append(math.atan2(z.imag, z.real))
    return np.array(logmod), np.array(args)


def _block_product(Rs, W, j):
    B = np.eye(2)
    logscale = 0.0
    for R in Rs:
        B = R[j:j + 2, j:j + 2] @ B
        s = np.abs(B).max()
        B = B / s
        logscale += math.log(s)
    return W[j:j + 2, j:j + 2] @ B, logscale


def floquet_spectrum(model: Model, orbit, opts: IntegratorOptions = SPECTRUM_PROFILE,
                     segments: int = 32) -> KoopmanSpectrum:
    """Floquet exponents of the cycle parametrized by ``orbit``.

    Integrates the prolonged system over one period ``2 pi / omega`` from
    ``x_gamma(0)``, drops the multiplier closest to 1 and returns
    ``Lambda_j = log(mu_j) omega / (2 pi)`` sorted by descending real part.
    """
    omega = float(orbit.omega)
    period = 2 * math.pi / omega
    mats, _ = segment_fundamentals(model, orbit.evaluate(0.0), period, segments, opts)
    logmod, args = product_eigenvalues(mats)
    mus = np.exp(logmod) * np.exp(1j * args)
    trivial = int(np.argmin(np.abs(mus - 1)))
    if abs(mus[trivial] - 1) > 0.05:
        raise SpectrumError(
            f"period inconsistency: no monodromy eigenvalue near 1 "
            f"(closest {mus[trivial]:.6g}); orbit or omega inaccurate")
    keep = [i for i in range(len(mus)) if i != trivial]
    if any(logmod[i] >= 0 for i in keep):
        raise SpectrumError("cycle is not normally hyperbolic stable: "
                            f"multipliers {mus}")
    exps = [complex(logmod[i], args[i]) * omega / (2 * math.pi) for i in keep]
    exps = _symmetrize(exps)
    exps.sort(key=lambda z: (-z.real, -z.imag))
    return KoopmanSpectrum(omega, tuple(exps), tuple(mus[keep]))


def _symmetrize(exps):
    out = list(exps)
    used = set()
    for a in range(len(out)):
        if a in used or abs(out[a].imag) < 1e-14:
            if a not in used:
                out[a] = complex(out[a].real, 0.0)
            continue
        b = min((b for b in range(len(out)) if b != a and b not in used),
                key=lambda b: abs(out[b] - out[a].conjugate()), default=None)
        if b is None:
            continue
        re = 0.5 * (out[a].real + out[b].real)
        im = 0.5 * (abs(out[a].imag) + abs(out[b].imag))
        out[a] = complex(re, math.copysign(im, out[a].imag))
        out[b] = out[a].conjugate()
        used.update((a, b))
    return out
