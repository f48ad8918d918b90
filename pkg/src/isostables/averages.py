"""Fourier and Laplace time averages along trajectories.

The averages extract the principal Koopman eigenfunctions: ``phi_{i omega}``
from a generic observable (Fourier kind) and ``phi_{Lambda_1}`` from the
zero-on-cycle observable ``rho - 1`` (Laplace kind).  The gradient kinds
propagate tangent vectors with the variational equation and give the phase
and amplitude response functions.

All requests sharing an initial batch are evaluated in one pass of the
fixed-step engine :func:`isostables.flow.propagate`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chart import PolarChart
from .flow import SWEEP_PROFILE, IntegratorOptions, KoopmanSpectrum, propagate
from .models import Model

Array = np.ndarray

KINDS = ("fourier", "laplace", "fourier_gradient", "laplace_gradient")
RHO = "rho_minus_one"

OK, OUTSIDE_BASIN, FAILED = 0, 1, 2
STATUS_NAMES = {OK: "ok", OUTSIDE_BASIN: "outside_basin", FAILED: "failed"}


class OutsideBasin(RuntimeError):
    pass


class HorizonBlowup(RuntimeError):
    pass


class VariationalBlowup(RuntimeError):
    pass


class DegenerateObservable(UserWarning):
    pass


@dataclass(frozen=True)
class AverageRequest:
    """One time average.

    Parameters
    ----------
    kind : one of ``fourier``, ``laplace``, ``fourier_gradient``, ``laplace_gradient``
    lam : eigenvalue ``i omega`` (Fourier kinds) or ``Lambda_1`` (Laplace kinds)
    horizons : finite horizons ``T_k``; results are averaged over them
    sample_dt : quadrature step for integral forms
    direction : tangent direction (gradient kinds)
    observable : coordinate index or ``"rho_minus_one"``
    t_skip : start of the integration window for integral forms; the
        average is taken over ``[t_skip, T_k]``
    blowup_factor : endpoint values whose largest magnitude exceeds this
        factor times ``max(smallest magnitude, blowup_floor)`` flag the node
        as past blow-up
    """

    kind: str
    lam: complex
    horizons: tuple
    sample_dt: float = 0.1
    direction: tuple | None = None
    observable: int | str = 0
    t_skip: float = 0.0
    blowup_factor: float = 10.0
    blowup_floor: float = 1e-4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown average kind {self.kind!r}")
        hz = tuple(float(t) for t in np.atleast_1d(self.horizons))
        object.__setattr__(self, "horizons", hz)
        object.__setattr__(self, "lam", complex(self.lam))
        if not hz or any(t <= 0 for t in hz) or any(b <= a for a, b in zip(hz, hz[1:])):
            raise ValueError("horizons must be positive and increasing")
        if not (0 < self.sample_dt <= hz[0]):
            raise ValueError("sample_dt must be positive and <= the shortest horizon")
        if self.kind.startswith("laplace"):
            if self.lam.real >= 0:
                raise ValueError("Laplace averages need Re(lambda) < 0")
            if self.observable != RHO:
                raise ValueError("Laplace averages need the rho_minus_one observable")
        elif abs(self.lam.real) > 1e-14:
            raise ValueError("Fourier averages need a purely imaginary lambda")
        if self.kind.endswith("gradient"):
            if self.direction is None:
                raise ValueError("gradient averages need a direction")
            object.__setattr__(self, "direction", tuple(float(d) for d in self.direction))
        if not 0 <= self.t_skip < hz[0]:
            raise ValueError("t_skip must lie in [0, shortest horizon)")

    @property
    def gradient(self) -> bool:
        return self.kind.endswith("gradient")

    @property
    def endpoint(self) -> bool:
        """Real Laplace eigenvalues use the endpoint rule."""
        return self.kind.startswith("laplace") and self.lam.imag == 0

    def weights(self) -> dict:
        """Map time -> quadrature weight (already divided by window lengths
        and the number of horizons)."""
        K = len(self.horizons)
        out: dict[float, float] = {}
        for T in self.horizons:
            if self.endpoint:
                out[T] = out.get(T, 0.0) + 1.0 / K
                continue
            L = T - self.t_skip
            m = max(1, int(round(L / self.sample_dt)))
            h = L / m
            for i in range(m + 1):
                t = self.t_skip + i * h if i < m else T
                w = h * (0.5 if i in (0, m) else 1.0) / L / K
                out[t] = out.get(t, 0.0) + w
        return out


# --- request builders ----------------------------------------------------------


def window_horizons(T_end: float, period: float, count: int = 64) -> tuple:
    """``count`` horizons spread uniformly over one period ending at ``T_end``.

    Endpoint Laplace values of a non-radial observable oscillate with the
    cycle harmonics; averaging them over a full period cancels every
    harmonic below ``count``.  Relaxation-type cycles keep visible content
    up to high harmonics, so 16 horizons leave aliasing at the 1e-3 level
    for vdp; 64 push it below 1e-5.
    """
    if T_end - period * (count - 1) / count <= 0:
        raise ValueError("T_end shorter than one period")
    return tuple(T_end - period * k / count for k in range(count - 1, -1, -1))


def default_fourier_dt(period: float) -> float:
    return min(0.01, period / 200)


def fourier_request(spectrum: KoopmanSpectrum, observable: int = 0,
                    t_skip: float | None = None, periods: int = 1,
                    sample_dt: float | None = None, direction=None,
                    horizon: float | None = None) -> AverageRequest:
    """Fourier request integrating over a whole number of periods after a
    transient skip (default ``20 / |Re Lambda_1|`` rounded up to whole periods).

    With ``horizon`` given and ``t_skip = 0`` this reduces to the plain
    finite-horizon average ``(1/T) int_0^T``.
    """
    P = spectrum.period
    if horizon is None:
        if t_skip is None:
            t_skip = 20.0 / abs(spectrum.sigma)
        t_skip = math.ceil(t_skip / P) * P
        horizon = t_skip + periods * P
    else:
        t_skip = t_skip or 0.0
    dt = sample_dt or default_fourier_dt(P)
    kind = "fourier_gradient" if direction is not None else "fourier"
    return AverageRequest(kind, 1j * spectrum.omega, (horizon,), dt, direction,
                          observable, t_skip)


def laplace_request(spectrum: KoopmanSpectrum, T_end: float, count: int = 64,
                    horizons=None, sample_dt: float = 0.1, direction=None,
                    blowup_factor: float = 10.0) -> AverageRequest:
    """Laplace request; by default horizons tile the last period before ``T_end``."""
    lam = spectrum.lambda1
    if horizons is None:
        horizons = window_horizons(T_end, spectrum.period, count)
    kind = "laplace_gradient" if direction is not None else "laplace"
    lam = lam.real if abs(lam.imag) == 0 else lam
    return AverageRequest(kind, lam, tuple(horizons), min(sample_dt, min(horizons)),
                          direction, RHO, 0.0, blowup_factor)


# --- batch engine ------------------------------------------------------------


@dataclass
class BatchResult:
    values: list            # per request, complex (B,)
    status: Array           # int8 (B,)
    endpoint_series: dict = field(default_factory=dict)  # request index -> (K, B)
    statuses: list = field(default_factory=list)          # per request, int8 (B,)

    def ok(self) -> Array:
        return self.status == OK


def _needs_chart(req):
    return req.observable == RHO


def evaluate_batch(model: Model, chart: PolarChart | None, requests, X0,
                   opts: IntegratorOptions = SWEEP_PROFILE,
                   chunk: int = 2048) -> BatchResult:
    """Evaluate every request at every column of ``X0`` (shape (n, B))."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[0] != model.dim:
        X0 = X0.T
    n, B = X0.shape
    requests = list(requests)
    if any(_needs_chart(r) for r in requests) and chart is None:
        raise ValueError("rho_minus_one observable requires a chart")
    values = [np.zeros(B, dtype=complex) for _ in requests]
    status = np.zeros(B, dtype=np.int8)
    statuses = [np.zeros(B, dtype=np.int8) for _ in requests]
    series = {i: np.zeros((len(r.horizons), B)) for i, r in enumerate(requests) if r.endpoint}
    for start in range(0, B, chunk):
        sl = slice(start, min(start + chunk, B))
        res = _evaluate_chunk(model, chart, requests, X0[:, sl], opts)
        for i in range(len(requests)):
            values[i][sl] = res.values[i]
        status[sl] = res.status
        for i in range(len(requests)):
            statuses[i][sl] = res.statuses[i]
        for i in series:
            series[i][:, sl] = res.endpoint_series[i]
    return BatchResult(values, status, series, statuses)


def _evaluate_chunk(model, chart, requests, X0, opts):
    n, B = X0.shape
    dirs = []
    for r in requests:
        if r.gradient and r.direction not in dirs:
            dirs.append(r.direction)
    tangents = None
    if dirs:
        tangents = np.repeat(np.array(dirs, dtype=float).T[:, :, None], B, axis=2)

    weights = [r.weights() for r in requests]
    keyed = {}
    for i, w in enumerate(weights):
        for t, wt in w.items():
            keyed.setdefault(round(t, 10), []).append((i, t, wt))
    times = sorted(keyed)

    horizon_index = [{round(T, 10): k for k, T in enumerate(r.horizons)} for r in requests]
    acc = [np.zeros(B, dtype=complex) for _ in requests]
    series = {i: np.zeros((len(r.horizons), B)) for i, r in enumerate(requests) if r.endpoint}
    failed = np.zeros(B, dtype=bool)

    def callback(k, t, x, v, alive):
        entries = keyed[times[k]]
        need_rho = any(_needs_chart(requests[i]) for i, _, _ in entries)
        need_grad = any(_needs_chart(requests[i]) and requests[i].gradient
                        for i, _, _ in entries)
        rho = grad = None
        if need_rho:
            with np.errstate(all="ignore"):
                if need_grad:
                    rho, grad = chart.rho_and_gradient(x)
                else:
                    rho = chart.invert_theta(x)[1]
            bad = ~np.isfinite(rho)
            if grad is not None:
                bad |= ~np.all(np.isfinite(grad), axis=0)
            failed[bad] = True
        for i, t_exact, wt in entries:
            r = requests[i]
            if r.gradient:
                d = dirs.index(r.direction)
                if r.observable == RHO:
                    f = np.sum(grad * v[:, d, :], axis=0)
                else:
                    f = v[int(r.observable), d, :]
            else:
                f = rho - 1.0 if r.observable == RHO else x[int(r.observable)]
            if r.endpoint:
                val = f * math.exp(-r.lam.real * t_exact)
                series[i][horizon_index[i][round(t_exact, 10)]] = val
                acc[i] += wt * val
            else:
                acc[i] += (wt * np.exp(-r.lam * t_exact)) * f

    _, _, alive, reason = propagate(model, X0, times, opts, tangents=tangents,
                                    callback=callback, return_reason=True)
    traj = np.where(alive, OK, np.where(reason == 1, OUTSIDE_BASIN, FAILED)).astype(np.int8)
    statuses = []
    for i, r in enumerate(requests):
        bad = ~np.isfinite(acc[i])
        if _needs_chart(r):
            bad |= failed
        if r.endpoint and not r.gradient and len(r.horizons) > 1:
            # gradient series legitimately change sign along the window; a
            # blow-up shows in the value series of the same trajectory
            s = np.abs(series[i])
            bad |= s.max(axis=0) > r.blowup_factor * np.maximum(s.min(axis=0), r.blowup_floor)
        st = traj.copy()
        st[(st == OK) & bad] = FAILED
        acc[i][st != OK] = np.nan
        statuses.append(st)
    status = np.max(statuses, axis=0) if statuses else traj
    return BatchResult(acc, status, series, statuses)


# --- single-point operations ------------------------------------------------------


def _single(model, chart, req, x0, opts, kinds):
    if req.kind not in kinds:
        raise ValueError(f"request kind {req.kind!r} not accepted here")
    x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
    res = evaluate_batch(model, chart, [req], x0, opts)
    st = res.status[0]
    if st == OUTSIDE_BASIN:
        raise OutsideBasin(f"trajectory from {x0.ravel()} left the basin (outside basin)")
    if st == FAILED:
        if req.endpoint and not req.gradient and len(req.horizons) > 1:
            s = res.endpoint_series[0][:, 0]
            if np.all(np.isfinite(s)):
                raise HorizonBlowup(
                    "horizon past blow-up: endpoint values vary by more than "
                    f"{req.blowup_factor:g}x across horizons; shrink the horizon")
        if req.gradient:
            raise VariationalBlowup("variational blow-up of the tangent vector")
        raise OutsideBasin("trajectory evaluation failed (non-finite values)")
    return complex(res.values[0][0])


def fourier_average(model: Model, chart: PolarChart | None, req: AverageRequest, x0,
                    opts: IntegratorOptions = SWEEP_PROFILE) -> complex:
    """Finite-horizon Fourier average ``(1/L) int f(phi^t x0) exp(-i omega t) dt``."""
    val = _single(model, chart, req, x0, opts, ("fourier",))
    if abs(val) < 1e-12:
        warnings.warn("degenerate observable: Fourier average vanishes", DegenerateObservable)
    return val


def laplace_average(model: Model, chart: PolarChart, req: AverageRequest, x0,
                    opts: IntegratorOptions = SWEEP_PROFILE) -> complex:
    """Laplace average of ``rho - 1``: horizon mean of the endpoint values
    ``f(phi^T x0) exp(-Lambda_1 T)`` (integral form for complex ``Lambda_1``)."""
    return _single(model, chart, req, x0, opts, ("laplace",))


def fourier_gradient_average(model: Model, req: AverageRequest, x0, e_j=None,
                             opts: IntegratorOptions = SWEEP_PROFILE) -> complex:
    if e_j is not None:
        req = _with_direction(req, e_j)
    return _single(model, None, req, x0, opts, ("fourier_gradient",))


def laplace_gradient_average(model: Model, chart: PolarChart, req: AverageRequest, x0,
                             e_j=None, opts: IntegratorOptions = SWEEP_PROFILE) -> complex:
    if e_j is not None:
        req = _with_direction(req, e_j)
    return _single(model, chart, req, x0, opts, ("laplace_gradient",))


def _with_direction(req, e_j):
    from dataclasses import replace
    kind = req.kind if req.gradient else req.kind + "_gradient"
    return replace(req, kind=kind, direction=tuple(np.asarray(e_j, dtype=float)))


def phase_values(phi: Array, reference: complex) -> Array:
    """Gauge-normalized phase ``angle(phi) - angle(phi_ref)`` wrapped to [0, 2 pi)."""
    return np.mod(np.angle(phi) - np.angle(reference), 2 * math.pi)


def prf_values(grad_avg: Array, phi: Array) -> Array:
    """Phase response component ``Re(grad / (i phi))``."""
    return np.real(grad_avg / (1j * phi))


def phase_reference(model: Model, req: AverageRequest, orbit,
                    opts: IntegratorOptions = SWEEP_PROFILE) -> complex:
    """Fourier average at the gauge point ``x_gamma(0)`` of the cycle."""
    res = evaluate_batch(model, None, [req], orbit.evaluate(0.0)[:, None], opts)
    return complex(res.values[0][0])


def tune_horizon(model: Model, chart: PolarChart, spectrum: KoopmanSpectrum, x0_probe,
                 candidates, plateau_tol: float = 1e-3, count: int = 64,
                 opts: IntegratorOptions = IntegratorOptions("rk8", dt=0.01)):
    """Pick the longest horizon on the plateau of the Laplace value.

    Each candidate ``T`` is evaluated with horizons tiling the period before
    ``T``.  Returns ``(chosen_T, series)`` with ``series`` an array of rows
    ``(T, value)``.
    """
    cands = sorted(float(T) for T in candidates)
    reqs = []
    T_used = []
    for T in cands:
        if T - spectrum.period <= 0:
            continue
        reqs.append(laplace_request(spectrum, T, count, blowup_factor=np.inf))
        T_used.append(T)
    if len(reqs) < 2:
        raise ValueError("need at least two candidate horizons longer than one period")
    res = evaluate_batch(model, chart, reqs, np.asarray(x0_probe, float)[:, None], opts)
    if res.status[0] != OK:
        raise OutsideBasin("probe trajectory left the basin")
    vals = np.array([v[0].real for v in res.values])
    series = np.column_stack([T_used, vals])
    rel = np.abs(np.diff(vals)) / np.maximum(np.abs(vals[1:]), 1e-300)
    chosen = None
    in_plateau = False
    for k, r in enumerate(rel):
        if r < plateau_tol:
            in_plateau = True
            chosen = T_used[k + 1]
        elif in_plateau:
            break
    if chosen is None:
        raise ValueError("no plateau found in the Laplace value series; "
                         "try denser candidate horizons")
    return chosen, series
