"""Eigenfunction and response fields on uniform grids.

A :class:`Box` maps grid coordinates ``u`` (2 or 3 of them) to states
``x = origin + basis @ u``; axis-aligned boxes select state coordinates,
affine ones describe slices such as ``h + n = 0.8``.  :func:`sweep` evaluates
the averages at every node, :class:`GridField` interpolates the samples,
:func:`level_sets` extracts isostables/isochrons and :class:`InverseMap`
tabulates ``(theta, r) -> x``.
"""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree
from skimage import measure

from . import averages as av
from .chart import PolarChart
from .cycle import FourierOrbit
from .flow import SWEEP_PROFILE, IntegratorOptions, KoopmanSpectrum
from .models import Model

Array = np.ndarray
TWO_PI = 2 * math.pi
THREADS_ENV = "ISOSTABLES_THREADS"


class SweepError(RuntimeError):
    def __init__(self, message, histogram=None):
        super().__init__(message)
        self.histogram = histogram or {}


class NotInterpolable(ValueError):
    pass


class InverseMapHole(ValueError):
    def __init__(self, theta, r):
        super().__init__(f"inverse map has a hole at (theta, r) = ({theta:.6g}, {r:.6g})")
        self.theta = theta
        self.r = r


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --- box -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    """Uniform grid embedded affinely in state space."""

    axes: tuple            # ((min, max, count), ...)
    origin: Array          # (n,)
    basis: Array           # (n, d)

    def __post_init__(self):
        axes = tuple((float(a), float(b), int(c)) for a, b, c in self.axes)
        if any(c < 2 for _, _, c in axes) or any(b <= a for a, b, _ in axes):
            raise ValueError("each axis needs max > min and count >= 2")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        if self.basis.shape != (self.origin.size, len(axes)):
            raise ValueError("basis must have shape (n, number of axes)")

    @classmethod
    def aligned(cls, axes, coords=None, fixed=None, dim=None):
        """Box over state coordinates ``coords`` (default 0..d-1); the remaining
        coordinates take the values of ``fixed``."""
        d = len(axes)
        coords = list(range(d)) if coords is None else [int(c) for c in coords]
        n = dim or (len(fixed) if fixed is not None else d)
        origin = np.zeros(n) if fixed is None else np.array(fixed, dtype=float)
        origin[coords] = 0.0
        basis = np.zeros((n, d))
        basis[coords, range(d)] = 1.0
        return cls(tuple(axes), origin, basis)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(c for _, _, c in self.axes)

    @property
    def grids(self) -> list:
        return [np.linspace(a, b, c) for a, b, c in self.axes]

    @property
    def spacing(self) -> Array:
        return np.array([(b - a) / (c - 1) for a, b, c in self.axes])

    def node_coords(self) -> Array:
        """Grid coordinates of all nodes in C order, shape (d, size)."""
        mesh = np.meshgrid(*self.grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    def to_state(self, u) -> Array:
        u = np.asarray(u, dtype=float)
        return self.origin.reshape((-1,) + (1,) * (u.ndim - 1)) + np.tensordot(self.basis, u, axes=1)

    def to_grid(self, x) -> Array:
        """Least-squares grid coordinates of states ``x`` (n, ...)."""
        x = np.asarray(x, dtype=float)
        pinv = np.linalg.pinv(self.basis)
        return np.tensordot(pinv, x - self.origin.reshape((-1,) + (1,) * (x.ndim - 1)), axes=1)

    def to_dict(self) -> dict:
        return {"axes": [list(a) for a in self.axes], "origin": self.origin.tolist(),
                "basis": self.basis.tolist()}


# --- grid field -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples of one quantity over a :class:`Box`.

    Phase fields keep the complex Fourier average ``phi`` and the gauge
    reference; the angle is taken only after interpolation.
    """

    box: Box
    values: Array           # shape box.shape, complex
    status: Array           # shape box.shape, int8
    quantity: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.box.shape or self.status.shape != self.box.shape:
            raise ValueError("values/status shape must match the box")

    @property
    def is_phase(self) -> bool:
        return self.quantity == "phase"

    @property
    def reference(self) -> complex:
        return complex(self.meta.get("reference", 1.0))

    def normalized(self) -> Array:
        """Complex samples rotated so the gauge point has angle 0 (phase) or
        the real samples (other quantities); NaN at non-ok nodes."""
        v = self.values.copy()
        if self.is_phase:
            ref = self.reference
            v = v * (abs(ref) / ref)
        v[self.status != av.OK] = np.nan
        return v

    def node_values(self) -> Array:
        """Node values in physical form: phase angle in [0, 2 pi) or real value."""
        v = self.normalized()
        if self.is_phase:
            return np.mod(np.angle(v), TWO_PI)
        return v.real

    def _interpolator(self):
        cache = self.meta.setdefault("_interp", {})
        if "f" not in cache:
            data = self.normalized()
            if not self.is_phase:
                data = data.real
            cache["f"] = RegularGridInterpolator(self.box.grids, data, method="linear",
                                                 bounds_error=False, fill_value=np.nan)
        return cache["f"]

    def interpolate_many(self, x, complex_out: bool = False) -> Array:
        """Multilinear interpolation at states ``x`` (n, B); NaN where the
        point is outside the box or touches a non-ok node."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        u = self.box.to_grid(x.reshape(x.shape[0], -1))
        vals = self._interpolator()(u.T)
        if self.is_phase and not complex_out:
            vals = np.mod(np.angle(vals), TWO_PI) + np.where(np.isnan(vals), np.nan, 0.0)
        return vals[0] if single else vals

    def interpolate(self, x):
        val = self.interpolate_many(x)
        if np.any(np.isnan(val)):
            raise NotInterpolable(f"state {np.asarray(x).ravel()} is not interpolable "
                                  "(outside the box or next to a non-ok node)")
        return val

    # -- export -----------------------------------------------------------

    def to_csv(self, path) -> None:
        X = self.box.to_state(self.box.node_coords())
        n = X.shape[0]
        names = ",".join(f"x{i + 1}" for i in range(n))
        axes = " ".join(f"u{a + 1}[{lo!r},{hi!r},{c}]" for a, (lo, hi, c) in enumerate(self.box.axes))
        status = np.array([av.STATUS_NAMES[s] for s in self.status.ravel()])
        vals = self.values.ravel()
        with open(path, "w") as fh:
            fh.write(f"# quantity={self.quantity} axes={axes}\n")
            fh.write(f"{names},Re,Im,status\n")
            for k in range(vals.size):
                row = [f"{v:.17g}" for v in X[:, k]]
                row += [f"{vals[k].real:.17g}", f"{vals[k].imag:.17g}", status[k]]
                fh.write(",".join(row) + "\n")

    def save(self, path) -> None:
        meta = {k: v for k, v in self.meta.items() if not k.startswith("_")}
        np.savez(path, values=self.values, status=self.status,
                 axes=np.array(self.box.axes, dtype=float), origin=self.box.origin,
                 basis=self.box.basis, quantity=self.quantity,
                 meta_keys=np.array(list(meta), dtype=str),
                 meta_vals=np.array([complex(v) for v in meta.values()], dtype=complex))

    @classmethod
    def load(cls, path) -> "GridField":
        d = np.load(path, allow_pickle=False)
        box = Box(tuple(tuple(a) for a in d["axes"]), d["origin"], d["basis"])
        meta = {str(k): complex(v) for k, v in zip(d["meta_keys"], d["meta_vals"])}
        return cls(box, d["values"], d["status"], str(d["quantity"]), meta)


# --- sweep ------------------------------------------------------------------------

_QUANTITY = re.compile(r"^(phase|amplitude|prf(\d+)|irf(\d+))$")


def parse_quantity(q: str):
    """``phase``, ``amplitude``, ``prfJ`` or ``irfJ`` (J is the 1-based state
    coordinate of the input direction)."""
    m = _QUANTITY.match(q)
    if not m:
        raise ValueError(f"unknown quantity {q!r}")
    if m.group(2):
        return "prf", int(m.group(2)) - 1
    if m.group(3):
        return "irf", int(m.group(3)) - 1
    return q, None


@dataclass(frozen=True)
class SweepSettings:
    """Average parameters of a sweep.

    ``laplace_T`` is the last horizon; ``laplace_horizons`` overrides the
    one-period window.  ``fourier_horizon`` with ``fourier_t_skip = 0`` gives
    the plain finite-horizon Fourier average.
    """

    laplace_T: float = 20.0
    laplace_count: int = 64
    laplace_horizons: tuple | None = None
    laplace_dt: float = 0.1
    fourier_observable: int = 0
    fourier_t_skip: float | None = None
    fourier_periods: int = 1
    fourier_horizon: float | None = None
    fourier_dt: float | None = None
    blowup_factor: float = 10.0


def build_requests(quantities, spectrum: KoopmanSpectrum, n: int, settings: SweepSettings):
    """Requests needed by ``quantities`` and, per quantity, how to combine them."""
    reqs: list = []

    def add(r):
        if r not in reqs:
            reqs.append(r)
        return reqs.index(r)

    def e(j):
        v = np.zeros(n)
        v[j] = 1.0
        return tuple(v)

    s = settings
    fr = av.fourier_request(spectrum, s.fourier_observable, s.fourier_t_skip,
                            s.fourier_periods, s.fourier_dt, horizon=s.fourier_horizon)
    lr = av.laplace_request(spectrum, s.laplace_T, s.laplace_count, s.laplace_horizons,
                            s.laplace_dt, blowup_factor=s.blowup_factor)
    plan = {}
    for q in quantities:
        kind, j = parse_quantity(q)
        if kind == "phase":
            plan[q] = ("phase", add(fr))
        elif kind == "amplitude":
            plan[q] = ("amplitude", add(lr))
        elif kind == "prf":
            g = av.AverageRequest("fourier_gradient", fr.lam, fr.horizons, fr.sample_dt,
                                  e(j), fr.observable, fr.t_skip)
            plan[q] = ("prf", add(fr), add(g))
        else:
            g = av.AverageRequest("laplace_gradient", lr.lam, lr.horizons, lr.sample_dt,
                                  e(j), lr.observable, 0.0, lr.blowup_factor)
            plan[q] = ("irf", add(g))
    return reqs, plan, fr


def sweep(model: Model, chart: PolarChart, orbit: FourierOrbit, spectrum: KoopmanSpectrum,
          box: Box, quantities, settings: SweepSettings = SweepSettings(),
          opts: IntegratorOptions = SWEEP_PROFILE, threads: int | None = None,
          chunk: int = 1024, max_failed: float = 0.5):
    """Evaluate ``quantities`` at every node of ``box``.

    Returns a dict quantity -> :class:`GridField` (a single field when
    ``quantities`` is a string).  Nodes whose trajectory escapes are flagged
    ``outside_basin``; other per-node failures are flagged ``failed``.
    """
    single = isinstance(quantities, str)
    qs = [quantities] if single else list(quantities)
    reqs, plan, fr = build_requests(qs, spectrum, model.dim, settings)
    X = box.to_state(box.node_coords())
    total = X.shape[1]
    threads = threads or default_threads()
    starts = list(range(0, total, chunk))

    def work(start):
        sl = slice(start, min(start + chunk, total))
        return av.evaluate_batch(model, chart, reqs, X[:, sl], opts, chunk=chunk)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    values = [np.concatenate([p.values[i] for p in parts]) for i in range(len(reqs))]
    statuses = [np.concatenate([p.statuses[i] for p in parts]) for i in range(len(reqs))]
    status = np.max(statuses, axis=0)
    hist = {av.STATUS_NAMES[k]: int(np.sum(status == k)) for k in av.STATUS_NAMES}
    if np.mean(status != av.OK) > max_failed:
        raise SweepError(f"sweep failed at more than {max_failed:.0%} of nodes: {hist}", hist)

    meta_common = {"omega": spectrum.omega, "lambda1": complex(spectrum.lambda1)}
    out = {}
    for q in qs:
        p = plan[q]
        meta = dict(meta_common)
        st = np.max([statuses[i] for i in p[1:]], axis=0)
        if p[0] == "phase":
            ref = av.phase_reference(model, reqs[p[1]], orbit, opts)
            vals = values[p[1]]
            meta["reference"] = ref
        elif p[0] == "prf":
            vals = av.prf_values(values[p[2]], values[p[1]]).astype(complex)
        else:
            vals = values[p[1]].real.astype(complex)
        bad = ~np.isfinite(vals)
        st[(st == av.OK) & bad] = av.FAILED
        out[q] = GridField(box, vals.reshape(box.shape), st.reshape(box.shape), q, meta)
    return out[qs[0]] if single else out


# --- level sets --------------------------------------------------------------------


@dataclass
class LevelSetFamily:
    levels: list
    curves: list            # per level: list of arrays (m, n) in state coordinates
    kind: str = "level"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            n = None
            for curves in self.curves:
                for c in curves:
                    n = c.shape[1]
                    break
                if n:
                    break
            n = n or 0
            fh.write("level,polyline_id," + ",".join(f"x{i + 1}" for i in range(n)) + "\n")
            pid = 0
            for lev, curves in zip(self.levels, self.curves):
                for c in curves:
                    for row in c:
                        fh.write(f"{lev:.17g},{pid}," + ",".join(f"{v:.17g}" for v in row) + "\n")
                    pid += 1


def _index_to_grid(box, pts, dims):
    """Fractional indices (m, 2) on grid dims -> grid coordinates."""
    out = []
    for col, d in enumerate(dims):
        lo, hi, c = box.axes[d]
        out.append(lo + pts[:, col] * (hi - lo) / (c - 1))
    return np.stack(out, axis=1)


def _contours_2d(arr, mask, level):
    if not np.any(mask):
        return []
    a = np.where(mask, arr, np.nan)
    finite = a[np.isfinite(a)]
    if finite.size == 0 or level < finite.min() or level > finite.max():
        return []
    return measure.find_contours(np.nan_to_num(arr), level, mask=mask)


def _slices(field: GridField):
    """Yield (fixed index or None, 2-D slice selector)."""
    if field.box.ndim == 2:
        yield None, (slice(None), slice(None))
    else:
        for k in range(field.box.shape[2]):
            yield k, (slice(None), slice(None), k)


def _curve_states(box, pts, k):
    g = _index_to_grid(box, pts, (0, 1))
    if k is not None:
        lo, hi, c = box.axes[2]
        g = np.column_stack([g, np.full(len(g), lo + k * (hi - lo) / (c - 1))])
    return box.to_state(g.T).T


def level_sets(field: GridField, levels) -> LevelSetFamily:
    """Isolines (2-D) or per-slice isoline stacks (3-D) of a real field."""
    if field.is_phase:
        return isochrons(field, levels)
    data = field.normalized().real
    ok = field.status == av.OK
    curves = []
    for lev in levels:
        cs = []
        for k, sel in _slices(field):
            for c in _contours_2d(data[sel], ok[sel], float(lev)):
                cs.append(_curve_states(field.box, c, k))
        curves.append(cs)
    return LevelSetFamily([float(l) for l in levels], curves, "isostable")


def isochrons(field: GridField, phases) -> LevelSetFamily:
    """Isochrons ``angle(phi) = theta*``: zero level of ``Im(exp(-i theta*) phi)``
    restricted to ``Re(exp(-i theta*) phi) > 0``."""
    z = field.normalized()
    ok = (field.status == av.OK) & np.isfinite(z)
    curves = []
    for th in phases:
        rot = np.exp(-1j * float(th)) * z
        cs = []
        for k, sel in _slices(field):
            im, re_ = rot.imag[sel], rot.real[sel]
            for c in _contours_2d(im, ok[sel], 0.0):
                # keep the branch where the rotated field is positive
                idx = np.clip(np.round(c).astype(int), 0, np.array(im.shape) - 1)
                keep = np.nan_to_num(re_[idx[:, 0], idx[:, 1]]) > 0
                for seg in _runs(c, keep):
                    cs.append(_curve_states(field.box, seg, k))
        curves.append(cs)
    return LevelSetFamily([float(t) for t in phases], curves, "isochron")


def _runs(pts, keep):
    out, start = [], None
    for i, k in enumerate(keep):
        if k and start is None:
            start = i
        if (not k or i == len(keep) - 1) and start is not None:
            end = i + 1 if k else i
            if end - start >= 2:
                out.append(pts[start:end])
            start = None
    return out


# --- inverse map -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plane:
    """Affine plane ``{origin + a u + b v}`` in state space."""

    origin: Array
    e1: Array
    e2: Array

    @classmethod
    def from_equation(cls, normal, offset: float = 0.0) -> "Plane":
        """Plane ``normal . x = offset`` (3-D)."""
        nrm = np.asarray(normal, dtype=float)
        nn = nrm / np.linalg.norm(nrm)
        origin = nn * offset / np.linalg.norm(nrm)
        q, _ = np.linalg.qr(np.column_stack([nn, np.eye(nn.size)]))
        return cls(origin, q[:, 1], q[:, 2])

    @classmethod
    def coordinate(cls, dim=2, i=0, j=1, origin=None) -> "Plane":
        o = np.zeros(dim) if origin is None else np.asarray(origin, float)
        e1, e2 = np.zeros(dim), np.zeros(dim)
        e1[i], e2[j] = 1.0, 1.0
        return cls(o, e1, e2)

    def to_state(self, a, b) -> Array:
        a, b = np.asarray(a, float), np.asarray(b, float)
        return (self.origin[:, None] + self.e1[:, None] * a.ravel()[None]
                + self.e2[:, None] * b.ravel()[None])

    def coords(self, x) -> Array:
        d = np.asarray(x, float) - self.origin.reshape((-1,) + (1,) * (np.ndim(x) - 1))
        return np.stack([np.tensordot(self.e1, d, 1), np.tensordot(self.e2, d, 1)])


@dataclass(frozen=True, eq=False)
class InverseMap:
    """Tabulated ``(theta, r) -> x`` with periodic ``theta``."""

    theta_grid: Array
    r_grid: Array
    table: Array            # (n_theta, n_r, n)
    holes: Array            # (n_theta, n_r) bool

    def __call__(self, theta, r) -> Array:
        return self.evaluate(theta, r)

    def evaluate(self, theta, r, strict: bool = True) -> Array:
        th = float(np.mod(theta, TWO_PI))
        r = float(r)
        tg, rg = self.theta_grid, self.r_grid
        if not (rg[0] <= r <= rg[-1]):
            raise ValueError(f"amplitude {r:.6g} outside tabulated range [{rg[0]:.6g}, {rg[-1]:.6g}]")
        span = tg[-1] + (tg[1] - tg[0])
        dth = tg[1] - tg[0]
        i = int(th // dth) % len(tg)
        i2 = (i + 1) % len(tg)
        a = (th - tg[i]) / dth if i < len(tg) - 1 else (th - tg[i]) / (span - tg[i])
        j = min(int(np.searchsorted(rg, r, side="right") - 1), len(rg) - 2)
        b = (r - rg[j]) / (rg[j + 1] - rg[j])
        corners = [(i, j), (i2, j), (i, j + 1), (i2, j + 1)]
        if strict and any(self.holes[c] for c in corners):
            raise InverseMapHole(th, r)
        T = self.table
        return ((1 - a) * (1 - b) * T[i, j] + a * (1 - b) * T[i2, j]
                + (1 - a) * b * T[i, j + 1] + a * b * T[i2, j + 1])


def _fields_at(phase_field, amp_field, X):
    z = phase_field.interpolate_many(X, complex_out=True)
    r = amp_field.interpolate_many(X)
    return np.mod(np.angle(z), TWO_PI), r


def inverse_map(phase_field: GridField, amplitude_field: GridField, theta_grid, r_grid,
                plane: Plane | None = None, samples: int | None = None, K: int = 4,
                search_radius: float = 2.0, newton_iters: int = 12,
                tol: float = 1e-6) -> InverseMap:
    """Scattered-data inversion of the fields onto a regular ``(theta, r)`` table.

    States are sampled on ``plane`` (the field plane itself for planar
    models, a user constraint plane for 3-D ones); every sample with valid
    field values contributes ``(theta, r, x)``.  Each table entry starts from
    the inverse-distance mean of its ``K`` nearest contributions and is then
    refined by Newton iterations on the interpolated fields inside the
    plane.  An entry is a hole when the refined state leaves the region where
    the fields are interpolable, or when Newton fails to reach ``tol`` and no
    contribution lies within ``search_radius`` table cells.
    """
    tg = np.asarray(theta_grid, float)
    rg = np.asarray(r_grid, float)
    box = phase_field.box
    n = box.origin.size
    if plane is None:
        if box.ndim != 2:
            raise ValueError("3-D fields need a constraint plane")
        plane = Plane(box.origin, box.basis[:, 0], box.basis[:, 1])
    # sample the plane over the part of it inside the box
    corners = box.to_state(np.array(np.meshgrid(*[[a, b] for a, b, _ in box.axes],
                                                indexing="ij")).reshape(box.ndim, -1))
    pc = plane.coords(corners)
    lo, hi = pc.min(axis=1), pc.max(axis=1)
    m = samples or int(max(box.shape) * 2)
    a = np.linspace(lo[0], hi[0], m)
    b = np.linspace(lo[1], hi[1], m)
    A, Bm = np.meshgrid(a, b, indexing="ij")
    X = plane.to_state(A, Bm)
    th, r = _fields_at(phase_field, amplitude_field, X)
    okm = np.isfinite(th) & np.isfinite(r)
    pts_ab = np.stack([A.ravel(), Bm.ravel()])[:, okm]
    th, r = th[okm], r[okm]
    if th.size < K:
        raise ValueError("too few valid samples to build the inverse map")
    # normalized coordinates: one table cell = unit distance
    dth = tg[1] - tg[0]
    drr = (rg[-1] - rg[0]) / max(len(rg) - 1, 1)
    P = np.column_stack([th / dth, r / drr])
    period = TWO_PI / dth
    P_all = np.vstack([P, P + [period, 0], P - [period, 0]])
    ab_all = np.hstack([pts_ab, pts_ab, pts_ab])
    tree = cKDTree(P_all)
    TT, RR = np.meshgrid(tg, rg, indexing="ij")
    Q = np.column_stack([TT.ravel() / dth, RR.ravel() / drr])
    dist, idx = tree.query(Q, k=K)
    w = 1.0 / np.maximum(dist, 1e-12)
    ab0 = np.einsum("qk,dqk->dq", w, ab_all[:, idx]) / w.sum(axis=1)
    ab, F = _refine(phase_field, amplitude_field, plane, ab0, TT.ravel(), RR.ravel(),
                    newton_iters, step=0.25 * float(np.min(box.spacing)))
    tol_r = tol * np.maximum(1.0, np.abs(RR.ravel()))
    solved = np.isfinite(F).all(axis=0) & (np.abs(F[0]) < tol) & (np.abs(F[1]) < tol_r)
    # entries far from every sample are only accepted when Newton lands on them
    holes = ~solved & (dist[:, 0] > search_radius) | ~np.isfinite(F).all(axis=0)
    holes |= ~solved & (np.abs(F).max(axis=0) > 10 * drr)
    table = plane.to_state(ab[0], ab[1]).T.reshape(len(tg), len(rg), n)
    return InverseMap(tg, rg, table, holes.reshape(len(tg), len(rg)))


def _refine(pf, af, plane, ab, th_t, r_t, iters, step):
    """Newton on ``(theta(x), r(x)) = (theta_t, r_t)`` with ``x`` in the plane."""
    ab = ab.copy()

    def resid(ab_):
        t, r = _fields_at(pf, af, plane.to_state(ab_[0], ab_[1]))
        return np.stack([np.angle(np.exp(1j * (t - th_t))), r - r_t])

    F = resid(ab)
    for _ in range(iters):
        J = np.empty((2, 2, ab.shape[1]))
        for d in range(2):
            e = np.zeros((2, 1))
            e[d] = step
            J[:, d] = (resid(ab + e) - resid(ab - e)) / (2 * step)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        da = -(J[1, 1] * F[0] - J[0, 1] * F[1]) / det
        db = -(-J[1, 0] * F[0] + J[0, 0] * F[1]) / det
        cand = ab + np.stack([da, db])
        Fc = resid(cand)
        better = np.isfinite(Fc).all(axis=0) & (
            np.abs(Fc).max(axis=0) < np.abs(F).max(axis=0))
        better &= np.isfinite(cand).all(axis=0)
        ab[:, better] = cand[:, better]
        F[:, better] = Fc[:, better]
    return ab, F
