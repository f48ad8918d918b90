"""Polar-type chart ``(vartheta, rho)`` on a projection plane.

A state ``x`` is projected onto the coordinate plane ``(i, j)``; its offset
``v = P(x) - P(c_0)`` is compared with the projected cycle point ``P(x_gamma(vartheta))``
that lies on the same ray, giving the radial ratio ``rho``.  The observable
``rho - 1`` vanishes on the cycle and is what the Laplace averages consume.

All query functions accept a single state ``(n,)`` or a batch ``(n, B)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cycle import FourierOrbit, trig_eval

Array = np.ndarray
TWO_PI = 2 * math.pi


class ChartError(ValueError):
    pass


class DegenerateRadius(ChartError):
    pass


def _cross(a, b):
    """Scalar cross product ``a x b`` of planar vectors stacked on axis 0."""
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True, eq=False)
class PolarChart:
    orbit: FourierOrbit
    plane: tuple[int, int]
    proj_coeffs: Array      # (N+1, 2) complex, k = 0..N
    center: Array           # (2,)
    ref_vector: Array       # (2,)
    table_theta: Array      # (K+1,) vartheta grid including 2 pi
    table_phase: Array      # (K+1,) s * unwrapped Theta, increasing 0 -> 2 pi
    orientation: int        # +1 if Theta increases with vartheta, else -1
    scale: Array            # (2,) diagonal scaling applied after projection

    @property
    def dim(self) -> int:
        return self.orbit.dim

    # -- projections -------------------------------------------------------

    def project(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        i, j = self.plane
        p = np.stack([x[i], x[j]])
        return p * self.scale.reshape((2,) + (1,) * (p.ndim - 1))

    def curve(self, theta, deriv: int = 0) -> Array:
        """``P(x_gamma(theta)) - center`` (or its derivatives), shape (2, ...)."""
        c = self.proj_coeffs
        if deriv == 0:
            c = c.copy()
            c[0] = 0.0
        return trig_eval(c, np.asarray(theta, dtype=float), deriv)

    # -- geometric phase -----------------------------------------------------

    def _offset(self, x):
        p = self.project(x)
        return p - self.center.reshape((2,) + (1,) * (p.ndim - 1))

    def _theta_of(self, v):
        v0 = self.ref_vector.reshape((2,) + (1,) * (v.ndim - 1))
        return np.arctan2(_cross(v, v0), np.sum(v * v0, axis=0))

    def geometric_phase(self, x) -> Array:
        """Signed angle ``atan2(v x v0, v . v0)`` of the projected state."""
        v = self._offset(x)
        if np.any(np.hypot(v[0], v[1]) == 0):
            raise DegenerateRadius("degenerate radius: P(x) coincides with the chart center")
        return self._theta_of(v)

    # -- inversion -----------------------------------------------------------

    def invert_theta(self, x, tol: float = 1e-10, iters: int = 8):
        """Solve ``Theta(x_gamma(vartheta)) = Theta(x)``; return ``(vartheta, rho)``.

        A lookup in the monotone table brackets the root; a fixed number of
        safeguarded Newton steps (bisection when a step leaves the bracket)
        then refine it.  Entries whose final residual exceeds ``tol`` come
        back as NaN.
        """
        v = self._offset(x)
        rad = np.hypot(v[0], v[1])
        if np.any(rad == 0):
            raise DegenerateRadius("degenerate radius: P(x) coincides with the chart center")
        s = self.orientation
        target = np.mod(s * self._theta_of(v), TWO_PI)
        tp, tt = self.table_phase, self.table_theta
        idx = np.clip(np.searchsorted(tp, target, side="right") - 1, 0, tp.size - 2)
        lo, hi = tt[idx], tt[idx + 1]
        frac = (target - tp[idx]) / (tp[idx + 1] - tp[idx])
        th = lo + frac * (hi - lo)
        for _ in range(iters):
            w = self.curve(th)
            dw = self.curve(th, 1)
            g = s * self._theta_of(w)
            res = np.mod(g - target + math.pi, TWO_PI) - math.pi
            slope = -s * _cross(w, dw) / np.sum(w * w, axis=0)
            lo = np.where(res < 0, np.maximum(lo, th), lo)
            hi = np.where(res > 0, np.minimum(hi, th), hi)
            step = th - res / slope
            bad = ~((step >= lo) & (step <= hi))
            step = np.where(bad, 0.5 * (lo + hi), step)
            th = np.where(np.abs(res) <= 1e-15, th, step)
        w = self.curve(th)
        res = np.mod(s * self._theta_of(w) - target + math.pi, TWO_PI) - math.pi
        rho = rad / np.hypot(w[0], w[1])
        unresolved = ~(np.abs(res) <= tol)
        if np.any(unresolved):
            th = np.where(unresolved, np.nan, th)
            rho = np.where(unresolved, np.nan, rho)
        return np.mod(th, TWO_PI), rho

    def observable(self, x) -> Array:
        """Zero-on-cycle observable ``rho - 1``."""
        return self.invert_theta(x)[1] - 1.0

    def rho_and_gradient(self, x):
        """``rho`` and its exact gradient in state coordinates, shape (n, ...)."""
        x = np.asarray(x, dtype=float)
        th, rho = self.invert_theta(x)
        v = self._offset(x)
        w = self.curve(th)
        dw = self.curve(th, 1)
        R2 = np.sum(w * w, axis=0)
        R = np.sqrt(R2)
        rad = np.hypot(v[0], v[1])
        dR = np.sum(w * dw, axis=0) / R
        # d Theta / d vartheta along the cycle and grad Theta at v
        dtheta = -_cross(w, dw) / R2
        jv = np.stack([-v[1], v[0]])
        grad_Theta = -jv / rad ** 2
        grad_vt = grad_Theta / dtheta
        gp = v / (rad * R) - (rad * dR / R2) * grad_vt
        grad = np.zeros(x.shape)
        i, j = self.plane
        grad[i] = gp[0] * self.scale[0]
        grad[j] = gp[1] * self.scale[1]
        return rho, grad

    def gradient_observable(self, x, dx) -> Array:
        """Directional derivative ``grad(rho - 1) . dx``.

        On the cycle this equals ``|grad rho| (xi . P(dx))`` with ``xi`` the
        outward unit normal; off the cycle it is the exact derivative of the
        observable, so averages built on it differentiate the amplitude field.
        """
        _, grad = self.rho_and_gradient(x)
        return np.sum(grad * np.asarray(dx, dtype=float), axis=0)

    def unit_normal(self, theta) -> Array:
        """Outward unit normal ``xi`` to ``P(Gamma)`` at ``vartheta``."""
        w = self.curve(theta)
        dw = self.curve(theta, 1)
        norm = np.hypot(dw[0], dw[1])
        if np.any(norm == 0):
            raise ChartError("zero tangent: degenerate parametrization point")
        xi = np.stack([dw[1], -dw[0]]) / norm
        sign = np.sign(np.sum(xi * w, axis=0))
        return xi * sign

    def normal_observable(self, x, dx) -> Array:
        """``xi(pi(P(x))) . P(dx)`` with ``xi`` at the chart angle of ``x``."""
        th, _ = self.invert_theta(x)
        xi = self.unit_normal(th)
        return np.sum(xi * self.project(dx), axis=0)

    # -- forward map -----------------------------------------------------------

    def g(self, theta, rho, base=None) -> Array:
        """State whose projection is ``center + rho (P(x_gamma(theta)) - center)``.

        Coordinates outside the plane are taken from ``base`` (zeros
        by default).
        """
        theta = np.asarray(theta, dtype=float)
        rho = np.asarray(rho, dtype=float)
        w = self.curve(theta)
        shape = np.broadcast(theta, rho).shape
        out = np.zeros((self.dim,) + shape)
        if base is not None:
            out[...] = np.asarray(base, dtype=float).reshape((self.dim,) + (1,) * len(shape))
        i, j = self.plane
        c = self.center
        out[i] = (c[0] + rho * w[0]) / self.scale[0]
        out[j] = (c[1] + rho * w[1]) / self.scale[1]
        return out


def build_chart(orbit: FourierOrbit, plane=(0, 1), table_size: int = 4096,
                scale=None) -> PolarChart:
    """Project the orbit on ``plane`` (0-based coordinate indices) and tabulate
    its geometric phase."""
    i, j = (int(p) for p in plane)
    if i == j or not (0 <= i < orbit.dim and 0 <= j < orbit.dim):
        raise ChartError(f"invalid plane {plane!r} for dimension {orbit.dim}")
    if table_size < 256:
        raise ChartError("table_size must be >= 256")
    sc = np.ones(2) if scale is None else np.asarray(scale, dtype=float)
    proj = orbit.coeffs[:, [i, j]] * sc[None, :]
    center = proj[0].real.copy()
    v0 = orbit.evaluate(0.0)[[i, j]] * sc - center
    if np.hypot(*v0) == 0:
        raise ChartError("reference vector vanishes")
    tt = np.linspace(0.0, TWO_PI, table_size + 1)
    pc = proj.copy()
    pc[0] = 0.0
    w = trig_eval(pc, tt)
    raw = np.arctan2(_cross(w, v0[:, None]), np.sum(w * v0[:, None], axis=0))
    phase = np.unwrap(raw)
    phase -= phase[0]
    total = phase[-1]
    if abs(abs(total) - TWO_PI) > 1e-6:
        raise ChartError(
            f"projected cycle does not wind once around its mean for plane {plane!r} "
            f"(winding {total / TWO_PI:.3f})")
    s = 1 if total > 0 else -1
    d = np.diff(s * phase)
    if np.any(d <= 0):
        k = int(np.argmax(d <= 0))
        raise ChartError(
            "projected cycle not star-shaped for this plane: geometric phase not "
            f"monotone on vartheta in [{tt[k]:.6f}, {tt[k + 1]:.6f}]")
    table = s * phase
    table[-1] = TWO_PI
    for arr in (proj, center, v0, tt, table, sc):
        arr.setflags(write=False)
    return PolarChart(orbit, (i, j), proj, center, v0, tt, table, s, sc)
