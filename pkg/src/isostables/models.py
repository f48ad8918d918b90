"""Vector fields studied by the package.

States are arrays whose *first* axis indexes the state components, so every
right-hand side accepts either a single state of shape ``(n,)`` or a batch of
shape ``(n, B)``.  Jacobians are returned with shape ``(n, n)`` or
``(n, n, B)`` accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import yaml

Array = np.ndarray


class ModelError(ValueError):
    """Raised for unknown models or models lacking a requested representation."""


@dataclass(frozen=True)
class PolynomialField:
    """Polynomial vector field ``F(x) = sum_k F_k x^k``.

    ``terms`` maps a multi-index ``(k_1, ..., k_n)`` to its coefficient vector
    in R^n.
    """

    dim: int
    terms: Mapping[tuple[int, ...], Array]

    def __post_init__(self):
        clean = {}
        for idx, coeff in self.terms.items():
            idx = tuple(int(k) for k in idx)
            if len(idx) != self.dim or min(idx) < 0:
                raise ModelError(f"bad multi-index {idx} for dim {self.dim}")
            coeff = np.asarray(coeff, dtype=float).reshape(self.dim)
            if idx in clean:
                raise ModelError(f"duplicate multi-index {idx}")
            clean[idx] = coeff
        object.__setattr__(self, "terms", clean)

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def __call__(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for idx, coeff in self.terms.items():
            mono = _monomial(x, idx)
            out += coeff.reshape((-1,) + (1,) * (x.ndim - 1)) * mono
        return out

    def jacobian(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        n = self.dim
        jac = np.zeros((n, n) + x.shape[1:])
        for idx, coeff in self.terms.items():
            for j, kj in enumerate(idx):
                if kj == 0:
                    continue
                lowered = list(idx)
                lowered[j] -= 1
                d = kj * _monomial(x, lowered)
                jac[:, j] += coeff.reshape((-1,) + (1,) * (x.ndim - 1)) * d
        return jac

    def divergence(self, x: Array) -> Array:
        return np.trace(self.jacobian(x), axis1=0, axis2=1)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "terms": [
                {"exponents": list(idx), "coeffs": [float(c) for c in coeff]}
                for idx, coeff in sorted(self.terms.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolynomialField":
        try:
            dim = int(data["dim"])
            terms = {}
            for entry in data["terms"]:
                idx = tuple(int(k) for k in entry["exponents"])
                if idx in terms:
                    raise ModelError(f"duplicate multi-index {idx}")
                terms[idx] = entry["coeffs"]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed polynomial model: {exc}") from exc
        return cls(dim, terms)


def _monomial(x: Array, idx) -> Array:
    mono = np.ones(x.shape[1:])
    for i, k in enumerate(idx):
        if k:
            mono = mono * x[i] ** k
    return mono


@dataclass(frozen=True)
class Model:
    """An autonomous vector field with its Jacobian."""

    name: str
    dim: int
    rhs: Callable[[Array], Array] = field(repr=False)
    jac: Callable[[Array], Array] | None = field(default=None, repr=False)
    poly: PolynomialField | None = field(default=None, repr=False)
    params: Mapping[str, float] = field(default_factory=dict)

    def eval(self, x) -> Array:
        return self.rhs(np.asarray(x, dtype=float))

    def jacobian(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return self.jac(x)
        return finite_difference_jacobian(self.rhs, x)


def finite_difference_jacobian(rhs, x: Array, eps: float = 1e-6) -> Array:
    """Central-difference Jacobian, used for models without an analytic one."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    jac = np.empty((n, n) + x.shape[1:])
    for j in range(n):
        h = eps * np.maximum(1.0, np.abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (rhs(xp) - rhs(xm)) / (2 * h)
    return jac


def polynomial_model(poly: PolynomialField, name: str = "polynomial") -> Model:
    return Model(name=name, dim=poly.dim, rhs=poly, jac=poly.jacobian, poly=poly)


# --- Van der Pol -----------------------------------------------------------


def _vdp_rhs(x):
    return np.stack([x[1], x[1] * (1 - x[0] ** 2) - x[0]])


def _vdp_jac(x):
    z, o = np.zeros_like(x[0]), np.ones_like(x[0])
    return np.array([[z, o], [-2 * x[0] * x[1] - 1, 1 - x[0] ** 2]])


def _vdp_poly():
    return PolynomialField(2, {
        (0, 1): [1.0, 1.0],
        (2, 1): [0.0, -1.0],
        (1, 0): [0.0, -1.0],
    })


# --- three-dimensional Van der Pol variant ----------------------------------


def _vdp3d(a: float, b: float):
    def rhs(x):
        return np.stack([
            x[1] - b * x[2],
            x[1] * (1 - x[0] ** 2) - x[0],
            a * (x[0] - x[2]),
        ])

    def jac(x):
        z, o = np.zeros_like(x[0]), np.ones_like(x[0])
        return np.array([
            [z, o, -b * o],
            [-2 * x[0] * x[1] - 1, 1 - x[0] ** 2, z],
            [a * o, z, -a * o],
        ])

    poly = PolynomialField(3, {
        (0, 1, 0): [1.0, 1.0, 0.0],
        (0, 0, 1): [-b, 0.0, -a],
        (2, 1, 0): [0.0, -1.0, 0.0],
        (1, 0, 0): [0.0, -1.0, a],
    })
    return rhs, jac, poly


# --- radial Hopf normal form (analytic oracle) -------------------------------


def _radial_hopf(kappa: float, omega0: float):
    def rhs(x):
        s = kappa * (1 - x[0] ** 2 - x[1] ** 2)
        return np.stack([s * x[0] - omega0 * x[1], s * x[1] + omega0 * x[0]])

    def jac(x):
        s = kappa * (1 - x[0] ** 2 - x[1] ** 2)
        return np.array([
            [s - 2 * kappa * x[0] ** 2, -2 * kappa * x[0] * x[1] - omega0],
            [-2 * kappa * x[0] * x[1] + omega0, s - 2 * kappa * x[1] ** 2],
        ])

    poly = PolynomialField(2, {
        (1, 0): [kappa, omega0],
        (0, 1): [-omega0, kappa],
        (3, 0): [-kappa, 0.0],
        (1, 2): [-kappa, 0.0],
        (2, 1): [0.0, -kappa],
        (0, 3): [0.0, -kappa],
    })
    return rhs, jac, poly


# --- Hodgkin-Huxley ---------------------------------------------------------

HH_PARAMS = {
    "V_Na": 115.0, "V_K": -12.0, "V_L": 10.6,
    "g_Na": 120.0, "g_K": 36.0, "g_L": 0.3,
    "C": 1.0, "I_b": 10.0,
}

# removable singularity switch for u / (e^u - 1)
_SERIES_EPS = 1e-7


def _xexpm1(u):
    """u / (e^u - 1) and its derivative, with the limit at u = 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SERIES_EPS
    safe = np.where(small, 1.0, u)
    em1 = np.expm1(safe)
    val = np.where(small, 1.0 - u / 2, safe / em1)
    der = np.where(small, -0.5 + u / 6, (em1 - safe * (em1 + 1)) / em1 ** 2)
    return val, der


def hh_rates(V):
    """Rate functions (alpha, beta) for m, h, n and their V-derivatives."""
    um = 2.5 - 0.1 * V
    am, dam = _xexpm1(um)
    dam = -0.1 * dam
    un = 1.0 - 0.1 * V
    an, dan = _xexpm1(un)
    an, dan = 0.1 * an, -0.01 * dan
    bm = 4.0 * np.exp(-V / 18)
    ah = 0.07 * np.exp(-V / 20)
    eh = np.exp(3 - 0.1 * V)
    bh = 1.0 / (1.0 + eh)
    bn = 0.125 * np.exp(-V / 80)
    rates = dict(am=am, bm=bm, ah=ah, bh=bh, an=an, bn=bn)
    drates = dict(
        am=dam, bm=-bm / 18, ah=-ah / 20, bh=0.1 * eh * bh ** 2,
        an=dan, bn=-bn / 80,
    )
    return rates, drates


def _hodgkin_huxley(p: Mapping[str, float]):
    def rhs(x):
        V, m, h, n = x
        r, _ = hh_rates(V)
        dV = (-p["g_Na"] * (V - p["V_Na"]) * m ** 3 * h
              - p["g_K"] * (V - p["V_K"]) * n ** 4
              - p["g_L"] * (V - p["V_L"]) + p["I_b"]) / p["C"]
        return np.stack([
            dV,
            r["am"] * (1 - m) - r["bm"] * m,
            r["ah"] * (1 - h) - r["bh"] * h,
            r["an"] * (1 - n) - r["bn"] * n,
        ])

    def jac(x):
        V, m, h, n = x
        r, d = hh_rates(V)
        z = np.zeros_like(V)
        C = p["C"]
        gna, gk = p["g_Na"], p["g_K"]
        row_v = [
            (-gna * m ** 3 * h - gk * n ** 4 - p["g_L"]) / C,
            -3 * gna * (V - p["V_Na"]) * m ** 2 * h / C,
            -gna * (V - p["V_Na"]) * m ** 3 / C,
            -4 * gk * (V - p["V_K"]) * n ** 3 / C,
        ]
        row_m = [d["am"] * (1 - m) - d["bm"] * m, -r["am"] - r["bm"], z, z]
        row_h = [d["ah"] * (1 - h) - d["bh"] * h, z, -r["ah"] - r["bh"], z]
        row_n = [d["an"] * (1 - n) - d["bn"] * n, z, z, -r["an"] - r["bn"]]
        return np.array([row_v, row_m, row_h, row_n])

    return rhs, jac


BUILTIN_MODELS = ("vdp", "vdp3d", "hodgkin_huxley", "radial_hopf")


def builtin_model(name: str, **params) -> Model:
    """Return one of the built-in models, fully parameterized.

    ``radial_hopf`` accepts ``kappa`` and ``omega0``; ``vdp3d`` accepts ``a``
    and ``b``; ``hodgkin_huxley`` accepts overrides of :data:`HH_PARAMS`.
    """
    if name == "vdp":
        return Model("vdp", 2, _vdp_rhs, _vdp_jac, _vdp_poly())
    if name == "vdp3d":
        prm = {"a": 2.0, "b": 0.2, **params}
        rhs, jac, poly = _vdp3d(prm["a"], prm["b"])
        return Model("vdp3d", 3, rhs, jac, poly, prm)
    if name == "radial_hopf":
        prm = {"kappa": 1.0, "omega0": 2.0, **params}
        rhs, jac, poly = _radial_hopf(prm["kappa"], prm["omega0"])
        return Model("radial_hopf", 2, rhs, jac, poly, prm)
    if name == "hodgkin_huxley":
        prm = {**HH_PARAMS, **params}
        rhs, jac = _hodgkin_huxley(prm)
        return Model("hodgkin_huxley", 4, rhs, jac, None, prm)
    raise ModelError(
        f"unknown model {name!r}; expected one of {', '.join(BUILTIN_MODELS)}"
    )


def poly_expand(model: Model) -> PolynomialField:
    if model.poly is None:
        raise ModelError(f"model {model.name!r} is not polynomial")
    return model.poly


def load_polynomial_model(path: str | Path, name: str | None = None) -> Model:
    """Load a user model from a YAML/JSON polynomial description.

    Schema::

        dim: 2
        terms:
          - {exponents: [0, 1], coeffs: [1.0, 1.0]}
          - {exponents: [2, 1], coeffs: [0.0, -1.0]}
    """
    path = Path(path)
    data = yaml.safe_load(path.read_text())
    poly = PolynomialField.from_dict(data)
    return polynomial_model(poly, name or data.get("name", path.stem))


def hopf_amplitude(r) -> Array:
    """Closed-form amplitude coordinate of ``radial_hopf`` at radius ``r``
    (normalized by the observable rho - 1; independent of kappa)."""
    r = np.asarray(r, dtype=float)
    return (r ** 2 - 1) / (2 * r ** 2)


__all__ = [
    "Model", "PolynomialField", "ModelError", "builtin_model", "poly_expand",
    "polynomial_model", "load_polynomial_model", "finite_difference_jacobian",
    "hh_rates", "HH_PARAMS", "BUILTIN_MODELS", "hopf_amplitude",
]
