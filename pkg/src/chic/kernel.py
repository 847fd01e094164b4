"""Conserved mappings Q(phi) and their runtime evaluation.

A kernel is specified by ``Q'(phi) = (1 - phi^2)^k S(phi) / B`` with an even
shaping ``S`` and normalization ``B = int_0^1 (1 - s^2)^k S(s) ds``, so that
``Q`` is odd, increasing and ``Q(+-1) = +-1``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .quad import HermiteTable1D, build_table, gauss_legendre

FAMILIES = ("mass", "polynomial", "exp", "rational_ev", "pade_ev")
#: tolerated overshoot of |phi| beyond 1 before evaluation refuses
PHI_OVERSHOOT = 1e-6


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Declarative description of a conserved mapping.

    Use the constructors :meth:`mass`, :meth:`polynomial`, :meth:`exp_shaped`,
    :meth:`rational_ev` and :meth:`pade_ev` rather than filling fields by hand.
    """

    family: str
    k: int = 0
    beta2: float | None = None
    endpoint_vanishing: bool = False
    p: float | None = None
    q: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if self.family == "mass" and self.k != 0:
            raise KernelError("mass kernel has k = 0")
        if self.family == "polynomial" and self.k < 0:
            raise KernelError("polynomial kernel needs k >= 0")
        if self.family == "exp":
            if self.beta2 is None or not self.beta2 < 0:
                raise KernelError("exponential shaping needs beta2 < 0")
            if self.endpoint_vanishing and self.k != 1:
                raise KernelError("endpoint-vanishing exponential shaping is defined for k = 1")
            if not self.endpoint_vanishing and self.k < 2:
                raise KernelError("plain exponential shaping needs k >= 2")
        if self.family in ("rational_ev", "pade_ev"):
            if self.k != 1:
                raise KernelError(f"{self.family} kernels use k = 1")
            if self.q is None or not self.q > 0:
                raise KernelError(f"{self.family} needs q > 0")
        if self.family == "pade_ev" and self.p is None:
            raise KernelError("pade_ev needs p")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    # constructors -------------------------------------------------------
    @classmethod
    def mass(cls, label=""):
        return cls("mass", 0, label=label)

    @classmethod
    def polynomial(cls, k: int, label=""):
        if k == 0:
            return cls.mass(label=label)
        return cls("polynomial", int(k), label=label)

    @classmethod
    def exp_shaped(cls, k: int, beta2: float, endpoint_vanishing: bool = False, label=""):
        return cls("exp", int(k), beta2=float(beta2), endpoint_vanishing=bool(endpoint_vanishing),
                   label=label)

    @classmethod
    def rational_ev(cls, q: float, label=""):
        return cls("rational_ev", 1, q=float(q), endpoint_vanishing=True, label=label)

    @classmethod
    def pade_ev(cls, p: float, q: float, label=""):
        return cls("pade_ev", 1, p=float(p), q=float(q), endpoint_vanishing=True, label=label)

    def _default_label(self):
        if self.family == "mass":
            return "M"
        if self.family == "polynomial":
            return "NMN" if self.k == 1 else f"Zhou k={self.k}"
        if self.family == "exp":
            return f"EXP k={self.k}"
        return {"rational_ev": "Rational", "pade_ev": "Pade"}[self.family]

    @property
    def effective_degeneracy(self) -> int:
        """Vanishing order of Q' at +-1 in powers of (1 - phi^2)."""
        return self.k + 1 if self.endpoint_vanishing else self.k

    @property
    def is_nmn(self) -> bool:
        return self.family == "polynomial" and self.k == 1

    def with_param(self, name: str, value: float) -> "KernelSpec":
        if name not in ("beta2", "p", "q"):
            raise KernelError(f"{name!r} is not a tunable parameter")
        return dataclasses.replace(self, **{name: float(value)})

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family in ("polynomial", "exp"):
            d["k"] = self.k
        for name in ("beta2", "p", "q"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.family == "exp":
            d["endpoint_vanishing"] = self.endpoint_vanishing
        d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        family = d.pop("family")
        label = d.pop("label", "")
        if family == "mass":
            return cls.mass(label=label)
        if family == "polynomial":
            return cls.polynomial(int(d["k"]), label=label)
        if family == "exp":
            return cls.exp_shaped(int(d["k"]), d["beta2"], d.get("endpoint_vanishing", False), label=label)
        if family == "rational_ev":
            return cls.rational_ev(d["q"], label=label)
        if family == "pade_ev":
            return cls.pade_ev(d["p"], d["q"], label=label)
        raise KernelError(f"unknown kernel family {family!r}")


def shape_function(spec: KernelSpec, u, w):
    """Unnormalized ``(1 - u^2)^k S(u)``.

    ``w`` must equal ``1 - u^2``; passing it separately lets callers supply
    it without cancellation (e.g. ``sech^2`` in a tanh substitution).
    The endpoint-vanishing shapings are rewritten with the factor ``w``
    pulled out analytically.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    base = w ** spec.k
    if spec.family in ("mass", "polynomial"):
        return base * np.ones_like(u)
    u2 = u * u
    if spec.family == "exp":
        b = spec.beta2
        if spec.endpoint_vanishing:
            # exp(b u^2) - exp(b) = exp(b) * expm1(-b w)
            return base * np.exp(b) * np.expm1(-b * w)
        return base * np.exp(b * u2)
    q = spec.q
    if spec.family == "rational_ev":
        # 1/(1+q u^2) - 1/(1+q) = q w / ((1+q u^2)(1+q))
        return base * q * w / ((1 + q * u2) * (1 + q))
    p = spec.p
    # (1+p u^4)/(1+q u^2) - (1+p)/(1+q) = w (q - p(1+u^2) - p q u^2) / ((1+q u^2)(1+q))
    return base * w * (q - p * (1 + u2) - p * q * u2) / ((1 + q * u2) * (1 + q))


def _poly_qbar_coefficients(k: int):
    """Exact coefficients of Qbar_k as a polynomial in phi^2, and B_k."""
    terms = [Fraction((-1) ** j * comb(k, j), 2 * j + 1) for j in range(k + 1)]
    b = sum(terms)
    return [t / b for t in terms], b


def _poly_tail_coefficients(k: int, b: Fraction):
    """Coefficients c_j with 1 - Q_k(phi) = s^(k+1) sum_j c_j s^j, s = 1 - phi."""
    # (1 - u^2)^k = s^k (2 - s)^k with s = 1 - u
    return [Fraction(comb(k, j) * 2 ** (k - j) * (-1) ** j, k + j + 1) / b for j in range(k + 1)]


class KernelTable:
    """Normalized, evaluable kernel built by :func:`build_kernel`.

    Mass and polynomial kernels are evaluated in closed form; shaped kernels
    through a cubic Hermite table of Q on [0, 1] reflected oddly. Q' is always
    the analytic family formula.
    """

    def __init__(self, spec: KernelSpec, node_count: int = 256, phi_tol: float = 1e-10,
                 alpha_Qprime: float = 1e-6):
        self.spec = spec
        self.phi_tol = phi_tol
        self.alpha_Qprime = alpha_Qprime
        self.degeneracy_order = spec.effective_degeneracy
        self.Q_table: HermiteTable1D | None = None
        self._qbar_coeffs = None
        self._tail_coeffs = None
        if spec.family in ("mass", "polynomial"):
            coeffs, b = _poly_qbar_coefficients(spec.k)
            self.B = float(b)
            # highest power first for np.polyval in phi^2
            self._qbar_coeffs = np.array([float(c) for c in coeffs[::-1]])
            self._tail_coeffs = np.array([float(c) for c in _poly_tail_coefficients(spec.k, b)[::-1]])
        else:
            self._check_shaping()
            self.B, self.Q_table = self._tabulate(node_count)

    def _check_shaping(self, n=10_000):
        u = np.linspace(0.0, 1.0, n + 1)[:-1]
        s = shape_function(self.spec, u, 1 - u * u)
        bad = np.flatnonzero(~(s > 0))
        if bad.size:
            raise KernelError(f"shaping of {self.spec.label} is not positive at phi={u[bad[0]]:.6g}")

    def _tabulate(self, node_count):
        rule = gauss_legendre(16)
        grid = np.linspace(0.0, 1.0, node_count)
        a, b = grid[:-1], grid[1:]
        half = 0.5 * (b - a)
        x = (0.5 * (a + b))[:, None] + half[:, None] * rule.nodes[None, :]
        f = shape_function(self.spec, x, (1 - x) * (1 + x))
        panels = half * (f @ rule.weights)
        cum = np.concatenate([[0.0], np.cumsum(panels)])
        norm = cum[-1]
        values = cum / norm
        values[-1] = 1.0
        table = build_table(lambda g: values, node_count,
                            df=lambda g: shape_function(self.spec, g, (1 - g) * (1 + g)) / norm)
        return float(norm), table

    # evaluation -------------------------------------------------------------
    @staticmethod
    def _checked(phi):
        phi = np.asarray(phi, dtype=float)
        big = np.abs(phi) > 1 + PHI_OVERSHOOT
        if big.any():
            raise KernelError(f"phi={float(phi[big].flat[0])!r} outside [-1, 1]")
        return np.clip(phi, -1.0, 1.0)

    def Q(self, phi):
        phi = self._checked(phi)
        if self._qbar_coeffs is not None:
            a = np.abs(phi)
            # near +-1 the tail form keeps Q monotone where Q' underflows the rounding of phi*Qbar
            s = 1.0 - a
            tail = 1.0 - s ** (self.spec.k + 1) * np.polyval(self._tail_coeffs, s)
            return np.sign(phi) * np.where(a < 0.5, a * np.polyval(self._qbar_coeffs, a * a), tail)
        return np.sign(phi) * self.Q_table(np.abs(phi))

    def Qbar(self, phi):
        phi = self._checked(phi)
        if self._qbar_coeffs is not None:
            return np.polyval(self._qbar_coeffs, phi * phi)
        a = np.abs(phi)
        small = a <= self.phi_tol
        safe = np.where(small, 1.0, a)
        return np.where(small, self.dQ(0.0), self.Q_table(safe) / safe)

    def dQ(self, phi):
        phi = self._checked(phi)
        return shape_function(self.spec, phi, (1 - phi) * (1 + phi)) / self.B

    def dQ_floored(self, phi):
        return np.maximum(self.dQ(phi), self.alpha_Qprime)

    def __repr__(self):
        return f"KernelTable({self.spec.label!r}, B={self.B:.12g})"


def build_kernel(spec: KernelSpec, node_count: int = 256, alpha_Qprime: float = 1e-6,
                 phi_tol: float = 1e-10) -> KernelTable:
    return KernelTable(spec, node_count=node_count, alpha_Qprime=alpha_Qprime, phi_tol=phi_tol)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def eval_Q(kernel: KernelTable, phi):
    return _scalar(kernel.Q(phi))


def eval_Qbar(kernel: KernelTable, phi):
    """Q(phi)/phi, switching to the limit Q'(0) for |phi| <= phi_tol."""
    return _scalar(kernel.Qbar(phi))


def eval_Qprime(kernel: KernelTable, phi):
    return _scalar(kernel.dQ(phi))


def eval_Qprime_floored(kernel: KernelTable, phi):
    return _scalar(kernel.dQ_floored(phi))
