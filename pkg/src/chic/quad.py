"""Quadrature and 1D table primitives.

Everything here works on vectorized callables: an integrand ``f`` receives a
NumPy array of abscissae and must return an array of the same shape.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when an integral cannot be evaluated to the requested accuracy.

    ``estimate`` and ``error`` carry the best available value and its error
    bound (``nan`` when no estimate exists, e.g. for non-finite integrands).
    """

    def __init__(self, message, estimate=float("nan"), error=float("nan")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=None)
def gauss_legendre(order: int = 16) -> QuadratureRule:
    if order < 1:
        raise ValueError("order must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w)


def _evaluate(f, x):
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    bad = ~np.isfinite(fx)
    if bad.any():
        xb = float(np.asarray(x)[bad].flat[0])
        raise QuadratureError(f"non-finite integrand value at x={xb!r}")
    return fx


def integrate_fixed(f, a: float, b: float, rule: QuadratureRule | None = None) -> float:
    """Affinely mapped fixed-rule quadrature of ``f`` over [a, b]."""
    if not b > a:
        raise ValueError(f"need b > a, got a={a}, b={b}")
    rule = rule or gauss_legendre(16)
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * rule.nodes
    return float(half * (rule.weights @ _evaluate(f, x)))


def _panel(f, a, b, r16, r8):
    """16-point value on [a, b] plus the error estimate against two 8-point halves."""
    m = 0.5 * (a + b)
    h = 0.5 * (b - a)
    q = 0.5 * h
    x = np.concatenate([m + h * r16.nodes, 0.5 * (a + m) + q * r8.nodes, 0.5 * (m + b) + q * r8.nodes])
    fx = _evaluate(f, x)
    n = r16.order
    i16 = h * (r16.weights @ fx[:n])
    i8 = q * (r8.weights @ fx[n:n + r8.order] + r8.weights @ fx[n + r8.order:])
    return i16, abs(i16 - i8)


def integrate_adaptive(f, a: float, b: float, abs_tol: float = 1e-12, rel_tol: float = 1e-12,
                       max_depth: int = 200, max_panels: int = 20000) -> float:
    """Globally adaptive Gauss-Legendre quadrature.

    The panel with the largest error estimate is bisected until the summed
    estimate drops below ``max(abs_tol, rel_tol * |I|)``. Integrable endpoint
    singularities are handled by repeated bisection towards the endpoint,
    which is why ``max_depth`` is generous.

    Raises
    ------
    QuadratureError
        If a panel would exceed ``max_depth`` bisections (or the panel budget
        is exhausted) before the tolerance is met.
    """
    if not b > a:
        raise ValueError(f"need b > a, got a={a}, b={b}")
    if abs_tol <= 0 or rel_tol <= 0:
        raise ValueError("tolerances must be positive")
    r16, r8 = gauss_legendre(16), gauss_legendre(8)
    val, err = _panel(f, a, b, r16, r8)
    heap = [(-err, a, b, val, 0)]
    total, total_err = val, err
    n_panels = 1
    while total_err > max(abs_tol, rel_tol * abs(total)):
        neg_err, lo, hi, v, depth = heapq.heappop(heap)
        unresolvable = (hi - lo) <= 64 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300)
        if depth >= max_depth or n_panels >= max_panels or unresolvable:
            heapq.heappush(heap, (neg_err, lo, hi, v, depth))
            raise QuadratureError(
                f"adaptive quadrature did not converge on [{a}, {b}] "
                f"(estimate {float(total)!r}, error bound {total_err:.3e})",
                estimate=total, error=total_err)
        mid = 0.5 * (lo + hi)
        v1, e1 = _panel(f, lo, mid, r16, r8)
        v2, e2 = _panel(f, mid, hi, r16, r8)
        heapq.heappush(heap, (-e1, lo, mid, v1, depth + 1))
        heapq.heappush(heap, (-e2, mid, hi, v2, depth + 1))
        n_panels += 1
        # re-summing avoids drift from repeated add/subtract of large terms
        total = sum(p[3] for p in heap)
        total_err = sum(-p[0] for p in heap)
    return float(total)


@dataclass(frozen=True)
class HermiteTable1D:
    """Cubic Hermite interpolant sampled on a uniform grid over [0, 1]."""

    grid: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.grid)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = self.node_count - 1
        s = np.clip(x, 0.0, 1.0) * n
        i = np.minimum(s.astype(np.intp), n - 1)
        t = s - i
        h = 1.0 / n
        t2 = t * t
        t3 = t2 * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        v, d = self.values, self.derivatives
        return h00 * v[i] + h10 * h * d[i] + h01 * v[i + 1] + h11 * h * d[i + 1]

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        n = self.node_count - 1
        s = np.clip(x, 0.0, 1.0) * n
        i = np.minimum(s.astype(np.intp), n - 1)
        t = s - i
        h = 1.0 / n
        t2 = t * t
        v, d = self.values, self.derivatives
        return ((6 * t2 - 6 * t) * (v[i] - v[i + 1]) / h
                + (3 * t2 - 4 * t + 1) * d[i] + (3 * t2 - 2 * t) * d[i + 1])

    def odd_extension(self, x):
        """Evaluate the odd extension f(-x) = -f(x) on [-1, 1]."""
        x = np.asarray(x, dtype=float)
        return np.sign(x) * self(np.abs(x))


def build_table(f, node_count: int = 256, df=None) -> HermiteTable1D:
    """Sample ``f`` (and ``df`` if given) on ``node_count`` uniform nodes of [0, 1].

    Without ``df`` the slopes come from second-order differences with step
    equal to the grid spacing (one-sided at the two ends).
    """
    if node_count < 4:
        raise ValueError(f"node_count must be >= 4, got {node_count}")
    grid = np.linspace(0.0, 1.0, node_count)
    values = np.asarray(f(grid), dtype=float)
    if df is not None:
        derivs = np.asarray(df(grid), dtype=float)
    else:
        h = grid[1] - grid[0]
        derivs = np.empty_like(values)
        derivs[1:-1] = (values[2:] - values[:-2]) / (2 * h)
        derivs[0] = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * h)
        derivs[-1] = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * h)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(derivs))):
        raise ValueError("table samples must be finite")
    for arr in (grid, values, derivs):
        arr.setflags(write=False)
    return HermiteTable1D(grid, values, derivs)
