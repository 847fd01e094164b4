"""Block-system assembly for one Picard iterate.

Unknowns are interleaved: row/column ``2 i`` is phi in cell ``i`` and
``2 i + 1`` is psi in cell ``i``. Every cell couples to its 5-point
neighbourhood with a full 2x2 block, so the phi-phi neighbour and psi-psi
slots exist as explicit zeros. They give ILU(0) room for the fill that links
the two fields.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..kernel import KernelTable
from .config import SolverConfig
from .mesh import Mesh2D

# neighbour offsets in sorted column order: south, west, (self), east, north
_DIRECTIONS = ("S", "W", "E", "N")


class AssemblyError(RuntimeError):
    pass


def W(phi):
    return 0.25 * (phi * phi - 1.0) ** 2


def dW(phi):
    return phi * (phi * phi - 1.0)


def d2W(phi):
    return 3.0 * phi * phi - 1.0


def mobility(phi, exponent):
    return np.clip(1.0 - phi * phi, 0.0, None) ** exponent


@dataclass(frozen=True)
class _Pattern:
    indptr: np.ndarray
    indices: np.ndarray
    nnz: int
    # positions into the data array; ``nnz`` marks an absent neighbour
    pp: np.ndarray
    pq: np.ndarray
    qp: np.ndarray
    qq: np.ndarray
    pq_nb: dict
    qp_nb: dict
    has_nb: dict


@lru_cache(maxsize=8)
def _pattern(mesh: Mesh2D) -> _Pattern:
    nx, ny = mesh.nx, mesh.ny
    n = mesh.n_cells
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ix, iy = ix.ravel(), iy.ravel()
    has = {"S": iy > 0, "W": ix > 0, "E": ix < nx - 1, "N": iy < ny - 1}
    # number of neighbour cells (plus self) per cell, blocks are 2 wide
    ncell = 1 + sum(h.astype(int) for h in has.values())
    row_len = np.repeat(2 * ncell, 2)
    indptr = np.concatenate([[0], np.cumsum(row_len)]).astype(np.int64)
    nnz = int(indptr[-1])
    # offset of each block column inside a row, in sorted order
    order = [("S", has["S"]), ("W", has["W"]), ("C", np.ones(n, bool)), ("E", has["E"]),
             ("N", has["N"])]
    cell_of = {"S": np.arange(n) - nx, "W": np.arange(n) - 1, "C": np.arange(n),
               "E": np.arange(n) + 1, "N": np.arange(n) + nx}
    slot = np.zeros(n, dtype=np.int64)
    offset = {}
    indices = np.empty(nnz, dtype=np.int64)
    prow, qrow = indptr[0:-1:2], indptr[1::2]
    for name, mask in order:
        off = np.where(mask, slot, -1)
        offset[name] = off
        c = cell_of[name]
        for base in (prow, qrow):
            at = base[mask] + 2 * slot[mask]
            indices[at] = 2 * c[mask]
            indices[at + 1] = 2 * c[mask] + 1
        slot = slot + mask
    pp = prow + 2 * offset["C"]
    pq = pp + 1
    qp = qrow + 2 * offset["C"]
    qq = qp + 1
    pq_nb, qp_nb = {}, {}
    for d in _DIRECTIONS:
        m = has[d]
        pq_nb[d] = np.where(m, prow + 2 * offset[d] + 1, nnz)
        qp_nb[d] = np.where(m, qrow + 2 * offset[d], nnz)
    return _Pattern(indptr, indices, nnz, pp, pq, qp, qq, pq_nb, qp_nb, has)


@dataclass
class BlockSystem:
    """Row-scaled block system ``A x = rhs``.

    ``row_scale[r]`` is the factor applied to row ``r``; phi rows are scaled
    by dt and psi rows by dx dy / eps, which brings the stencil entries to
    order one.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_scale: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[0] // 2

    def unscaled_entry(self, row: int, col: int) -> float:
        return float(self.matrix[row, col] / self.row_scale[row])

    def unscaled_rhs(self):
        return self.rhs / self.row_scale


def face_coefficients(mobility_cell, mesh: Mesh2D):
    """Per-cell face transmissibilities M_f / h^2 toward S, W, E, N (0 on walls)."""
    m = mesh.grid(mobility_cell)
    ew = 0.5 * (m[:, 1:] + m[:, :-1]) / mesh.dx ** 2
    ns = 0.5 * (m[1:, :] + m[:-1, :]) / mesh.dy ** 2
    out = {d: np.zeros_like(m) for d in _DIRECTIONS}
    out["E"][:, :-1] = ew
    out["W"][:, 1:] = ew
    out["N"][:-1, :] = ns
    out["S"][1:, :] = ns
    return {d: v.ravel() for d, v in out.items()}


def b_psi(phi_k, epsilon, beta):
    """Explicit remainder of the stabilized linearization of W'/eps.

    With the psi row written as K phi - Q' psi = b, consistency with
    Q' psi = W'(phi)/eps - eps Lap phi fixes b = ((W'' + beta) phi - W') / eps.
    """
    return ((d2W(phi_k) + beta) * phi_k - dW(phi_k)) / epsilon


def _check(name, values):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise AssemblyError(f"non-finite {name} coefficient in cell {i}")


def assemble_block(phi_n, phi_k, kernel: KernelTable, cfg: SolverConfig, mesh: Mesh2D,
                   dt: float) -> BlockSystem:
    """Assemble the block system for the step from ``phi_n`` at iterate ``phi_k``.

    phi rows: S (phi^{n+1} - ...) / dt + D_k psi^{n+1}, with the Q slope S set by
    ``cfg.phi_slope``. psi rows: K_k phi^{n+1} - Q'_alpha psi^{n+1} = b_psi with
    K_k = -eps Lap_h + (W''(phi^k) + beta) / eps.
    """
    _check("phi_k", phi_k)
    pat = _pattern(mesh)
    eps, beta = cfg.epsilon, cfg.beta
    pk = np.clip(phi_k, -1.0, 1.0)
    pn = np.clip(phi_n, -1.0, 1.0)
    if cfg.phi_slope == "qbar":
        # Qbar(phi^k) phi^{n+1} = Q(phi^n) + dt div(...)
        q_slope = kernel.Qbar(pk)
        rhs_phi = kernel.Q(pn)
    else:
        # Qhat'(phi^k, phi^n) (phi^{n+1} - phi^n) = dt div(...)
        q_slope = np.maximum(discrete_chain_quotient(pk, pn, kernel), cfg.alpha_Qprime)
        rhs_phi = q_slope * pn
    if cfg.scheme == "convex_split":
        slope = np.maximum(discrete_chain_quotient(pk, pn, kernel), cfg.alpha_Qprime)
        mob = mobility(pn, cfg.mobility_exponent)
        # W_c' linearized at phi^k, W_e' = beta phi kept at the old level
        rhs_psi = b_psi(pk, eps, beta) - beta * (pk - pn) / eps
    else:
        slope = np.maximum(kernel.dQ(pk), cfg.alpha_Qprime)
        mob = mobility(pk, cfg.mobility_exponent)
        rhs_psi = b_psi(pk, eps, beta)
    react = (d2W(pk) + beta) / eps
    for name, v in (("Q slope", q_slope), ("Q'", slope), ("mobility", mob), ("reaction", react)):
        _check(name, v)

    coef = face_coefficients(mob, mesh)
    sp_ = mesh.dx * mesh.dy / eps
    data = np.zeros(pat.nnz + 1)
    data[pat.pp] = q_slope
    data[pat.pq] = dt * sum(coef.values())
    data[pat.qq] = -sp_ * slope
    lap_diag = np.zeros(mesh.n_cells)
    for d in _DIRECTIONS:
        g = pat.has_nb[d] / (mesh.dx ** 2 if d in "EW" else mesh.dy ** 2)
        lap_diag += g
        data[pat.pq_nb[d]] = -dt * coef[d]
        data[pat.qp_nb[d]] = -sp_ * eps * g
    data[pat.qp] = sp_ * (eps * lap_diag + react)
    matrix = sp.csr_matrix((data[:-1], pat.indices, pat.indptr),
                           shape=(2 * mesh.n_cells, 2 * mesh.n_cells))
    rhs = np.empty(2 * mesh.n_cells)
    rhs[0::2] = rhs_phi
    rhs[1::2] = sp_ * rhs_psi
    scale = np.empty(2 * mesh.n_cells)
    scale[0::2] = dt
    scale[1::2] = sp_
    return BlockSystem(matrix, rhs, scale)


def discrete_chain_quotient(a, b, kernel: KernelTable, tol: float = 1e-12):
    """Secant slope (Q(a) - Q(b)) / (a - b), with Q'(b) when |a - b| < tol."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    close = np.abs(diff) < tol
    safe = np.where(close, 1.0, diff)
    out = np.where(close, kernel.dQ(b), (kernel.Q(a) - kernel.Q(b)) / safe)
    return float(out) if out.ndim == 0 else out
