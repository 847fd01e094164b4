"""ILU(0) preconditioning and restarted GMRES for the block system."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolverError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@numba.njit(cache=True)
def _ilu0_factor(indptr, indices, data, diag):
    n = indptr.shape[0] - 1
    lu = data.copy()
    iw = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = p
        for p in range(indptr[i], diag[i]):
            k = indices[p]
            lu[p] /= lu[diag[k]]
            lik = lu[p]
            for q in range(diag[k] + 1, indptr[k + 1]):
                w = iw[indices[q]]
                if w != -1:
                    lu[w] -= lik * lu[q]
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = -1
        if lu[diag[i]] == 0.0 or not np.isfinite(lu[diag[i]]):
            return lu, i
    return lu, -1


@numba.njit(cache=True)
def _ilu0_solve(indptr, indices, lu, diag, b):
    n = b.shape[0]
    x = b.copy()
    for i in range(n):
        s = x[i]
        for p in range(indptr[i], diag[i]):
            s -= lu[p] * x[indices[p]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[p] * x[indices[p]]
        x[i] = s / lu[diag[i]]
    return x


class ILU0:
    """Incomplete LU with the sparsity pattern of ``A`` (no fill).

    Explicitly stored zeros count as pattern entries. Every row must carry
    its diagonal.
    """

    def __init__(self, A: sp.csr_matrix):
        A = sp.csr_matrix(A)
        A.sort_indices()
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        n = A.shape[0]
        diag = np.full(n, -1, dtype=np.int64)
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        hit = np.nonzero(rows == self.indices)[0]
        diag[rows[hit]] = hit
        if np.any(diag < 0):
            raise LinearSolverError(f"row {int(np.argmin(diag))} has no stored diagonal")
        self.diag = diag
        self.lu, bad = _ilu0_factor(self.indptr, self.indices, A.data.astype(float), diag)
        if bad >= 0:
            raise LinearSolverError(f"zero pivot in ILU(0) at row {bad}")

    def solve(self, b):
        return _ilu0_solve(self.indptr, self.indices, self.lu, self.diag,
                           np.ascontiguousarray(b, dtype=float))


def nested_dissection(nx: int, ny: int, leaf: int = 2):
    """Cell order for a structured nx-by-ny grid by recursive coordinate bisection.

    Each block is split across its longer side; both halves come first and the
    separating grid line last, which keeps LU fill near O(N log N).
    """
    order = []

    def split(block):
        h, w = block.shape
        if h * w <= leaf * leaf:
            order.append(block.ravel())
        elif w >= h:
            m = w // 2
            split(block[:, :m])
            split(block[:, m + 1:])
            order.append(block[:, m])
        else:
            m = h // 2
            split(block[:m])
            split(block[m + 1:])
            order.append(block[m])

    split(np.arange(nx * ny).reshape(ny, nx))
    return np.concatenate(order)


def block_permutation(cells, block: int = 2):
    """Expand a cell order to interleaved unknowns with ``block`` entries per cell."""
    cells = np.asarray(cells)
    return (block * cells[:, None] + np.arange(block)[None, :]).ravel()


class SparseLU:
    """Sparse direct LU (SuperLU) used as a GMRES preconditioner.

    With ``grid_shape=(nx, ny)`` the interleaved unknowns are reordered by
    :func:`nested_dissection` and factored with diagonal pivots; if that
    factorization breaks down, SuperLU's COLAMD ordering with partial
    pivoting is used instead. Exact for the matrix it was built from; reused
    on nearby matrices it only needs to be a good approximation.
    """

    def __init__(self, A: sp.spmatrix, grid_shape=None):
        self._perm = None
        A = sp.csr_matrix(A)
        if grid_shape is not None:
            nx, ny = grid_shape
            perm = block_permutation(nested_dissection(nx, ny), A.shape[0] // (nx * ny))
            try:
                self._lu = spla.splu(A[perm][:, perm].tocsc(), permc_spec="NATURAL",
                                     diag_pivot_thresh=0.0)
                self._perm = perm
                self.ordering = "nested_dissection"
                return
            except RuntimeError:
                pass
        try:
            self._lu = spla.splu(A.tocsc())
            self.ordering = "colamd"
        except RuntimeError as exc:
            raise LinearSolverError(f"sparse LU failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._perm is None:
            return self._lu.solve(b)
        x = np.empty_like(b)
        x[self._perm] = self._lu.solve(b[self._perm])
        return x


PRECONDITIONERS = {"ilu0": ILU0, "lu": SparseLU}


def make_preconditioner(A, kind: str = "ilu0", grid_shape=None):
    """Build the named preconditioner; ``grid_shape`` selects the grid ordering for LU."""
    if kind == "lu":
        return SparseLU(A, grid_shape)
    try:
        return PRECONDITIONERS[kind](A)
    except KeyError:
        raise ValueError(f"unknown preconditioner {kind!r}; expected one of "
                         f"{sorted(PRECONDITIONERS)}") from None


@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def gmres(A, b, precond=None, x0=None, rel_tol=1e-8, abs_tol=0.0, restart=30, max_iter=600):
    """Right-preconditioned restarted GMRES(m).

    Stops when ``||b - A x|| <= max(rel_tol ||b||, abs_tol)``; the reported
    residual is the true residual recomputed at each restart.
    """
    n = b.shape[0]
    apply_m = precond.solve if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    target = max(rel_tol * bnorm, abs_tol)
    r = b - A @ x if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    history = [beta]
    if beta <= target:
        return GMRESResult(x, 0, beta, history)
    total = 0
    m = restart
    while total < max_iter:
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            w = A @ apply_m(V[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or total >= max_iter:
                break
            if h_next == 0.0:
                break
            V[j + 1] = w / h_next
        y = np.linalg.solve(np.triu(H[:j_done, :j_done]), g[:j_done])
        x += apply_m(y @ V[:j_done])
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= target:
            return GMRESResult(x, total, beta, history)
    raise LinearSolverError(
        f"GMRES did not reach {target:.3e} in {max_iter} iterations (residual {beta:.3e})", history)
