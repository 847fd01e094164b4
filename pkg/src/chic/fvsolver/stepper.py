"""Picard time stepping and the adaptive step controller."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..kernel import KernelTable
from .assembly import BlockSystem, assemble_block, dW
from .config import SolverConfig
from .linalg import LinearSolverError, gmres, make_preconditioner
from .mesh import Mesh2D

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    pass


class StepRejected(SolverFailure):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class TimeStepUnderflow(SolverFailure):
    pass


@dataclass
class StepStats:
    picard_iters: int = 0
    gmres_iters: int = 0
    residuals: list = field(default_factory=list)
    clip_delta: float = 0.0
    dt: float = 0.0

    @property
    def gmres_iters_avg(self) -> float:
        return self.gmres_iters / self.picard_iters if self.picard_iters else 0.0


@dataclass
class SimState:
    phi: np.ndarray
    psi: np.ndarray
    t: float = 0.0
    dt: float = 1e-7
    step_index: int = 0
    stats: StepStats | None = None


def initial_psi(phi, kernel: KernelTable, cfg: SolverConfig, mesh: Mesh2D):
    """psi = mu / Q'_alpha with mu = W'(phi)/eps - eps Lap_h phi."""
    p = np.clip(phi, -1.0, 1.0)
    mu = dW(p) / cfg.epsilon - cfg.epsilon * mesh.laplacian(p)
    return mu / np.maximum(kernel.dQ(p), cfg.alpha_Qprime)


def initial_state(phi, kernel: KernelTable, cfg: SolverConfig, mesh: Mesh2D, dt=None) -> SimState:
    phi = np.asarray(phi, dtype=float).ravel().copy()
    if phi.shape[0] != mesh.n_cells:
        raise ValueError(f"field has {phi.shape[0]} values, mesh has {mesh.n_cells} cells")
    dt = cfg.dt_min * 1e3 if dt is None else dt
    return SimState(phi, initial_psi(phi, kernel, cfg, mesh), 0.0,
                    float(np.clip(dt, cfg.dt_min, cfg.dt_max)))


def _interleave(phi, psi):
    x = np.empty(2 * phi.shape[0])
    x[0::2] = phi
    x[1::2] = psi
    return x


def solve_block(system: BlockSystem, cfg: SolverConfig, x0=None, precond=None, max_iter=None):
    """Solve the block system with preconditioned restarted GMRES.

    With a starting guess the solver works on the correction, so the
    relative tolerance applies to the defect ``rhs - A x0``. Without a
    ``precond`` an ILU(0) (``cfg.preconditioner="ilu0"``) or sparse LU is built
    from the matrix.
    Returns ``(phi, psi, gmres_iterations)``.
    """
    A = system.matrix
    if precond is None:
        precond = make_preconditioner(A, "ilu0" if cfg.preconditioner == "ilu0" else "lu")
    if x0 is None:
        x0 = np.zeros(A.shape[0])
    defect = system.rhs - A @ x0
    floor = 1e-14 * np.linalg.norm(system.rhs)
    res = gmres(A, defect, precond, rel_tol=cfg.gmres_rel_tol, abs_tol=floor,
                restart=cfg.gmres_restart, max_iter=max_iter or cfg.gmres_max_iter)
    x = x0 + res.x
    return x[0::2].copy(), x[1::2].copy(), res.iterations


class PreconditionerCache:
    """Chooses and keeps preconditioners across Picard iterates and steps.

    ``ilu0`` refactors ILU(0) for every solve. ``lu`` keeps one sparse LU
    factorization and rebuilds it once a solve needs more than
    ``refactor_iters`` GMRES iterations. ``auto`` tries a kept LU first, then a
    fresh ILU(0) capped at ``ilu_cap`` iterations, and falls back to a new LU;
    after the first ILU(0) failure it stays with LU. Iterations spent on an
    abandoned attempt are counted. With a ``mesh`` the LU uses the grid's
    nested-dissection ordering, falling back to a pivoting factorization if
    that preconditioner fails.
    """

    def __init__(self, cfg: SolverConfig, mesh: Mesh2D | None = None, ilu_cap: int = 30):
        self.cfg = cfg
        self.grid_shape = None if mesh is None else (mesh.nx, mesh.ny)
        self.ilu_cap = ilu_cap
        self.lu = None
        self.use_ilu = cfg.preconditioner in ("ilu0", "auto")
        self.factorizations = 0

    def _fresh_lu(self, A, grid_shape):
        self.lu = make_preconditioner(A, "lu", grid_shape)
        self.factorizations += 1
        return self.lu

    def solve(self, system, x0):
        cfg, A = self.cfg, system.matrix
        if cfg.preconditioner == "ilu0":
            return solve_block(system, cfg, x0, make_preconditioner(A, "ilu0"))
        spent = 0
        if self.lu is not None:
            cap = 2 * cfg.refactor_iters
            try:
                phi, psi, gi = solve_block(system, cfg, x0, self.lu, max_iter=cap)
                if gi > cfg.refactor_iters:
                    self.lu = None
                return phi, psi, gi
            except LinearSolverError:
                spent += cap
                self.lu = None
        if self.use_ilu:
            try:
                phi, psi, gi = solve_block(system, cfg, x0, make_preconditioner(A, "ilu0"),
                                           max_iter=self.ilu_cap)
                return phi, psi, gi + spent
            except LinearSolverError:
                spent += self.ilu_cap
                self.use_ilu = False
        try:
            phi, psi, gi = solve_block(system, cfg, x0, self._fresh_lu(A, self.grid_shape))
        except LinearSolverError:
            if self.grid_shape is None:
                raise
            spent += cfg.gmres_max_iter
            phi, psi, gi = solve_block(system, cfg, x0, self._fresh_lu(A, None))
        return phi, psi, gi + spent


class _Anderson:
    """Anderson mixing of Picard iterates on the phi residual.

    The psi iterate is combined with the same coefficients. Depth 0 returns
    the plain Picard update.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.f, self.g_phi, self.g_psi = [], [], []

    def __call__(self, phi_k, phi_new, psi_new):
        if self.depth == 0:
            return phi_new, psi_new
        self.f.append(phi_new - phi_k)
        self.g_phi.append(phi_new)
        self.g_psi.append(psi_new)
        if len(self.f) > self.depth + 1:
            del self.f[0], self.g_phi[0], self.g_psi[0]
        if len(self.f) < 2:
            return phi_new, psi_new
        dF = np.diff(np.array(self.f), axis=0).T
        gamma = np.linalg.lstsq(dF, self.f[-1], rcond=None)[0]
        phi = phi_new - np.diff(np.array(self.g_phi), axis=0).T @ gamma
        psi = psi_new - np.diff(np.array(self.g_psi), axis=0).T @ gamma
        return np.clip(phi, -1.0, 1.0), psi


def advance_step(state: SimState, kernel: KernelTable, cfg: SolverConfig, mesh: Mesh2D,
                 precond: PreconditionerCache | None = None):
    """One time step of length ``state.dt`` by Picard iteration.

    Each iteration freezes coefficients at phi^k, solves the block system,
    clips to [-1, 1] when bounds are enforced and measures
    r = ||phi^{n+1} - phi^k||_L1 / |Omega|. The accepted fields are the last
    solve's output, never a mixed iterate. Returns the accepted state and the
    Picard count; raises :class:`StepRejected` when the loop does not converge.
    """
    dt = state.dt
    phi_n = state.phi
    phi_k, psi_k = phi_n.copy(), state.psi.copy()
    stats = StepStats(dt=dt)
    mixer = _Anderson(cfg.anderson_depth)
    precond = precond or PreconditionerCache(cfg, mesh)
    vol = mesh.cell_volume
    for it in range(1, cfg.picard_max + 1):
        system = assemble_block(phi_n, phi_k, kernel, cfg, mesh, dt)
        try:
            phi, psi, gi = precond.solve(system, _interleave(phi_k, psi_k))
        except LinearSolverError as exc:
            raise StepRejected(f"linear solve failed at Picard iteration {it}: {exc}",
                               stats.residuals) from exc
        stats.gmres_iters += gi
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise StepRejected(f"non-finite iterate at Picard iteration {it}", stats.residuals)
        clip_delta = 0.0
        if cfg.enforce_bounds:
            clipped = np.clip(phi, -1.0, 1.0)
            # change of the linear system's conserved sum of S phi
            clip_delta = float(np.sum(system.matrix.diagonal()[0::2] * (clipped - phi)) * vol)
            phi = clipped
        r = float(np.mean(np.abs(phi - phi_k)))
        stats.residuals.append(r)
        if r < cfg.picard_tol:
            stats.picard_iters = it
            stats.clip_delta = clip_delta
            return replace(state, phi=phi, psi=psi, t=state.t + dt,
                           step_index=state.step_index + 1, stats=stats), it
        phi_k, psi_k = mixer(phi_k, phi, psi)
    raise StepRejected(f"Picard loop did not reach {cfg.picard_tol:g} in {cfg.picard_max} "
                       f"iterations (last residual {stats.residuals[-1]:.3e})", stats.residuals)


def adapt_dt(dt: float, picard_iters: int, cfg: SolverConfig) -> float:
    """Scale dt toward the target Picard count, growth clamped to [0.7, 1.3]."""
    factor = np.clip(cfg.target_picard / max(picard_iters, 1), 0.7, 1.3)
    return float(np.clip(dt * factor, cfg.dt_min, cfg.dt_max))


def reject_dt(dt: float, cfg: SolverConfig) -> float:
    if dt <= cfg.dt_min:
        raise TimeStepUnderflow(f"time step underflow: step at dt_min = {cfg.dt_min:g} rejected")
    return max(0.5 * dt, cfg.dt_min)


def integrate(state: SimState, kernel: KernelTable, cfg: SolverConfig, mesh: Mesh2D,
              t_end: float, callback=None, fixed_dt: bool = False, max_steps=None) -> SimState:
    """Advance to ``t_end``; ``callback(state)`` runs after every accepted step.

    The last step is shortened to land on ``t_end``. With ``fixed_dt`` the
    controller is bypassed except for rejections.
    """
    steps = 0
    precond = PreconditionerCache(cfg, mesh)
    while t_end - state.t > 1e-12 * max(t_end, 1.0):
        if max_steps is not None and steps >= max_steps:
            break
        dt_plan = state.dt
        dt_try = min(dt_plan, t_end - state.t)
        try:
            new, iters = advance_step(replace(state, dt=dt_try), kernel, cfg, mesh, precond)
        except StepRejected as exc:
            log.info("step %d rejected at dt=%.3e: %s", state.step_index, dt_try, exc)
            try:
                state = replace(state, dt=reject_dt(dt_try, cfg))
            except TimeStepUnderflow as under:
                raise TimeStepUnderflow(f"{under} at t={state.t:.6g}, step {state.step_index}") \
                    from exc
            continue
        next_dt = dt_plan if fixed_dt else adapt_dt(max(dt_try, cfg.dt_min), iters, cfg)
        new = replace(new, dt=next_dt)
        new.stats.dt = dt_try
        state = new
        steps += 1
        if callback is not None:
            callback(state)
    return state
