"""Volume, energy and conservation diagnostics for phase fields on a Mesh2D."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .fvsolver.assembly import W
from .fvsolver.mesh import Mesh2D
from .kernel import KernelTable

CSV_COLUMNS = ("t", "dt", "VQ", "Vgeom", "ErrV", "ErrV_drift", "energy", "Qmass",
               "picard_iters", "gmres_iters_avg")


def q_mass(phi, kernel: KernelTable, mesh: Mesh2D) -> float:
    """Discrete invariant sum_i Q(phi_i) |Omega_i|."""
    return float(np.sum(kernel.Q(np.clip(phi, -1.0, 1.0))) * mesh.cell_volume)


def q_volume(phi, kernel: KernelTable, mesh: Mesh2D) -> float:
    """Diffuse phase volume 1/2 sum_i (1 + Q(phi_i)) |Omega_i|."""
    return 0.5 * (mesh.area + q_mass(phi, kernel, mesh))


def _padded_nodes(phi, mesh: Mesh2D):
    """Cell-center values plus zero-gradient nodes on the domain boundary."""
    f = np.pad(mesh.grid(phi), 1, mode="edge")
    x0, y0 = mesh.origin
    lx, ly = mesh.extents
    xs = np.concatenate([[x0], x0 + (np.arange(mesh.nx) + 0.5) * mesh.dx, [x0 + lx]])
    ys = np.concatenate([[y0], y0 + (np.arange(mesh.ny) + 0.5) * mesh.dy, [y0 + ly]])
    return f, xs, ys


def _crossing(fa, fb):
    # fraction along a->b where the bilinear edge value vanishes; only used on sign changes
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fa != fb, fa / (fa - fb), 0.5)


def positive_area_per_quad(phi, mesh: Mesh2D):
    """Area of {phi > 0} inside every dual quad (marching squares).

    The zero level set is reconstructed by linear interpolation along quad
    edges. Ambiguous saddles are joined when the quad-center mean is positive.
    Corners with phi exactly 0 take the side of the quad-center mean (first
    nonzero corner on a tie), so the areas for phi and -phi partition every
    quad that is not identically zero.
    """
    f, xs, ys = _padded_nodes(phi, mesh)
    a, b, c, d = f[:-1, :-1], f[:-1, 1:], f[1:, 1:], f[1:, :-1]
    mean = 0.25 * (a + b + c + d)
    lean = np.sign(mean)
    for corner in (d, c, b, a):
        lean = np.where(mean == 0, np.where(corner != 0, np.sign(corner), lean), lean)
    pos = [(x > 0) | ((x == 0) & (lean > 0)) for x in (a, b, c, d)]
    x_lo, x_hi = xs[None, :-1], xs[None, 1:]
    y_lo, y_hi = ys[:-1, None], ys[1:, None]
    shape = a.shape
    corners = [(a, x_lo, y_lo), (b, x_hi, y_lo), (c, x_hi, y_hi), (d, x_lo, y_hi)]
    vx, vy, ok = [], [], []
    for i in range(4):
        fa, xa, ya = corners[i]
        fb, xb, yb = corners[(i + 1) % 4]
        pa, pb = pos[i], pos[(i + 1) % 4]
        vx.append(np.broadcast_to(xa, shape))
        vy.append(np.broadcast_to(ya, shape))
        ok.append(pa)
        s = _crossing(fa, fb)
        vx.append(xa + s * (xb - xa))
        vy.append(ya + s * (yb - ya))
        ok.append(pa != pb)
    vx, vy, ok = np.array(vx), np.array(vy), np.array(ok)
    # skipped slots repeat the previous valid vertex, which adds nothing to the shoelace sum
    last = 7 - np.argmax(ok[::-1], axis=0)
    fill_x = np.take_along_axis(vx, last[None], 0)[0]
    fill_y = np.take_along_axis(vy, last[None], 0)[0]
    for j in range(8):
        fill_x = np.where(ok[j], vx[j], fill_x)
        fill_y = np.where(ok[j], vy[j], fill_y)
        vx[j], vy[j] = fill_x, fill_y
    area = 0.5 * np.abs(np.sum(vx * np.roll(vy, -1, 0) - np.roll(vx, -1, 0) * vy, axis=0))
    area = np.where(ok.any(axis=0), area, 0.0)

    # saddles: the walk above joins both positive corners; split them when needed
    pa, pb, pc, pd = pos
    saddle = (pa == pc) & (pb == pd) & (pa != pb)
    if np.any(saddle):
        joined = (mean > 0) | ((mean == 0) & pa)
        split = saddle & ~joined
        if np.any(split):
            cx, cy = vx[1::2], vy[1::2]
            inner = 0.5 * np.abs(np.sum(cx * np.roll(cy, -1, 0) - np.roll(cx, -1, 0) * cy, axis=0))
            area = np.where(split, area - inner, area)
    return area


def geometric_volume(phi, mesh: Mesh2D) -> float:
    """Area of {phi > 0} from the sub-cell marching-squares reconstruction."""
    return float(np.sum(positive_area_per_quad(phi, mesh)))


def free_energy(phi, epsilon: float, mesh: Mesh2D) -> float:
    """E = sum W(phi)/eps |Omega_i| + eps/2 sum over interior faces of |grad phi|^2.

    Face differences match the solver's Laplacian, so wall faces carry no
    gradient.
    """
    g = mesh.grid(phi)
    bulk = np.sum(W(g)) / epsilon * mesh.cell_volume
    gx = np.sum(np.diff(g, axis=1) ** 2) * mesh.dy / mesh.dx
    gy = np.sum(np.diff(g, axis=0) ** 2) * mesh.dx / mesh.dy
    return float(bulk + 0.5 * epsilon * (gx + gy))


@dataclass
class DiagnosticsRecord:
    t: float
    dt: float
    VQ: float
    Vgeom: float
    ErrV: float
    ErrV_drift: float
    energy: float
    Qmass: float
    picard_iters: int = 0
    gmres_iters_avg: float = 0.0
    step: int = 0
    clip_delta: float = 0.0

    def csv_row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


class DiagnosticsMonitor:
    """Builds one :class:`DiagnosticsRecord` per accepted step.

    Use as the solver callback. ``clip_budget`` accumulates the absolute
    mass moved by bound clipping in accepted steps.
    """

    def __init__(self, kernel: KernelTable, mesh: Mesh2D, epsilon: float):
        self.kernel, self.mesh, self.epsilon = kernel, mesh, epsilon
        self.records: list = []
        self.clip_budget = 0.0
        self._err0 = None

    def record(self, phi, t, dt=0.0, picard_iters=0, gmres_iters_avg=0.0, step=0, clip_delta=0.0):
        vq = q_volume(phi, self.kernel, self.mesh)
        vg = geometric_volume(phi, self.mesh)
        err = vq - vg
        if self._err0 is None:
            self._err0 = err
        rec = DiagnosticsRecord(t, dt, vq, vg, err, err - self._err0,
                                free_energy(phi, self.epsilon, self.mesh),
                                q_mass(phi, self.kernel, self.mesh), picard_iters,
                                gmres_iters_avg, step, clip_delta)
        self.clip_budget += abs(clip_delta)
        self.records.append(rec)
        return rec

    def __call__(self, state):
        s = state.stats
        return self.record(state.phi, state.t, s.dt, s.picard_iters, s.gmres_iters_avg,
                           state.step_index, s.clip_delta)


def write_csv(path, records, every: int = 1):
    """Write records (every ``every``-th plus the last) with the fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        n = len(records)
        for i, rec in enumerate(records):
            if i % every == 0 or i == n - 1:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in rec.csv_row()])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
        out = []
        for i, row in enumerate(reader):
            vals = {k: float(v) for k, v in row.items()}
            vals["picard_iters"] = int(vals["picard_iters"])
            out.append(DiagnosticsRecord(**vals, step=i))
        return out


@dataclass
class AuditVerdict:
    passed: bool
    max_mass_deviation: float
    worst_mass_step: int
    budget: float
    max_energy_rise: float
    worst_energy_step: int
    energy_violations: list = field(default_factory=list)
    mass_violations: list = field(default_factory=list)

    def summary(self) -> str:
        head = "PASS" if self.passed else "FAIL"
        lines = [f"{head}: max |Qmass - Qmass0| = {self.max_mass_deviation:.3e} "
                 f"(budget {self.budget:.3e}, worst step {self.worst_mass_step}); "
                 f"max relative energy rise = {self.max_energy_rise:.3e} "
                 f"(worst step {self.worst_energy_step})"]
        if self.mass_violations:
            lines.append(f"mass budget exceeded at steps {self.mass_violations[:10]}")
        if self.energy_violations:
            lines.append(f"energy increased at steps {self.energy_violations[:10]}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def audit_run(records, budget: float, energy_rtol: float = 1e-10) -> AuditVerdict:
    """Check Q-mass stays within ``budget`` of its initial value and energy never rises.

    Energy may grow by at most ``energy_rtol * |E_0|`` between consecutive
    records. Step indices refer to record positions.
    """
    if len(records) < 2:
        raise ValueError("audit needs at least two records")
    mass = np.array([r.Qmass for r in records])
    energy = np.array([r.energy for r in records])
    dev = np.abs(mass - mass[0])
    rise = np.diff(energy) / max(abs(energy[0]), np.finfo(float).tiny)
    mass_bad = [int(i) for i in np.nonzero(dev > budget)[0]]
    energy_bad = [int(i) + 1 for i in np.nonzero(rise > energy_rtol)[0]]
    return AuditVerdict(
        passed=not mass_bad and not energy_bad,
        max_mass_deviation=float(dev.max()),
        worst_mass_step=int(dev.argmax()),
        budget=float(budget),
        max_energy_rise=float(max(rise.max(), 0.0)),
        worst_energy_step=int(rise.argmax()) + 1,
        energy_violations=energy_bad,
        mass_violations=mass_bad,
    )
