"""Run configuration, initial conditions and experiment drivers.

A run is described by a :class:`RunConfig` that round-trips through YAML.
:func:`run_experiment` integrates it and writes ``diagnostics.csv``,
``final_state.vtk`` and ``summary.yaml`` into the output directory.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import DiagnosticsMonitor, audit_run, write_csv
from .fvsolver import Mesh2D, SolverConfig, initial_state, integrate
from .fvsolver.config import ConfigError
from .kernel import KernelSpec, build_kernel
from .moments import TABLE1_REFERENCE, table1

log = logging.getLogger(__name__)

FLOWER_SAMPLES = 4096
EPS_MIN_CELLS = 1.5
IC_MARGIN = 3.0


# ---------------------------------------------------------------- initial conditions

@dataclass(frozen=True)
class Uniform:
    value: float = 1.0
    kind = "uniform"

    def signed_distance(self, x, y):
        return None

    def bounding_boxes(self):
        return []


@dataclass(frozen=True)
class Disc:
    center: tuple = (0.5, 0.5)
    radius: float = 0.15
    kind = "disc"

    def signed_distance(self, x, y):
        return self.radius - np.hypot(x - self.center[0], y - self.center[1])

    def bounding_boxes(self):
        cx, cy = self.center
        r = self.radius
        return [(cx - r, cy - r, cx + r, cy + r)]


@dataclass(frozen=True)
class Droplets:
    """Union of discs given as ``((cx, cy), r)`` pairs."""

    discs: tuple = (((0.5, 0.5), 0.15), ((1.5, 0.5), 0.10), ((2.5, 0.5), 0.06),
                    ((3.5, 0.5), 0.03))
    kind = "droplets"

    def _members(self):
        return [Disc(tuple(c), float(r)) for c, r in self.discs]

    def signed_distance(self, x, y):
        return np.maximum.reduce([d.signed_distance(x, y) for d in self._members()])

    def bounding_boxes(self):
        return [b for d in self._members() for b in d.bounding_boxes()]


@dataclass(frozen=True)
class Flower:
    """Polar curve r(theta) = r0 + a cos(m theta) about ``center``."""

    center: tuple = (0.5, 0.5)
    r0: float = 0.25
    amplitude: float = 0.08
    petals: int = 6
    kind = "flower"

    def boundary(self, samples: int = FLOWER_SAMPLES):
        th = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        r = self.r0 + self.amplitude * np.cos(self.petals * th)
        return self.center[0] + r * np.cos(th), self.center[1] + r * np.sin(th)

    def signed_distance(self, x, y):
        bx, by = self.boundary()
        ax, ay = np.roll(bx, -1) - bx, np.roll(by, -1) - by
        seg2 = ax * ax + ay * ay
        px, py = np.ravel(x), np.ravel(y)
        best = np.full(px.shape, np.inf)
        # nearest point on each polyline segment, processed in chunks to bound memory
        for s in range(0, bx.size, 256):
            sl = slice(s, s + 256)
            dx = px[:, None] - bx[None, sl]
            dy = py[:, None] - by[None, sl]
            t = np.clip((dx * ax[sl] + dy * ay[sl]) / seg2[sl], 0.0, 1.0)
            d2 = (dx - t * ax[sl]) ** 2 + (dy - t * ay[sl]) ** 2
            best = np.minimum(best, d2.min(axis=1))
        dist = np.sqrt(best)
        rx, ry = px - self.center[0], py - self.center[1]
        inside = np.hypot(rx, ry) < self.r0 + self.amplitude * np.cos(self.petals * np.arctan2(ry, rx))
        return np.where(inside, dist, -dist).reshape(np.shape(x))

    def bounding_boxes(self):
        cx, cy = self.center
        r = self.r0 + abs(self.amplitude)
        return [(cx - r, cy - r, cx + r, cy + r)]


@dataclass(frozen=True)
class PlanarInterface:
    """Phase +1 for x < position (``axis=0``) or y < position (``axis=1``)."""

    position: float = 0.5
    axis: int = 0
    kind = "planar"

    def signed_distance(self, x, y):
        return self.position - (x if self.axis == 0 else y)

    def bounding_boxes(self):
        return []


IC_TYPES = {cls.kind: cls for cls in (Uniform, Disc, Droplets, Flower, PlanarInterface)}


def ic_to_dict(ic) -> dict:
    out = {"type": ic.kind}
    for f in fields(ic):
        v = getattr(ic, f.name)
        if f.name == "discs":
            v = [{"center": [float(c[0]), float(c[1])], "radius": float(r)} for c, r in v]
        elif isinstance(v, tuple):
            v = [float(c) for c in v]
        out[f.name] = v
    return out


def ic_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("type", None)
    if kind not in IC_TYPES:
        raise ConfigError(f"unknown initial condition type {kind!r}; expected one of {sorted(IC_TYPES)}")
    cls = IC_TYPES[kind]
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {kind} fields: {sorted(unknown)}")
    if "discs" in data:
        data["discs"] = tuple((tuple(d["center"]), float(d["radius"])) for d in data["discs"])
    if "center" in data:
        data["center"] = tuple(float(c) for c in data["center"])
    return cls(**data)


def init_field(ic, epsilon: float, mesh: Mesh2D, margin: float = IC_MARGIN):
    """Clipped profile clip(d / eps, -1, 1) of the signed distance at cell centers.

    Every shape's bounding box must keep ``margin * epsilon`` clear of the walls.
    """
    if isinstance(ic, Uniform):
        if abs(ic.value) > 1.0:
            raise ConfigError(f"uniform value {ic.value} outside [-1, 1]")
        return np.full(mesh.n_cells, float(ic.value))
    x0, y0 = mesh.origin
    lx, ly = mesh.extents
    gap = margin * epsilon
    for bx0, by0, bx1, by1 in ic.bounding_boxes():
        if bx0 - x0 < gap or by0 - y0 < gap or x0 + lx - bx1 < gap or y0 + ly - by1 < gap:
            raise ConfigError(f"{ic.kind} shape box ({bx0:g}, {by0:g})-({bx1:g}, {by1:g}) is closer "
                              f"than {margin:g} eps = {gap:g} to the domain boundary")
    X, Y = mesh.centers()
    d = ic.signed_distance(X, Y)
    return np.clip(d / epsilon, -1.0, 1.0).ravel()


# ---------------------------------------------------------------- kernels by name

# balanced shapes at their tuned parameters (Brent roots of C1, see moments.tune_kernel)
KERNEL_PRESETS = {
    "mass": KernelSpec.mass(),
    "nmn": KernelSpec.polynomial(1),
    "zhou2": KernelSpec.polynomial(2),
    "zhou3": KernelSpec.polynomial(3),
    "zhou8": KernelSpec.polynomial(8),
    "exp2": KernelSpec.exp_shaped(2, -6.950559),
    "exp1": KernelSpec.exp_shaped(1, -8.122323, endpoint_vanishing=True),
    "rational": KernelSpec.rational_ev(20.903463),
    "pade": KernelSpec.pade_ev(-0.30, 23.393696),
}


def parse_kernel(text: str) -> KernelSpec:
    """Kernel from a preset name or ``family:key=value,...``.

    Examples: ``nmn``, ``zhou8``, ``exp:k=1,beta2=-8.12,endpoint_vanishing=1``,
    ``pade_ev:p=-0.3,q=23.4``.
    """
    key = text.strip().lower().replace(" ", "").replace("-", "").replace("=", "")
    key = {"m": "mass", "zhouk2": "zhou2", "zhouk3": "zhou3", "zhouk8": "zhou8", "expk1": "exp1",
           "expk2": "exp2", "padé": "pade"}.get(key, key)
    if key in KERNEL_PRESETS:
        return KERNEL_PRESETS[key]
    family, _, rest = text.partition(":")
    data = {"family": family.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"kernel option {item!r} is not key=value")
        name = name.strip()
        if name == "endpoint_vanishing":
            data[name] = value.strip().lower() in ("1", "true", "yes")
        elif name == "k":
            data[name] = int(value)
        else:
            data[name] = float(value)
    try:
        return KernelSpec.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build kernel from {text!r} (presets: "
                          f"{', '.join(KERNEL_PRESETS)}): {exc}") from exc


# ---------------------------------------------------------------- run configuration

def paired_mobility_exponent(spec: KernelSpec) -> int:
    """Degenerate mobility exponent used with a kernel in the droplet study."""
    if spec.family == "polynomial" and spec.k in (2, 8):
        return 3
    return 2


@dataclass
class RunConfig:
    nx: int
    ny: int
    extents: tuple = (1.0, 1.0)
    epsilon: float | None = None
    epsilon_cells: float | None = 2.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec.polynomial(1))
    initial: object = field(default_factory=Flower)
    t_end: float = 0.02
    output_every: int = 1
    tag: str = "run"
    out_dir: str = "runs/run"
    solver: dict = field(default_factory=dict)
    fixed_dt: bool = False
    dt0: float | None = None
    max_steps: int | None = None
    table_nodes: int = 256

    def __post_init__(self):
        self.extents = tuple(float(v) for v in self.extents)
        if self.nx < 1 or self.ny < 1 or self.nx * self.ny < 9:
            raise ConfigError(f"mesh {self.nx}x{self.ny} too small")
        if (self.epsilon is None) == (self.epsilon_cells is None):
            raise ConfigError("give exactly one of epsilon and epsilon_cells")
        dx, dy = self.extents[0] / self.nx, self.extents[1] / self.ny
        if not math.isclose(dx, dy, rel_tol=1e-12):
            raise ConfigError(f"cells must be square, got dx={dx:g}, dy={dy:g}")
        if self.eps < EPS_MIN_CELLS * dx * (1 - 1e-12):
            raise ConfigError(f"epsilon={self.eps:g} below {EPS_MIN_CELLS} dx = {EPS_MIN_CELLS * dx:g}")
        if not self.t_end > 0:
            raise ConfigError(f"end time must be positive, got {self.t_end}")
        if self.output_every < 1:
            raise ConfigError("output_every must be >= 1")
        if "epsilon" in self.solver:
            raise ConfigError("set epsilon at the top level, not inside solver")
        self.solver_config()

    @property
    def mesh(self) -> Mesh2D:
        return Mesh2D.from_extents(self.nx, self.ny, *self.extents)

    @property
    def dx(self) -> float:
        return self.extents[0] / self.nx

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return float(self.epsilon_cells) * self.dx

    def solver_config(self) -> SolverConfig:
        opts = dict(self.solver)
        opts.setdefault("mobility_exponent", paired_mobility_exponent(self.kernel))
        try:
            return SolverConfig(epsilon=self.eps, **opts)
        except TypeError as exc:
            raise ConfigError(f"bad solver options: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "mesh": {"nx": self.nx, "ny": self.ny, "extents": list(self.extents)},
            "epsilon": self.epsilon,
            "epsilon_cells": self.epsilon_cells,
            "kernel": self.kernel.to_dict(),
            "initial": ic_to_dict(self.initial),
            "t_end": self.t_end,
            "output_every": self.output_every,
            "out_dir": self.out_dir,
            "solver": dict(self.solver),
            "fixed_dt": self.fixed_dt,
            "dt0": self.dt0,
            "max_steps": self.max_steps,
            "table_nodes": self.table_nodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run configuration must be a mapping")
        data = dict(data)
        known = {"tag", "mesh", "epsilon", "epsilon_cells", "kernel", "initial", "t_end",
                 "output_every", "out_dir", "solver", "fixed_dt", "dt0", "max_steps", "table_nodes"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run configuration keys: {sorted(unknown)}")
        try:
            mesh = data.pop("mesh")
            kw = dict(nx=int(mesh["nx"]), ny=int(mesh["ny"]),
                      extents=tuple(mesh.get("extents", (1.0, 1.0))))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"mesh needs nx and ny: {exc}") from exc
        if "epsilon" in data and data["epsilon"] is not None:
            kw["epsilon"] = float(data.pop("epsilon"))
            kw["epsilon_cells"] = data.pop("epsilon_cells", None)
        else:
            data.pop("epsilon", None)
        if "kernel" in data:
            try:
                kw["kernel"] = KernelSpec.from_dict(data.pop("kernel"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad kernel spec: {exc}") from exc
        if "initial" in data:
            kw["initial"] = ic_from_dict(data.pop("initial"))
        kw.update(data)
        return cls(**kw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable run configuration: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_yaml(Path(path).read_text())


def flower_config(kernel: KernelSpec, n: int = 200, epsilon_cells: float = 2.0,
                  t_end: float = 0.02, **kw) -> RunConfig:
    """Flower relaxation on the unit square."""
    tag = kw.pop("tag", f"flower-{kernel.label}-{epsilon_cells:g}dx".replace(" ", ""))
    return RunConfig(nx=n, ny=n, extents=(1.0, 1.0), epsilon_cells=epsilon_cells, kernel=kernel,
                     initial=Flower(), t_end=t_end, tag=tag, **kw)


def droplets_config(kernel: KernelSpec, epsilon_cells: float = 2.0, t_end: float = 0.02,
                    **kw) -> RunConfig:
    """Four-droplet coarsening on [0, 4] x [0, 1] with 400 x 100 cells."""
    tag = kw.pop("tag", f"droplets-{kernel.label}-{epsilon_cells:g}dx".replace(" ", ""))
    return RunConfig(nx=400, ny=100, extents=(4.0, 1.0), epsilon_cells=epsilon_cells,
                     kernel=kernel, initial=Droplets(), t_end=t_end, tag=tag, **kw)


# ---------------------------------------------------------------- outputs

def write_vtk(path, mesh: Mesh2D, fields_: dict, title: str = "chic state"):
    """Legacy ASCII VTK structured points with cell-centered scalars."""
    x0, y0 = mesh.origin
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1", f"ORIGIN {x0!r} {y0!r} 0",
             f"SPACING {mesh.dx!r} {mesh.dy!r} 1", f"CELL_DATA {mesh.n_cells}"]
    for name, values in fields_.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in np.asarray(values).ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RunResult:
    config: RunConfig
    records: list
    final_state: object
    verdict: object
    summary: dict
    out_dir: Path | None


def run_experiment(cfg: RunConfig, out_dir=None, write: bool = True, callback=None) -> RunResult:
    """Integrate ``cfg`` to ``t_end`` and collect diagnostics.

    The audit budget is ``1e-7 |Omega|`` plus the mass moved by clipping. With
    ``write`` the CSV, field dump, summary and the resolved config are stored
    under ``out_dir`` (default ``cfg.out_dir``).
    """
    mesh = cfg.mesh
    scfg = cfg.solver_config()
    kernel = build_kernel(cfg.kernel, node_count=cfg.table_nodes, alpha_Qprime=scfg.alpha_Qprime)
    phi0 = init_field(cfg.initial, cfg.eps, mesh)
    state = initial_state(phi0, kernel, scfg, mesh, dt=cfg.dt0)
    monitor = DiagnosticsMonitor(kernel, mesh, cfg.eps)
    monitor.record(state.phi, state.t, dt=state.dt)

    def on_step(s):
        rec = monitor(s)
        if callback is not None:
            callback(s, rec)

    start = time.perf_counter()
    state = integrate(state, kernel, scfg, mesh, cfg.t_end, on_step, fixed_dt=cfg.fixed_dt,
                      max_steps=cfg.max_steps)
    wall = time.perf_counter() - start
    recs = monitor.records
    budget = 1e-7 * mesh.area + monitor.clip_budget
    verdict = audit_run(recs, budget)
    steps = recs[1:]
    picard = sum(r.picard_iters for r in steps)
    gmres = sum(r.gmres_iters_avg * r.picard_iters for r in steps)
    summary = {
        "tag": cfg.tag,
        "kernel": cfg.kernel.label,
        "epsilon": cfg.eps,
        "t_final": float(state.t),
        "steps": len(steps),
        "final_ErrV": float(recs[-1].ErrV),
        "final_abs_ErrV_drift": float(abs(recs[-1].ErrV_drift)),
        "min_energy": float(min(r.energy for r in recs)),
        "initial_Vgeom": float(recs[0].Vgeom),
        "final_Vgeom": float(recs[-1].Vgeom),
        "max_Qmass_deviation": verdict.max_mass_deviation,
        "clip_budget": float(monitor.clip_budget),
        "audit_budget": float(budget),
        "audit": "PASS" if verdict.passed else "FAIL",
        "max_energy_rise": verdict.max_energy_rise,
        "avg_picard_iters": picard / max(len(steps), 1),
        "avg_gmres_per_picard": gmres / max(picard, 1),
        "avg_dt": float(state.t / max(len(steps), 1)),
        "wall_time_s": wall,
    }
    path = None
    if write:
        path = Path(out_dir or cfg.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        write_csv(path / "diagnostics.csv", recs, every=cfg.output_every)
        write_vtk(path / "final_state.vtk", mesh, {"phi": state.phi, "psi": state.psi}, cfg.tag)
        (path / "config.yaml").write_text(cfg.to_yaml())
        (path / "summary.yaml").write_text(yaml.safe_dump(
            {**summary, "audit_detail": verdict.to_dict()}, sort_keys=False))
    log.info("%s: %d steps, |drift| %.3e, audit %s", cfg.tag, len(steps),
             summary["final_abs_ErrV_drift"], summary["audit"])
    return RunResult(cfg, recs, state, verdict, summary, path)


# ---------------------------------------------------------------- Table 1

def regenerate_table1(rows=None) -> str:
    """Format all kernel rows next to the reference values with deltas and a verdict."""
    rows = table1() if rows is None else rows
    head = (f"{'kernel':<10} {'M1':>8} {'J1':>8} {'C1':>8} {'sup|Phi1|':>9} {'tuned':>18} "
            f"{'max|delta|':>10}  ok")
    out = [head, "-" * len(head)]
    for row in rows:
        rep = row.report
        ref = TABLE1_REFERENCE[rep.kernel_label]
        got = (rep.M1, rep.J1, rep.C1, rep.sup_phi1)
        delta = max(abs(a - b) for a, b in zip(got, ref[:4]))
        ok = delta <= 5e-3
        tuned = ""
        if row.tuned_parameter is not None:
            tuned = f"{row.tuned_parameter}={row.tuned_value:.4f}"
            ok = ok and abs(row.tuned_value - ref[4]) <= 0.05
        out.append(f"{rep.kernel_label:<10} {rep.M1:8.4f} {rep.J1:8.4f} {rep.C1:8.4f} "
                   f"{rep.sup_phi1:9.4f} {tuned:>18} {delta:10.2e}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(out)
