"""Uniform cell-centered Cartesian mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh2D:
    """Uniform ``nx`` by ``ny`` cell grid; fields are flat arrays indexed ``iy * nx + ix``."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.nx * self.ny < 9:
            raise MeshError(f"mesh needs at least 9 cells, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise MeshError("cell sizes must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @classmethod
    def from_extents(cls, nx: int, ny: int, lx: float, ly: float, origin=(0.0, 0.0)):
        return cls(int(nx), int(ny), lx / nx, ly / ny, origin)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def extents(self):
        return self.nx * self.dx, self.ny * self.dy

    @property
    def area(self) -> float:
        return self.n_cells * self.cell_volume

    @property
    def is_square(self) -> bool:
        return abs(self.dx - self.dy) <= 1e-12 * max(self.dx, self.dy)

    def centers(self):
        """Cell-center coordinates as two ``(ny, nx)`` arrays."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y)

    def grid(self, field):
        return np.asarray(field).reshape(self.ny, self.nx)

    def laplacian(self, field):
        """Five-point Laplacian with zero boundary face flux."""
        f = self.grid(field)
        out = np.zeros_like(f)
        gx = np.diff(f, axis=1) / self.dx ** 2
        gy = np.diff(f, axis=0) / self.dy ** 2
        out[:, :-1] += gx
        out[:, 1:] -= gx
        out[:-1, :] += gy
        out[1:, :] -= gy
        return out.ravel()
