from __future__ import annotations

from dataclasses import asdict, dataclass, fields

SCHEMES = ("picard", "convex_split")
PHI_SLOPES = ("secant", "qbar")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Time-integrator settings.

    ``scheme="picard"`` freezes every coefficient at the current iterate, so the
    converged step is fully implicit. ``scheme="convex_split"`` evaluates the
    mobility at the old level, uses the secant slope of Q between the iterate
    and the old level, and keeps the concave part of W explicit.

    ``phi_slope`` picks how Q(phi^{n+1}) is linearized in the phi rows:
    ``"qbar"`` uses Qbar(phi^k) phi^{n+1}, ``"secant"`` uses
    Q(phi^n) + Qhat'(phi^k, phi^n)(phi^{n+1} - phi^n). Both have the same fixed
    point. ``anderson_depth`` > 0 mixes that many previous Picard iterates.

    ``preconditioner`` is ``"ilu0"``, ``"lu"`` or ``"auto"``; see
    :class:`~chic.fvsolver.stepper.PreconditionerCache`.
    """

    epsilon: float
    mobility_exponent: int = 2
    beta: float = 1.02
    picard_tol: float = 1e-9
    picard_max: int = 60
    target_picard: int = 20
    dt_min: float = 1e-10
    dt_max: float = 5e-3
    gmres_restart: int = 30
    gmres_rel_tol: float = 1e-8
    gmres_max_iter: int = 600
    alpha_Qprime: float = 1e-6
    enforce_bounds: bool = True
    scheme: str = "picard"
    phi_slope: str = "secant"
    anderson_depth: int = 6
    preconditioner: str = "auto"
    refactor_iters: int = 3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.beta < 1:
            raise ConfigError(f"beta must be >= 1 for a convex splitting, got {self.beta}")
        if self.mobility_exponent < 0:
            raise ConfigError("mobility_exponent must be >= 0")
        if not 0 < self.dt_min <= self.dt_max:
            raise ConfigError("need 0 < dt_min <= dt_max")
        for name in ("picard_tol", "gmres_rel_tol", "alpha_Qprime"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.picard_max < 1 or self.target_picard < 1 or self.gmres_restart < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.phi_slope not in PHI_SLOPES:
            raise ConfigError(f"unknown phi_slope {self.phi_slope!r}; expected one of {PHI_SLOPES}")
        if self.preconditioner not in ("ilu0", "lu", "auto"):
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}")
        if self.anderson_depth < 0:
            raise ConfigError("anderson_depth must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown solver options: {sorted(extra)}")
        return cls(**d)
