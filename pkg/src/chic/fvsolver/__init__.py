"""Finite-volume integrator for the conservation-improved Cahn-Hilliard system."""
from .assembly import (AssemblyError, BlockSystem, W, assemble_block, b_psi, d2W,
                       discrete_chain_quotient, dW, face_coefficients, mobility)
from .config import ConfigError, SolverConfig
from .linalg import (ILU0, GMRESResult, LinearSolverError, SparseLU, block_permutation, gmres,
                     make_preconditioner, nested_dissection)
from .mesh import Mesh2D, MeshError
from .stepper import (PreconditionerCache, SimState, SolverFailure, StepRejected, StepStats, TimeStepUnderflow,
                      adapt_dt, advance_step, initial_psi, initial_state, integrate, reject_dt,
                      solve_block)
