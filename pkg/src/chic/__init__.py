"""Conservation-improved Cahn-Hilliard: kernel design, moment analysis and a finite-volume solver."""
from .kernel import (KernelError, KernelSpec, KernelTable, build_kernel, eval_Q, eval_Qbar,
                     eval_Qprime, eval_Qprime_floored)
from .moments import (AsymptoticConstants, InnerProfile, MomentReport, compute_C0, compute_C1,
                      compute_constants, compute_J1, compute_M1, compute_phi1, moment_report,
                      tune_kernel)

__version__ = "0.1.0"
