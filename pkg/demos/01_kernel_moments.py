"""
Kernel moments and the first inner correction
=============================================

Walks through the kernel families, their moment balance and the
correction profile Phi_1 that the balance is meant to suppress.
Run with ``python demos/01_kernel_moments.py``.
"""
import numpy as np

from chic.experiments import KERNEL_PRESETS
from chic.kernel import KernelSpec, build_kernel
from chic.moments import compute_phi1, moment_report, tune_kernel

# Polynomial kernels Q_k interpolate between the mass-conserving map (Q = phi)
# and a steep odd polynomial. M1 is the static moment, J1 the dynamic one;
# C1 = M1 + J1 sets the size of the first inner correction.
for k in (1, 2, 3, 8):
    rep = moment_report(build_kernel(KernelSpec.polynomial(k)))
    print(f"{rep.kernel_label:10s} M1={rep.M1:+.4f} J1={rep.J1:+.4f} C1={rep.C1:+.4f}")

# The shaped families carry one free parameter. Brent's method on C1 finds
# the value that balances the two moments.
spec, rep = tune_kernel(KernelSpec.exp_shaped(2, -5.0), "beta2", (-8.0, -6.0))
print(f"\ntuned {spec.label}: beta2 = {spec.beta2:.6f}, C1 = {rep.C1:.1e}")

# With C1 = 0 the correction profile is small but not zero: its size is the
# sup norm of Phi_1. NMN is the exceptional kernel whose profile vanishes.
for name in ("nmn", "zhou3", "exp1", "pade"):
    kernel = build_kernel(KERNEL_PRESETS[name])
    prof = compute_phi1(kernel)
    centre = prof.phi1[np.abs(prof.z_grid) <= 3]
    print(f"{kernel.spec.label:10s} sup|Phi1| = {prof.sup_norm:.4f}  "
          f"(range on |z| <= 3: {centre.min():+.3f} .. {centre.max():+.3f})")
