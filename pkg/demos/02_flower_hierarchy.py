"""
Conservation error of a relaxing flower
=======================================

Runs the fast flower variant (100 x 100, T = 0.005) for four kernels and
three interface widths, then prints the final geometric volume drift.
Takes a few minutes on one core.
"""
from chic.experiments import KERNEL_PRESETS, flower_config, run_experiment

kernels = ("mass", "nmn", "exp1", "pade")
widths = (2, 3, 4)

# Each run integrates the block system with adaptive steps and records the
# Q-volume, the reconstructed area of {phi > 0} and the energy per step.
drift = {}
for eps_cells in widths:
    for name in kernels:
        cfg = flower_config(KERNEL_PRESETS[name], n=100, epsilon_cells=eps_cells, t_end=0.005)
        res = run_experiment(cfg, write=False)
        drift[name, eps_cells] = res.summary["final_abs_ErrV_drift"]
        print(f"{name:5s} eps={eps_cells}dx  |drift| = {drift[name, eps_cells]:.3e}  "
              f"audit {res.summary['audit']}  {res.summary['wall_time_s']:.0f} s")

# The mass-conserving map loses the most area and gets worse with eps. The
# balanced kernels sit an order of magnitude lower.
print("\n" + "kernel".ljust(8) + "".join(f"{w}dx".rjust(12) for w in widths))
for name in kernels:
    print(name.ljust(8) + "".join(f"{drift[name, w]:12.3e}" for w in widths))
