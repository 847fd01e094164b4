"""
Two droplets through the command line
=====================================

Writes a run configuration, runs it with ``chic run`` and audits the
resulting CSV with ``chic audit``, the same way a batch job would.
"""
import tempfile
from pathlib import Path

from chic.cli import main
from chic.diagnostics import read_csv
from chic.experiments import Droplets, RunConfig

out = Path(tempfile.mkdtemp(prefix="chic-droplets-"))

# A big and a small droplet on a 2 x 1 box; the small one feeds the big one.
cfg = RunConfig(nx=100, ny=50, extents=(2.0, 1.0), epsilon_cells=2.0,
                initial=Droplets((((0.6, 0.5), 0.2), ((1.3, 0.5), 0.12))),
                t_end=0.02, tag="two-droplets", out_dir=str(out / "run"))
(out / "config.yaml").write_text(cfg.to_yaml())

# Exit codes: 0 ok, 2 bad config, 3 solver failure, 4 audit failure.
code = main(["run", str(out / "config.yaml"), "--quiet"])
print("run exit code", code)
code = main(["audit", str(out / "run" / "diagnostics.csv")])
print("audit exit code", code)

records = read_csv(out / "run" / "diagnostics.csv")
first, last = records[0], records[-1]
print(f"energy {first.energy:.5f} -> {last.energy:.5f}")
print(f"Q-mass change {last.Qmass - first.Qmass:.2e}, geometric volume drift {last.ErrV_drift:.2e}")
print("artifacts in", out / "run")
