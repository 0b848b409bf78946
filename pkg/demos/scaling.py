"""Shrinking the domain by R multiplies tau by 1/R^2."""
import numpy as np

from persistlab import instability as ins
from persistlab.scenarios import analytic_scenario

scn = analytic_scenario("diag_extinction", {"a": [3.0, 3.0]})
tau = ins.compute_tau(scn, scn.grid(400)).tau
print(f"R=1      tau={tau:.5f}")
for R in (0.75, 0.5, 1 / 3):
    out = ins.scale_scenario(scn, R, tau=tau)
    t = ins.compute_tau(out, out.grid(400)).tau
    print(f"R={R:.3f}  tau={t:.5f}  predicted={out.labels['predicted_tau']:.5f}  "
          f"unstable={t > 1}")
