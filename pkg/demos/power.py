"""Asymptotic power of the treatment test with and without adjustment.

The local alternative is the scenario's own treatment effect, so the power
printed here is what a trial of size n should expect.
"""

import numpy as np

from elcovadj.inference import power_analytic
from elcovadj.scenarios import information_matrix, preset, true_beta

for name in ("table4-sd05", "table4-sd1", "table4-sd2"):
    sc = preset(name)
    h = np.sqrt(sc.n) * true_beta(sc)
    p_marg = power_analytic(information_matrix(sc, efficient=False), h, subset=[1])
    p_best = power_analytic(information_matrix(sc), h, subset=[1])
    print(f"{name}: unadjusted {p_marg:.3f}, best possible adjusted {p_best:.3f}")
