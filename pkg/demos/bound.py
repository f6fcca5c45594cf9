"""True marginal log-odds and the efficiency bound for each base preset."""

import numpy as np

from elcovadj.scenarios import efficient_vcov, marginal_vcov, preset, true_beta

for name in ("table1-sd05", "table1-sd1", "table1-sd2", "table2-sd05", "table2-sd1",
             "table3-a", "table3-b", "table3-c"):
    sc = preset(name)
    bound = np.sqrt(np.diag(efficient_vcov(sc)) / sc.n)
    marg = np.sqrt(np.diag(marginal_vcov(sc)) / sc.n)
    print(f"{name:12s} beta = {np.round(true_beta(sc), 4)}  "
          f"bound se = {np.round(bound, 4)}  unadjusted se = {np.round(marg, 4)}")
