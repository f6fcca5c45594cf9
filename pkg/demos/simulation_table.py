"""A small Monte Carlo table for one preset.

Use the CLI (``elcovadj simulate table1-sd1``) for the full 1000 replications;
this keeps the run short.
"""

from elcovadj.scenarios import preset
from elcovadj.simulation import run_experiment

rep = run_experiment(preset("table1-sd1"), reps=100, seed=1)
print(rep.to_text())
