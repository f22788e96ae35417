"""A desk-scale Monte Carlo study of size and power.

Reproduces the layout of the full rejection tables at a fraction of the
replication budget: a true-null row (size) and a false-null row (power),
each reporting the corrected and uncorrected columns.  The full-scale
reproductions live in tests/test_acceptance.py.
"""

import time

import numpy as np

from rkhstest import DgpSpec, McConfig, run_monte_carlo

studies = [
    # (label, config)
    ("size:  Lin3 data, Lin3 null, n=100", McConfig(
        dgp=DgpSpec("Lin3", 100, 10, 0.0, "equi", 1.0),
        null_hypothesis="Lin3", replicates=80, sizes=(0.10, 0.05), master_seed=101,
    )),
    ("power: LinAll data, Lin3 null, n=400", McConfig(
        dgp=DgpSpec("LinAll", 400, 10, 0.0, "geometric", 1.0),
        null_hypothesis="Lin3", replicates=60, sizes=(0.05,), master_seed=202,
    )),
    ("power: bivariate nonlinear data, linear null, n=400, snr=0.2", McConfig(
        dgp=DgpSpec("Bivariate", 400, 2, 0.0, "geometric", 0.2),
        null_hypothesis="BivLinAll", replicates=60, sizes=(0.05,), master_seed=303,
        instrument_count=100,
    )),
]

for label, config in studies:
    start = time.time()
    table = run_monte_carlo(config, n_jobs=2)
    print(f"\n{label}  ({time.time() - start:.0f}s, {config.replicates} replicates)")
    print(table.to_text(), end="")

print("\nCSV emission (first study schema):")
print(run_monte_carlo(studies[0][1], n_jobs=2).to_csv().splitlines()[0])
