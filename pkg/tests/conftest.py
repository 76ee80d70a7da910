"""Shared test setup.

BLAS threading is pinned before numpy can load so float reductions keep a
fixed order; the determinism tests depend on it.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
