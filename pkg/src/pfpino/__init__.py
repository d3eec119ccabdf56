"""Phase-field reference solvers and physics-informed Fourier neural operators."""

import os

# BLAS pools oversubscribe small FFT/solve workloads; cap them before numpy
# loads. PFPINO_THREADS wins only where the user has not already set a cap.
_threads = os.environ.get("PFPINO_THREADS")
if _threads is not None:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
