"""Finite-difference solvers and numerical checks for degenerate k-Hessian and
k-curvature equations on graphs (Euclidean and hyperbolic)."""

import os as _os

# cap BLAS/OpenMP pools before numpy loads them
if _os.environ.get("DHL_THREADS", "").isdigit() and int(_os.environ["DHL_THREADS"]) >= 1:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["DHL_THREADS"])

from .errors import ArgumentError, DHLError, DomainError, NonConvergenceError, NumericError, PreconditionError

__version__ = "0.1.0"
