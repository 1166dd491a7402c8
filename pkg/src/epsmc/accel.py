"""Numba acceleration shim.

The hot inner loops (Monte Carlo histories, oscillatory quadrature) have two
implementations: a numba @njit kernel and a vectorized pure-numpy path.  Both
produce bit-identical integer outputs for the random-walk engines because all
randomness flows through the same uint64 integer arithmetic.

Backend selection:
  * EPSMC_DISABLE_NUMBA=1 forces the numpy path (also used automatically when
    numba is not importable).
  * Functions taking a ``backend`` argument accept "auto" | "numba" | "numpy";
    "auto" resolves to numba when available and not disabled.

EPSMC_WORKERS caps the number of worker threads used to shard histories.
Results never depend on the worker count.
"""

import os

DISABLE_ENV = "EPSMC_DISABLE_NUMBA"
WORKERS_ENV = "EPSMC_WORKERS"


def _disabled() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes")


try:
    if _disabled():
        raise ImportError("numba disabled via %s" % DISABLE_ENV)
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        """Pass-through decorator when numba is unavailable or disabled."""
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def resolve_backend(backend: str = "auto") -> str:
    if backend not in ("auto", "numba", "numpy"):
        raise ValueError("backend must be one of auto|numba|numpy, got %r" % (backend,))
    if backend == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    return backend


def resolve_workers(requested=None) -> int:
    """Worker thread count: explicit request, capped by EPSMC_WORKERS (default 1)."""
    cap = os.environ.get(WORKERS_ENV, "").strip()
    cap = int(cap) if cap else 1
    if cap < 1:
        raise ValueError("%s must be >= 1" % WORKERS_ENV)
    if requested is None:
        return cap
    if requested < 1:
        raise ValueError("worker count must be >= 1")
    return min(requested, cap)
