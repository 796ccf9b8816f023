"""Numba acceleration switch.

Hot numeric kernels in this package come in two flavors: a numba ``@njit``
build and a vectorized pure-numpy fallback. The active flavor is chosen once
at import time:

* ``DRACER_NUMBA=0`` selects the numpy fallback explicitly.
* ``NUMBA_DISABLE_JIT`` (numba's own kill switch) also selects the fallback,
  since un-jitted kernel loops would be unusably slow.
* If numba is not importable the fallback is used.

``benchmarks/bench_kernels.py`` compares both paths.
"""

import os

_DISABLED = os.environ.get("DRACER_NUMBA", "1") == "0" or "NUMBA_DISABLE_JIT" in os.environ

if not _DISABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay graceful
        numba = None
else:
    numba = None

USE_NUMBA = numba is not None


def njit(func):
    """Apply ``numba.njit`` when acceleration is active, else return ``func``.

    fastmath is deliberately off: kernels must be bit-reproducible and pass
    finite-difference gradient checks.
    """
    if USE_NUMBA:
        return numba.njit(func, cache=True)
    return func
