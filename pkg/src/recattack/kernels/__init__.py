"""Hot-loop kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the ``RECATTACK_BACKEND``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``. Both backends are bit-deterministic under a fixed seed; across
backends results agree to float rounding (dot products may differ in the
last ulp because numpy sums pairwise).

``benchmarks/bench_kernels.py`` times one against the other.
"""

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}

try:
    from . import _numba
    _BACKENDS["numba"] = _numba
except ImportError:  # pragma: no cover - numba is a hard dep, belt and braces
    _numba = None

BACKEND = os.environ.get("RECATTACK_BACKEND", "").strip().lower()
if not BACKEND:
    BACKEND = "numba" if _numba is not None else "numpy"
if BACKEND not in _BACKENDS:
    raise ImportError(
        f"RECATTACK_BACKEND={BACKEND!r} is not one of {sorted(_BACKENDS)}")

_impl = _BACKENDS[BACKEND]

bpr_mf_epoch = _impl.bpr_mf_epoch
sbpr_epoch = _impl.sbpr_epoch
sgns_epoch = _impl.sgns_epoch
csr_matvec = _impl.csr_matvec
scatter_add_rows = _impl.scatter_add_rows

__all__ = [
    "BACKEND",
    "bpr_mf_epoch",
    "sbpr_epoch",
    "sgns_epoch",
    "csr_matvec",
    "scatter_add_rows",
]
